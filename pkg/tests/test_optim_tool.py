import numpy as np
import pytest

from core.errors import DomainError
from tools.optim_tool import Adam


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        opt = Adam({"x": 0.1})
        new = opt.step({"x": np.array([1.0, -1.0])}, {"x": np.array([3.0, -0.002])})
        np.testing.assert_allclose(new["x"], [0.9, -0.9], rtol=1e-6)

    def test_minimises_quadratic(self):
        opt = Adam({"x": 0.05})
        params = {"x": np.array([3.0, -2.0])}
        for _ in range(2000):
            params = opt.step(params, {"x": 2.0 * (params["x"] - 1.0)})
        np.testing.assert_allclose(params["x"], [1.0, 1.0], atol=1e-2)

    def test_groups_share_rates(self):
        opt = Adam({"mean": 0.1, "scale": 0.01}, group_of=lambda name: name.split("_")[0])
        new = opt.step(
            {"mean_a": np.zeros(1), "mean_b": np.zeros(1), "scale_a": np.zeros(1)},
            {"mean_a": np.ones(1), "mean_b": np.ones(1), "scale_a": np.ones(1)},
        )
        assert new["mean_a"][0] == pytest.approx(-0.1)
        assert new["mean_b"][0] == pytest.approx(-0.1)
        assert new["scale_a"][0] == pytest.approx(-0.01)

    def test_decay(self):
        opt = Adam({"x": 1.0}, decay_factor=0.5, decay_every=10)
        params = {"x": np.zeros(1)}
        rates = []
        for _ in range(25):
            rates.append(opt.lr("x"))
            params = opt.step(params, {"x": np.ones(1)})
        assert rates[0] == rates[9] == 1.0
        assert rates[10] == 0.5
        assert rates[20] == 0.25

    def test_does_not_mutate_inputs(self):
        opt = Adam({"x": 0.1})
        x = np.array([1.0])
        opt.step({"x": x}, {"x": np.ones(1)})
        assert x[0] == 1.0

    def test_negative_rate(self):
        with pytest.raises(DomainError):
            Adam({"x": -0.1})
