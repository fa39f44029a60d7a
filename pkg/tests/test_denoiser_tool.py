import numpy as np
import pytest

from conftest import central_diff, rel_err
from core.errors import DomainError
from tools import grad_tool as G
from tools.denoiser_tool import GmmDenoiser, MlpDenoiser, gmm_eps_hat, gmm_vjp, train_mlp
from tools.gmm_tool import GmmPrior, sample
from tools.rng_tool import substream
from tools.schedule_tool import NoiseSchedule, alpha_sigma

# At sigma = 0.002 the point-mass target (z - x0) / sigma has slope 500 in z, which a
# 64-wide MLP cannot fit in 5000 steps; the held-out checks use sigma in [0.5, 5].
NARROW = NoiseSchedule.ve(sigma_min=0.5, sigma_max=5.0)


def held_out_mse(denoiser, target, n=512, seed=7):
    rng = substream(seed, "held-out")
    grid = np.linspace(denoiser.schedule.t_min, denoiser.schedule.T, 64)
    errs = []
    for t in grid:
        alpha, sigma = alpha_sigma(denoiser.schedule, t)
        x = target["sample"](rng, n)
        eps = rng.standard_normal(x.shape)
        z = alpha * x + sigma * eps
        errs.append(np.mean(np.sum((denoiser.eps_hat(z, t) - target["eps"](z, t)) ** 2, axis=1)))
    return float(np.mean(errs))


class TestGmmDenoiser:
    def test_matches_importance_sampling(self, asymmetric_prior, schedule):
        t = 0.6
        alpha, sigma = alpha_sigma(schedule, t)
        z = np.array([0.4, -0.3])
        x = sample(asymmetric_prior, 200_000, 0, stream="test-is")
        log_w = -0.5 * np.sum((z - alpha * x) ** 2, axis=1) / sigma**2
        w = np.exp(log_w - log_w.max())
        w /= w.sum()
        estimate = w @ x
        se = np.sqrt(w**2 @ (x - estimate) ** 2)
        exact = GmmDenoiser(asymmetric_prior, schedule).posterior_mean(z, t)
        assert np.all(np.abs(exact - estimate) < 4 * se + 1e-12)

    def test_eps_and_posterior_mean_agree(self, exact_denoiser):
        t = 0.4
        alpha, sigma = alpha_sigma(exact_denoiser.schedule, t)
        z = np.array([[0.1, 0.2], [-1.0, 0.7]])
        x_hat = exact_denoiser.x_hat(z, t)
        np.testing.assert_allclose(x_hat, exact_denoiser.posterior_mean(z, t), atol=1e-12)
        np.testing.assert_allclose(gmm_eps_hat(exact_denoiser.prior, exact_denoiser.schedule, z, t), (z - alpha * x_hat) / sigma)

    def test_single_gaussian_closed_form(self, ve):
        prior = GmmPrior(np.array([1.0]), np.array([[1.0, -2.0]]), np.array([[0.5, 2.0]]))
        t = 0.5
        _, sigma = alpha_sigma(ve, t)
        z = np.array([0.3, 0.3])
        expected = prior.means[0] + prior.covs[0] / (prior.covs[0] + sigma**2) * (z - prior.means[0])
        np.testing.assert_allclose(GmmDenoiser(prior, ve).posterior_mean(z, t), expected, rtol=1e-12)

    def test_vjp_matches_finite_differences(self, exact_denoiser):
        z, c, t = np.array([0.3, -0.4]), np.array([0.7, -1.2]), 0.4
        fd = central_diff(lambda v: float(c @ exact_denoiser.eps_hat(v, t)), z)
        assert rel_err(exact_denoiser.vjp(z, t, c), fd) < 1e-5
        np.testing.assert_allclose(gmm_vjp(exact_denoiser.prior, exact_denoiser.schedule, z, t, c), exact_denoiser.vjp(z, t, c))

    def test_batched_vjp(self, exact_denoiser):
        z = np.array([[0.3, -0.4], [1.0, 1.5], [-2.0, 0.1]])
        c = np.array([[0.7, -1.2], [0.0, 1.0], [1.0, 1.0]])
        batched = exact_denoiser.vjp(z, 0.3, c)
        for i in range(3):
            np.testing.assert_allclose(batched[i], exact_denoiser.vjp(z[i], 0.3, c[i]), rtol=1e-12)

    def test_eps_records_on_tape(self, exact_denoiser):
        tape = G.Tape()
        z = tape.leaf(np.array([0.2, 0.5]), "z")
        out = exact_denoiser.eps(z, 0.5)
        c = np.array([1.0, -2.0])
        grads = tape.backward(G.sum_(out * c))
        np.testing.assert_allclose(grads["z"], exact_denoiser.vjp(z.value, 0.5, c))


class TestCallCounter:
    def test_counts_batched_evaluations_once(self, exact_denoiser):
        counted = exact_denoiser.with_counter()
        counted.eps_hat(np.zeros((50, 2)), 0.5)
        counted.x_hat(np.zeros(2), 0.5)
        counted.vjp(np.zeros(2), 0.5, np.ones(2))
        assert counted.calls == 2

    def test_with_counter_is_independent(self, exact_denoiser):
        a, b = exact_denoiser.with_counter(), exact_denoiser.with_counter()
        a.eps_hat(np.zeros(2), 0.5)
        assert a.calls == 1 and b.calls == 0
        a.reset_calls()
        assert a.calls == 0


class TestMlpDenoiser:
    def test_vjp_matches_finite_differences(self, ve):
        mlp = MlpDenoiser(3, ve, hidden=(16, 16), seed=3)
        z, c, t = np.array([0.3, -0.4, 1.1]), np.array([0.7, -1.2, 0.5]), 0.35
        fd = central_diff(lambda v: float(c @ mlp.eps_hat(v, t)), z)
        assert rel_err(mlp.vjp(z, t, c), fd) < 1e-5

    def test_parameter_gradients(self, ve):
        mlp = MlpDenoiser(2, ve, hidden=(8,), seed=1)
        rng = substream(0, "test-mlp")
        x, noise, t = rng.normal(size=(16, 2)), rng.normal(size=(16, 2)), 0.5
        _, grads = mlp.loss_and_grads(x, noise, t)
        original = {k: v.copy() for k, v in mlp.params.items()}

        def loss_with(name, value):
            mlp.params = {**original, name: value}
            return mlp.loss_and_grads(x, noise, t)[0]

        for name in ("W0", "b0", "W1"):
            fd = central_diff(lambda v: loss_with(name, v), original[name])
            assert rel_err(grads[name], fd) < 1e-5
        mlp.params = original

    def test_rejects_odd_time_features(self, ve):
        with pytest.raises(DomainError):
            MlpDenoiser(2, ve, time_features=5)

    def test_training_data_dimension(self, ve):
        with pytest.raises(DomainError):
            train_mlp(MlpDenoiser(2, ve, hidden=(4,)), np.zeros((10, 3)), ve, steps=1)

    def test_zero_steps_leave_params_unchanged(self, ve):
        mlp = MlpDenoiser(2, ve, hidden=(8,), seed=3)
        before = {name: value.copy() for name, value in mlp.params.items()}
        train_mlp(mlp, np.ones((4, 2)), ve, steps=0)
        assert set(mlp.params) == set(before)
        for name, value in before.items():
            np.testing.assert_array_equal(mlp.params[name], value)
        assert len(mlp.loss_trace) == 0

    def test_schedule_mismatch(self, ve, vp):
        with pytest.raises(DomainError):
            train_mlp(MlpDenoiser(2, ve, hidden=(4,)), np.zeros((10, 2)), vp, steps=1)

    def test_point_mass_training(self):
        x0 = np.array([1.0, -0.5])
        target = {
            "sample": lambda rng, n: np.tile(x0, (n, 1)),
            "eps": lambda z, t: (z - alpha_sigma(NARROW, t)[0] * x0) / alpha_sigma(NARROW, t)[1],
        }
        mlp = MlpDenoiser(2, NARROW, hidden=(64, 64), seed=0)
        initial = held_out_mse(mlp, target)
        train_mlp(mlp, x0[None, :], NARROW, steps=5000, lr=1e-3, batch=128, seed=0)
        assert held_out_mse(mlp, target) < 0.1 * initial
        trace = mlp.loss_trace
        assert list(trace.columns) == ["step", "t", "loss"]
        assert trace["loss"].iloc[-200:].mean() < 0.1 * trace["loss"].iloc[:200].mean()

    @pytest.mark.slow
    def test_standard_normal_matches_closed_form(self):
        prior = GmmPrior(np.array([1.0]), np.zeros((1, 2)), np.ones((1, 2)))
        exact = GmmDenoiser(prior, NARROW)
        target = {"sample": lambda rng, n: rng.standard_normal((n, 2)), "eps": exact.eps_hat}
        mlp = MlpDenoiser(2, NARROW, hidden=(64, 64), seed=0)
        data = sample(prior, 4096, 0, stream="training-data")
        train_mlp(mlp, data, NARROW, steps=5000, lr=1e-3, batch=128, seed=0)
        assert held_out_mse(mlp, target) < 0.05
