import numpy as np
import pytest

from core.errors import DomainError
from tools.schedule_tool import (
    NoiseSchedule,
    ScheduleKind,
    alpha_sigma,
    edm_grid,
    edm_sigmas,
    snr,
    snr_window_times,
    time_at_sigma,
    time_at_snr,
    transition_coefficients,
)

# sigma values of the n=10, rho=7 grid between 50 and 0.002
EDM_SIGMAS_50_0002_10 = np.array(
    [
        50.0,
        26.8564495743,
        13.5770473527,
        6.3759708968,
        2.7321439604,
        1.0415654194,
        0.3402587129,
        0.0897894328,
        0.0172987050,
        0.0020000000,
    ]
)


class TestAlphaSigma:
    def test_ve_endpoint(self, ve):
        alpha, sigma = alpha_sigma(ve, ve.T)
        assert alpha == 1.0
        np.testing.assert_allclose(sigma, 50.0, rtol=1e-12)

    def test_vp_identity(self, vp):
        for t in np.linspace(vp.t_min, vp.T, 101):
            alpha, sigma = alpha_sigma(vp, t)
            assert abs(alpha**2 + sigma**2 - 1.0) < 1e-12

    def test_vp_algebra(self, vp):
        t = time_at_sigma(vp, np.sqrt(0.19))
        alpha, _ = alpha_sigma(vp, t)
        np.testing.assert_allclose(alpha, 0.9, rtol=1e-12)

    def test_vp_low_noise_limit(self, vp):
        alpha, _ = alpha_sigma(vp, 1e-9)
        assert alpha == pytest.approx(1.0, abs=1e-4)

    @pytest.mark.parametrize("t", [0.0, -0.1, 1.5])
    def test_out_of_range(self, ve, t):
        with pytest.raises(DomainError):
            alpha_sigma(ve, t)

    def test_bad_bounds(self):
        with pytest.raises(DomainError):
            NoiseSchedule.ve(sigma_min=1.0, sigma_max=0.5)
        with pytest.raises(DomainError):
            NoiseSchedule(ScheduleKind.VP, 0.01, 1.2)


class TestSnr:
    def test_ve_value(self, ve):
        assert snr(ve, time_at_sigma(ve, 2.0)) == pytest.approx(0.25, rel=1e-12)

    def test_monotone(self, ve):
        assert snr(ve, time_at_sigma(ve, np.sqrt(2.0))) > snr(ve, time_at_sigma(ve, 2.0))

    def test_strictly_decreasing(self, schedule):
        values = [snr(schedule, t) for t in np.linspace(schedule.t_min, schedule.T, 200)]
        assert np.all(np.diff(values) < 0.0)

    def test_time_at_snr_inverts(self, schedule):
        for value in (0.2, 0.35, 0.5, 3.0):
            assert snr(schedule, time_at_snr(schedule, value)) == pytest.approx(value, rel=1e-9)

    def test_window_times(self, schedule):
        times = snr_window_times(schedule, 4)
        assert np.all(np.diff(times) < 0.0)
        values = [snr(schedule, t) for t in times]
        assert values[0] == pytest.approx(0.2, rel=1e-9)
        assert values[-1] == pytest.approx(0.5, rel=1e-9)


class TestEdmGrid:
    def test_sigma_regression_fixture(self):
        np.testing.assert_allclose(edm_sigmas(50.0, 0.002, 10, 7.0), EDM_SIGMAS_50_0002_10, rtol=1e-7)

    def test_two_points_are_endpoints(self, schedule):
        grid = edm_grid(schedule, 2, 0.1, 0.9)
        assert grid.points == (0.9, 0.1)

    def test_rho_one_is_linear_in_sigma(self, ve):
        grid = edm_grid(ve, 6, 0.2, 0.8, rho=1.0)
        np.testing.assert_allclose(np.diff(grid.sigmas), np.diff(grid.sigmas)[0], rtol=1e-9)

    def test_grid_is_strictly_decreasing_and_snr_increasing(self, schedule):
        grid = edm_grid(schedule, 50, schedule.t_min, schedule.T)
        assert np.all(np.diff(grid.points) < 0.0)
        values = [snr(schedule, t) for t in grid]
        assert np.all(np.diff(values) > 0.0)

    def test_vp_identity_on_grid(self, vp):
        for t in edm_grid(vp, 20, vp.t_min, vp.T):
            alpha, sigma = alpha_sigma(vp, t)
            assert abs(alpha**2 + sigma**2 - 1.0) < 1e-12

    def test_errors(self, ve):
        with pytest.raises(DomainError):
            edm_grid(ve, 1, 0.1, 0.9)
        with pytest.raises(DomainError):
            edm_grid(ve, 5, 0.9, 0.1)


class TestTransitionCoefficients:
    def test_identity(self, schedule):
        assert transition_coefficients(schedule, 0.4, 0.4) == (1.0, 0.0)

    def test_ve_variance(self, ve):
        s, t = time_at_sigma(ve, 1.0), time_at_sigma(ve, 2.0)
        a, var = transition_coefficients(ve, s, t)
        assert a == 1.0
        assert var == pytest.approx(3.0, rel=1e-12)

    def test_composition(self, schedule):
        rng = np.random.default_rng(0)
        for _ in range(100):
            s, t = np.sort(rng.uniform(schedule.t_min, schedule.T, 2))
            a_s, sig_s = alpha_sigma(schedule, s)
            a_t, sig_t = alpha_sigma(schedule, t)
            a_ts, v_ts = transition_coefficients(schedule, s, t)
            assert abs(a_ts * a_s - a_t) < 1e-12
            assert abs(a_ts**2 * sig_s**2 + v_ts - sig_t**2) < 1e-12 * max(1.0, sig_t**2)

    def test_inverted_order(self, schedule):
        with pytest.raises(DomainError):
            transition_coefficients(schedule, 0.6, 0.3)
