import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.stats import norm

from core.errors import DomainError
from tools import grad_tool as G
from tools.denoiser_tool import GmmDenoiser
from tools.diffusion_tool import (
    DiagGaussian,
    bridge_posterior,
    bridge_prior,
    clamp_warnings,
    forward_conditional,
    forward_marginal,
    kl_diag,
    predict_z_te,
    prior_transition,
    reset_clamp_warnings,
    reverse_conditional,
    transition_from_eps,
)
from tools.rng_tool import substream
from tools.sampling_tool import ancestral_step, prior_draw, sampling_grid
from tools.schedule_tool import alpha_sigma, time_at_sigma, transition_coefficients


def grid_density_error(target: DiagGaussian, unnormalised) -> float:
    mean, std = float(target.mean[0]), float(target.std[0])
    grid = np.linspace(mean - 12 * std, mean + 12 * std, 20001)
    density = unnormalised(grid)
    density = density / trapezoid(density, grid)
    return float(np.max(np.abs(density - norm.pdf(grid, mean, std))) * std)


class TestDiagGaussian:
    def test_rejects_negative_std(self):
        with pytest.raises(DomainError):
            DiagGaussian(np.zeros(2), np.array([1.0, -0.1]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(DomainError):
            DiagGaussian(np.zeros(2), np.ones(3))

    def test_zero_std_allowed(self):
        g = DiagGaussian(np.ones(2), 0.0)
        np.testing.assert_allclose(g.sample(np.array([3.0, -2.0])), [1.0, 1.0])


class TestForward:
    def test_ve_marginal(self, ve):
        t = time_at_sigma(ve, 2.0)
        q = forward_marginal(ve, np.array([1.0, -1.0]), t)
        np.testing.assert_allclose(q.mean, [1.0, -1.0])
        np.testing.assert_allclose(q.std, [2.0, 2.0], rtol=1e-12)

    def test_vp_marginal(self, vp):
        t = time_at_sigma(vp, np.sqrt(0.19))
        q = forward_marginal(vp, np.array([2.0]), t)
        np.testing.assert_allclose(q.mean, [1.8], rtol=1e-12)
        np.testing.assert_allclose(q.std, [np.sqrt(0.19)], rtol=1e-12)

    def test_ve_conditional_variance(self, ve):
        s, t = time_at_sigma(ve, 1.0), time_at_sigma(ve, 2.0)
        q = forward_conditional(ve, np.zeros(1), s, t)
        np.testing.assert_allclose(q.var, [3.0], rtol=1e-12)

    def test_conditional_needs_order(self, schedule):
        with pytest.raises(DomainError):
            forward_conditional(schedule, np.zeros(1), 0.5, 0.5)


class TestReverseConditional:
    def test_ve_variance(self, ve):
        s, t = time_at_sigma(ve, 1.0), time_at_sigma(ve, 2.0)
        q = reverse_conditional(ve, np.zeros(1), np.zeros(1), s, t)
        np.testing.assert_allclose(q.var, [0.75], rtol=1e-12)

    def test_informative_endpoint(self, ve):
        q = reverse_conditional(ve, np.array([5.0]), np.array([0.3]), 1e-6, 0.9)
        np.testing.assert_allclose(q.mean, [0.3], atol=1e-5)
        assert float(q.std[0]) < 3e-3

    def test_grid_bayes(self, schedule):
        s, t, x, z_t = 0.3, 0.6, 0.7, 1.1
        a_s, sig_s = alpha_sigma(schedule, s)
        a_ts, v_ts = transition_coefficients(schedule, s, t)
        target = reverse_conditional(schedule, np.array([z_t]), np.array([x]), s, t)
        err = grid_density_error(
            target, lambda z: norm.pdf(z_t, a_ts * z, np.sqrt(v_ts)) * norm.pdf(z, a_s * x, sig_s)
        )
        assert err < 1e-6


class TestPriorTransition:
    def test_vp_eta_zero_is_deterministic(self, vp, asymmetric_prior):
        denoiser = GmmDenoiser(asymmetric_prior, vp)
        p = prior_transition(vp, denoiser, np.array([0.2, -0.3]), 0.4, 0.6, eta=0.0)
        np.testing.assert_allclose(p.std, 0.0)

    def test_ve_uses_reverse_conditional(self, ve, asymmetric_prior):
        denoiser = GmmDenoiser(asymmetric_prior, ve)
        z = np.array([0.2, -0.3])
        s, t = 0.3, 0.5
        p = prior_transition(ve, denoiser, z, s, t)
        q = reverse_conditional(ve, z, denoiser.x_hat(z, t), s, t)
        np.testing.assert_allclose(p.mean, q.mean, rtol=1e-12)
        np.testing.assert_allclose(p.std, q.std, rtol=1e-12)

    def test_eta_range(self, vp, asymmetric_prior):
        with pytest.raises(DomainError):
            prior_transition(vp, GmmDenoiser(asymmetric_prior, vp), np.zeros(2), 0.2, 0.4, eta=1.5)

    def test_ddim_coefficients_valid_at_eta_one(self, vp):
        reset_clamp_warnings()
        transition_from_eps(vp, np.zeros(1), np.zeros(1), 0.5, 0.6, eta=1.0)
        assert clamp_warnings() == 0

    @pytest.mark.parametrize("kind", ["VE", "VP"])
    def test_ancestral_chain_recovers_gaussian(self, kind, ve, vp, gaussian_prior):
        schedule = ve if kind == "VE" else vp
        denoiser = GmmDenoiser(gaussian_prior, schedule)
        n = 4000
        grid = sampling_grid(schedule, 200)
        z = prior_draw(schedule, substream(0, "test-init").standard_normal((n, 2)))
        eta = 0.0 if kind == "VE" else 1.0
        for i, (t, s) in enumerate(grid.pairs()):
            z = ancestral_step(schedule, denoiser, z, s, t, substream(0, "test-step", i).standard_normal(z.shape), eta)
        x = denoiser.x_hat(z, grid.points[-1])
        np.testing.assert_allclose(x.mean(axis=0), gaussian_prior.means[0], atol=0.06)
        np.testing.assert_allclose(x.var(axis=0), gaussian_prior.covs[0], rtol=0.12)


class TestKl:
    def test_identity(self):
        q = DiagGaussian(np.array([0.3, -1.0]), np.array([0.5, 2.0]))
        assert float(kl_diag(q, q)) == pytest.approx(0.0, abs=1e-15)

    def test_unit_shift(self):
        assert float(kl_diag(DiagGaussian(np.zeros(1), 1.0 * np.ones(1)), DiagGaussian(np.ones(1), np.ones(1)))) == pytest.approx(0.5)

    def test_monte_carlo(self):
        rng = substream(1, "test-kl")
        for _ in range(20):
            q = DiagGaussian(rng.normal(size=5), rng.uniform(0.5, 1.5, size=5))
            p = DiagGaussian(rng.normal(size=5), rng.uniform(0.5, 1.5, size=5))
            x = q.sample(rng.standard_normal((100_000, 5)))
            log_ratio = q.log_prob(x) - p.log_prob(x)
            se = log_ratio.std() / np.sqrt(x.shape[0])
            assert abs(float(kl_diag(q, p)) - log_ratio.mean()) < 3 * se + 1e-12

    def test_batched(self):
        q = DiagGaussian(np.zeros((3, 2)), np.ones((3, 2)))
        p = DiagGaussian(np.ones((3, 2)), np.ones((3, 2)))
        np.testing.assert_allclose(kl_diag(q, p), [1.0, 1.0, 1.0])

    def test_zero_reference_std(self):
        with pytest.raises(DomainError):
            kl_diag(DiagGaussian(np.zeros(1), np.ones(1)), DiagGaussian(np.zeros(1), np.zeros(1)))

    def test_gradient_through_tape(self):
        tape = G.Tape()
        mu = tape.leaf(np.array([0.4, -0.2]), "mu")
        out = kl_diag(DiagGaussian(mu, np.ones(2)), DiagGaussian(np.zeros(2), np.ones(2)))
        np.testing.assert_allclose(tape.backward(out)["mu"], [0.4, -0.2])


class TestBridge:
    def test_ve_variance(self, ve):
        te, s, t = (time_at_sigma(ve, v) for v in (1.0, 2.0, 3.0))
        q = bridge_posterior(ve, np.zeros(1), np.zeros(1), s, t, te)
        np.testing.assert_allclose(q.var, [15.0 / 8.0], rtol=1e-10)

    def test_grid_bayes(self, schedule):
        te, s, t, z_te, z_t = 0.3, 0.5, 0.7, 0.4, -0.2
        a_ts, v_ts = transition_coefficients(schedule, s, t)
        a_ste, v_ste = transition_coefficients(schedule, te, s)
        target = bridge_posterior(schedule, np.array([z_t]), np.array([z_te]), s, t, te)
        err = grid_density_error(
            target,
            lambda z: norm.pdf(z_t, a_ts * z, np.sqrt(v_ts)) * norm.pdf(z, a_ste * z_te, np.sqrt(v_ste)),
        )
        assert err < 1e-6

    def test_pinned_endpoint(self, schedule):
        te, t = 0.3, 0.7
        q = bridge_posterior(schedule, np.array([1.0]), np.array([0.25]), te + 1e-9, t, te)
        np.testing.assert_allclose(q.mean, [0.25], atol=1e-6)
        assert float(q.std[0]) < 1e-3

    def test_ordering(self, schedule):
        with pytest.raises(DomainError):
            bridge_posterior(schedule, np.zeros(1), np.zeros(1), 0.3, 0.7, 0.5)

    def test_perfect_prediction_matches_posterior(self, schedule, asymmetric_prior):
        denoiser = GmmDenoiser(asymmetric_prior, schedule)
        te, s, t = 0.3, 0.5, 0.7
        z_te = np.array([0.4, -0.1])
        eps = np.array([0.5, 1.2])
        a_tte, v_tte = transition_coefficients(schedule, te, t)
        z_t = a_tte * z_te + np.sqrt(v_tte) * eps
        np.testing.assert_allclose(predict_z_te(schedule, z_t, eps, t, te), z_te, atol=1e-12)
        prior = bridge_prior(schedule, denoiser, z_t, s, t, te, eps=eps)
        post = bridge_posterior(schedule, z_t, z_te, s, t, te)
        np.testing.assert_allclose(prior.mean, post.mean, atol=1e-12)
        assert float(kl_diag(post, prior)) == pytest.approx(0.0, abs=1e-12)

    def test_kl_nonnegative(self, schedule, asymmetric_prior):
        denoiser = GmmDenoiser(asymmetric_prior, schedule)
        rng = substream(2, "test-bridge")
        for _ in range(10):
            z_t, z_te = rng.normal(size=2), rng.normal(size=2)
            kl = kl_diag(
                bridge_posterior(schedule, z_t, z_te, 0.5, 0.7, 0.3),
                bridge_prior(schedule, denoiser, z_t, 0.5, 0.7, 0.3),
            )
            assert float(kl) >= 0.0
