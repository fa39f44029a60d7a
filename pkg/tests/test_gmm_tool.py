import numpy as np
import pytest

from core.errors import DomainError
from tools.gmm_tool import GmmPosterior, GmmPrior, exact_posterior, marginal_at, sample
from tools.operator_tool import MeasurementOp
from tools.schedule_tool import alpha_sigma


class TestGmmPrior:
    def test_isotropic_covs_expand(self):
        prior = GmmPrior(np.array([0.5, 0.5]), np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([0.3, 0.7]))
        np.testing.assert_allclose(prior.covs, [[0.3, 0.3], [0.7, 0.7]])

    @pytest.mark.parametrize(
        "weights,means,covs",
        [
            ([0.6, 0.6], [[0.0], [1.0]], [[1.0], [1.0]]),
            ([-0.5, 1.5], [[0.0], [1.0]], [[1.0], [1.0]]),
            ([1.0], [[0.0, 0.0]], [[1.0, 0.0]]),
            ([0.5, 0.5], [[0.0, 0.0]], [[1.0, 1.0]]),
        ],
    )
    def test_invalid_components(self, weights, means, covs):
        with pytest.raises(DomainError):
            GmmPrior(np.array(weights), np.array(means), np.array(covs))

    def test_moments(self, bimodal_prior):
        np.testing.assert_allclose(bimodal_prior.mean(), [0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(bimodal_prior.covariance(), [[4.25, 0.0], [0.0, 0.25]])

    def test_dict_round_trip(self, asymmetric_prior):
        again = GmmPrior.from_dict(asymmetric_prior.to_dict())
        np.testing.assert_array_equal(again.means, asymmetric_prior.means)
        np.testing.assert_array_equal(again.covs, asymmetric_prior.covs)


class TestExactPosterior:
    def test_single_component_conditioning(self, gaussian_prior):
        op = MeasurementOp.masking(np.array([1, 0]), 0.5)
        post = exact_posterior(gaussian_prior, op, np.array([1.5]))
        gain = 0.4 / (0.4 + 0.25)
        np.testing.assert_allclose(post.weights, [1.0])
        np.testing.assert_allclose(post.means[0], [0.5 + gain * 1.0, -1.0])
        np.testing.assert_allclose(post.covs[0], [[0.4 * (1 - gain), 0.0], [0.0, 0.9]], atol=1e-15)

    def test_symmetric_observation_keeps_both_modes(self, bimodal_prior, second_coord_mask):
        post = exact_posterior(bimodal_prior, second_coord_mask, np.array([0.0]))
        np.testing.assert_allclose(post.weights, [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(post.means[:, 0], [-2.0, 2.0])

    def test_informative_observation_selects_mode(self, separated_prior, second_coord_mask):
        post = exact_posterior(separated_prior, second_coord_mask, np.array([2.0]))
        assert post.weights[1] > 1.0 - 1e-12
        np.testing.assert_allclose(post.means[1], [2.0, 2.0], atol=1e-12)

    def test_blur_couples_coordinates(self, asymmetric_prior):
        op = MeasurementOp.blur(2, 3, 1.0, 0.1)
        post = exact_posterior(asymmetric_prior, op, np.array([0.2, -0.1]))
        assert isinstance(post, GmmPosterior)
        assert np.any(np.abs(post.covs[:, 0, 1]) > 1e-6)
        np.testing.assert_allclose(post.covs, np.transpose(post.covs, (0, 2, 1)))

    def test_matches_bayes_on_grid(self, asymmetric_prior):
        op = MeasurementOp.masking(np.array([1, 0]), 0.3)
        y = np.array([0.4])
        post = exact_posterior(asymmetric_prior, op, y)
        grid = np.stack(np.meshgrid(np.linspace(-4, 4, 161), np.linspace(-4, 4, 161)), axis=-1).reshape(-1, 2)
        log_p = asymmetric_prior.log_density(grid) + op.log_likelihood(y, grid)
        w = np.exp(log_p - log_p.max())
        w /= w.sum()
        np.testing.assert_allclose(w @ grid, post.mean(), atol=1e-4)

    def test_tiny_noise_identity_mask(self):
        prior = GmmPrior(np.array([1.0]), np.zeros((1, 3)), np.ones((1, 3)))
        op = MeasurementOp.masking(np.ones(3), 1e-9)
        y = np.array([0.3, -1.2, 2.0])
        post = exact_posterior(prior, op, y)
        np.testing.assert_allclose(post.means[0], y, atol=1e-12)
        diag = np.diag(post.covs[0])
        assert np.all(diag > 0.0)
        np.testing.assert_allclose(diag, 1e-18, rtol=1e-6)
        draws = sample(post, 100, seed=0)
        np.testing.assert_allclose(draws, np.broadcast_to(y, draws.shape), atol=1e-7)

    def test_tiny_noise_keeps_unobserved_spread(self, bimodal_prior):
        op = MeasurementOp.masking(np.array([0, 1]), 1e-9)
        post = exact_posterior(bimodal_prior, op, np.array([0.1]))
        np.testing.assert_allclose(post.weights, [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(post.covs[:, 0, 0], [0.25, 0.25])
        assert np.all(post.covs[:, 1, 1] > 0.0)
        np.testing.assert_allclose(post.means[:, 1], [0.1, 0.1], atol=1e-12)

    def test_rejects_noiseless(self, gaussian_prior):
        with pytest.raises(DomainError):
            exact_posterior(gaussian_prior, MeasurementOp.masking(np.array([1, 0]), 0.0), np.array([0.0]))


class TestSample:
    def test_deterministic_under_seed(self, asymmetric_prior):
        np.testing.assert_array_equal(sample(asymmetric_prior, 100, 3), sample(asymmetric_prior, 100, 3))
        assert not np.array_equal(sample(asymmetric_prior, 100, 3), sample(asymmetric_prior, 100, 4))

    def test_streams_are_independent(self, asymmetric_prior):
        assert not np.array_equal(sample(asymmetric_prior, 10, 0, stream="a"), sample(asymmetric_prior, 10, 0, stream="b"))

    def test_moments(self, asymmetric_prior):
        draws = sample(asymmetric_prior, 100_000, 0)
        np.testing.assert_allclose(draws.mean(axis=0), asymmetric_prior.mean(), atol=0.02)
        np.testing.assert_allclose(np.cov(draws, rowvar=False), asymmetric_prior.covariance(), atol=0.03)

    def test_empty_and_negative(self, asymmetric_prior):
        assert sample(asymmetric_prior, 0, 0).shape == (0, 2)
        with pytest.raises(DomainError):
            sample(asymmetric_prior, -1, 0)


class TestMarginalAt:
    def test_noise_dominates_at_top(self, asymmetric_prior, ve):
        marginal = marginal_at(asymmetric_prior, ve, ve.T)
        _, sigma = alpha_sigma(ve, ve.T)
        np.testing.assert_allclose(marginal.covs, sigma**2, rtol=1e-3)

    def test_near_data_at_bottom(self, asymmetric_prior, schedule):
        marginal = marginal_at(asymmetric_prior, schedule, schedule.t_min)
        np.testing.assert_allclose(marginal.means, asymmetric_prior.means, rtol=1e-3, atol=1e-3)
        np.testing.assert_allclose(marginal.covs, asymmetric_prior.covs, rtol=1e-2, atol=1e-3)
