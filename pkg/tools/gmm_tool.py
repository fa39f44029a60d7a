# Gaussian-mixture prior and its exact posterior
"""
tools.gmm_tool

GmmPrior is the exactly solvable data distribution (diagonal components).
Under a linear-Gaussian measurement y = A x + v each component updates in
closed form (Kalman-style gain) and the mixture weights pick up the
component evidence N(y; A m_k, A C_k A^T + sigma_v^2 I). The resulting
GmmPosterior carries full covariances since blur and downsample couple
coordinates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List

import numpy as np
from scipy import linalg
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from core.errors import DomainError
from tools.rng_tool import substream
from tools.schedule_tool import NoiseSchedule, alpha_sigma

if TYPE_CHECKING:
    from tools.operator_tool import MeasurementOp

logger = logging.getLogger(__name__)

_WEIGHT_TOL = 1e-12


def _check_weights(weights: np.ndarray) -> None:
    if weights.ndim != 1 or weights.size < 1:
        raise DomainError("weights must be a nonempty vector")
    if np.any(weights < 0.0) or abs(weights.sum() - 1.0) > _WEIGHT_TOL * max(1, weights.size):
        raise DomainError(f"weights must be a probability vector, got {weights.tolist()}")


class Mixture:
    """Shared density, moment and sampling code over full covariances."""

    weights: np.ndarray
    means: np.ndarray

    def full_covs(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @property
    def n_components(self) -> int:
        return int(self.weights.shape[0])

    def component_log_densities(self, x: np.ndarray) -> np.ndarray:
        """log w_k + log N(x; m_k, C_k), shape (n, K)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        covs = self.full_covs()
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        cols = [
            np.atleast_1d(multivariate_normal.logpdf(x, mean=self.means[k], cov=covs[k], allow_singular=True))
            for k in range(self.n_components)
        ]
        return np.stack(cols, axis=1) + log_w

    def log_density(self, x: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_log_densities(x), axis=1)

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        logs = self.component_log_densities(x)
        return np.exp(logs - logsumexp(logs, axis=1, keepdims=True))

    def assign(self, x: np.ndarray) -> np.ndarray:
        """Index of the max-responsibility component for each row."""
        return np.argmax(self.component_log_densities(x), axis=1)

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        """Law of total covariance."""
        mu = self.mean()
        centered = self.means - mu
        within = np.einsum("k,kij->ij", self.weights, self.full_covs())
        between = np.einsum("k,ki,kj->ij", self.weights, centered, centered)
        return within + between


@dataclass(frozen=True, eq=False)
class GmmPrior(Mixture):
    """Mixture of diagonal Gaussians: weights (K,), means (K, d), covs (K, d)."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=float)
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float)
        if covs.ndim == 1 and covs.shape[0] == weights.shape[0]:
            # one isotropic variance per component
            covs = np.repeat(covs[:, None], means.shape[1], axis=1)
        _check_weights(weights)
        if means.shape[0] != weights.shape[0] or covs.shape != means.shape:
            raise DomainError(
                f"component shapes disagree: weights {weights.shape}, means {means.shape}, covs {covs.shape}"
            )
        if np.any(covs <= 0.0):
            raise DomainError("all covariance entries must be positive")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)

    def full_covs(self) -> np.ndarray:
        return np.stack([np.diag(c) for c in self.covs])

    def to_dict(self) -> Dict[str, List]:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, List]) -> "GmmPrior":
        return cls(np.asarray(data["weights"]), np.asarray(data["means"]), np.asarray(data["covs"]))


@dataclass(frozen=True, eq=False)
class GmmPosterior(Mixture):
    """Mixture with full covariances: weights (K,), means (K, d), covs (K, d, d)."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=float)
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float)
        _check_weights(weights)
        k, d = means.shape
        if weights.shape[0] != k or covs.shape != (k, d, d):
            raise DomainError(
                f"component shapes disagree: weights {weights.shape}, means {means.shape}, covs {covs.shape}"
            )
        if np.any(np.einsum("kii->ki", covs) <= 0.0):
            raise DomainError("all covariance diagonals must be positive")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)

    def full_covs(self) -> np.ndarray:
        return self.covs

    def to_dict(self) -> Dict[str, List]:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
        }


def exact_posterior(prior: GmmPrior, op: "MeasurementOp", y: np.ndarray) -> GmmPosterior:
    """Conjugate update of every component under y = A x + v, v ~ N(0, sigma_v^2 I)."""
    if op.sigma_v <= 0.0:
        raise DomainError("exact posterior needs sigma_v > 0")
    y = np.asarray(y, dtype=float)
    a = op.matrix()
    if a.shape[0] == 0:
        return GmmPosterior(prior.weights, prior.means, prior.full_covs())
    noise = op.sigma_v**2 * np.eye(a.shape[0])

    log_w = np.empty(prior.n_components)
    means = np.empty_like(prior.means)
    covs = np.empty((prior.n_components, prior.dim, prior.dim))
    for k in range(prior.n_components):
        c = np.diag(prior.covs[k])
        pred = a @ prior.means[k]
        s = a @ c @ a.T + noise
        factor = linalg.cho_factor(s, lower=True)
        gain = linalg.cho_solve(factor, a @ c).T  # C A^T S^-1
        means[k] = prior.means[k] + gain @ (y - pred)
        # Joseph form: a sum of PSD terms, so tiny sigma_v cannot cancel the diagonal
        resid = np.eye(prior.dim) - gain @ a
        post = (resid * prior.covs[k]) @ resid.T + op.sigma_v**2 * (gain @ gain.T)
        covs[k] = 0.5 * (post + post.T)
        log_w[k] = np.log(prior.weights[k]) + multivariate_normal.logpdf(y, mean=pred, cov=s)

    weights = np.exp(log_w - logsumexp(log_w))
    weights = weights / weights.sum()
    logger.debug("Exact posterior weights %s", np.round(weights, 6).tolist())
    return GmmPosterior(weights, means, covs)


def sample(dist: Mixture, n: int, seed: int, stream: str = "gmm-sample") -> np.ndarray:
    """n draws (n, d): categorical component, then Gaussian; deterministic under seed."""
    if n < 0:
        raise DomainError(f"sample count must be nonnegative, got {n}")
    if n == 0:
        return np.zeros((0, dist.dim))
    rng = substream(seed, stream)
    components = rng.choice(dist.n_components, size=n, p=dist.weights)
    noise = rng.standard_normal((n, dist.dim))
    chols = np.stack([linalg.cholesky(c, lower=True) for c in dist.full_covs()])
    return dist.means[components] + np.einsum("nij,nj->ni", chols[components], noise)


def marginal_at(prior: GmmPrior, schedule: NoiseSchedule, t: float) -> GmmPrior:
    """Push the prior through q(z_t | x): N(alpha m_k, alpha^2 C_k + sigma^2 I)."""
    alpha, sigma = alpha_sigma(schedule, t)
    return GmmPrior(prior.weights, alpha * prior.means, alpha**2 * prior.covs + sigma**2)
