# Posterior-fidelity metrics
"""
tools.metrics_tool

Scores a sample set against the exact posterior (mode frequencies, moments,
energy distance to oracle draws) and against the observation (residual MSE,
PSNR against the ground truth).
"""

from __future__ import annotations

from typing import Tuple

import numpy as np
from scipy.spatial.distance import cdist

from core.errors import DomainError
from tools.gmm_tool import GmmPosterior, Mixture, sample
from tools.operator_tool import MeasurementOp
from tools.rng_tool import substream


def _as_samples(samples: np.ndarray, what: str = "samples") -> np.ndarray:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0 or samples.size == 0:
        raise DomainError(f"{what} are empty")
    return samples


def mode_coverage(samples: np.ndarray, truth: Mixture) -> Tuple[np.ndarray, float]:
    """Empirical max-responsibility frequencies and their TV distance to the true weights."""
    samples = _as_samples(samples)
    labels = truth.assign(samples)
    freqs = np.bincount(labels, minlength=truth.n_components) / samples.shape[0]
    return freqs, 0.5 * float(np.abs(freqs - truth.weights).sum())


def moment_error(samples: np.ndarray, truth: Mixture) -> Tuple[float, float]:
    """Euclidean mean error and Frobenius covariance error (population covariance)."""
    samples = _as_samples(samples)
    mean_err = float(np.linalg.norm(samples.mean(axis=0) - truth.mean()))
    cov = np.atleast_2d(np.cov(samples, rowvar=False, ddof=0))
    cov_err = float(np.linalg.norm(cov - truth.covariance(), ord="fro"))
    return mean_err, cov_err


def energy_distance(samples_a: np.ndarray, samples_b: np.ndarray) -> float:
    """2 E||A - B|| - E||A - A'|| - E||B - B'|| (V-statistic, >= 0)."""
    a = _as_samples(samples_a, "first sample set")
    b = _as_samples(samples_b, "second sample set")
    value = 2.0 * cdist(a, b).mean() - cdist(a, a).mean() - cdist(b, b).mean()
    return max(float(value), 0.0)


def energy_test(samples_a: np.ndarray, samples_b: np.ndarray, n_perm: int = 500, seed: int = 0) -> Tuple[float, float]:
    """Energy distance and its permutation p-value."""
    a = _as_samples(samples_a, "first sample set")
    b = _as_samples(samples_b, "second sample set")
    pooled = np.vstack([a, b])
    dist = cdist(pooled, pooled)
    n_a, n = a.shape[0], pooled.shape[0]

    def stat(idx: np.ndarray) -> float:
        ia, ib = idx[:n_a], idx[n_a:]
        return (
            2.0 * dist[np.ix_(ia, ib)].mean()
            - dist[np.ix_(ia, ia)].mean()
            - dist[np.ix_(ib, ib)].mean()
        )

    rng = substream(seed, "energy-test")
    observed = stat(np.arange(n))
    perms = np.array([stat(rng.permutation(n)) for _ in range(n_perm)])
    pvalue = (np.sum(perms >= observed) + 1) / (n_perm + 1)
    return max(float(observed), 0.0), float(pvalue)


def observed_mse(samples: np.ndarray, op: MeasurementOp, y: np.ndarray) -> float:
    """Mean over samples of ||y - f(x)||^2 / dim(y)."""
    samples = _as_samples(samples)
    if op.out_dim == 0:
        return 0.0
    residual = op.apply(samples) - np.asarray(y, dtype=float)
    return float(np.mean(np.sum(residual**2, axis=1) / op.out_dim))


def psnr(samples: np.ndarray, x_true: np.ndarray, data_range: float) -> float:
    """Mean PSNR (dB) of samples against the ground truth."""
    samples = _as_samples(samples)
    if data_range <= 0.0:
        raise DomainError(f"data range must be positive, got {data_range}")
    mse = np.mean((samples - np.asarray(x_true, dtype=float)) ** 2, axis=1)
    mse = np.maximum(mse, 1e-300)
    return float(np.mean(10.0 * np.log10(data_range**2 / mse)))


def oracle_samples(truth: GmmPosterior, n: int, seed: int) -> np.ndarray:
    """Reference draws from the exact posterior on their own substream."""
    return sample(truth, n, seed, stream="oracle")
