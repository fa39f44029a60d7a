# Shared ancestral and likelihood-guided sampling steps
"""
tools.sampling_tool

Building blocks shared by VIPaint phase 2 and the sampling baselines:
the default sampling grid, prior draws at the top of the grid, one
ancestral step, and the likelihood-guidance gradient
grad_z ||y - f(x_hat(z_t, t))||^2 pulled back through the denoiser VJP.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from core.config import DEFAULT_RHO
from core.errors import DomainError
from tools.denoiser_tool import Denoiser
from tools.diffusion_tool import transition_from_eps
from tools.operator_tool import MeasurementOp, ObsModel
from tools.schedule_tool import NoiseSchedule, TimeGrid, alpha_sigma, edm_grid

logger = logging.getLogger(__name__)


def sampling_grid(
    schedule: NoiseSchedule,
    n_steps: int,
    t_hi: Optional[float] = None,
    t_lo: Optional[float] = None,
    rho: float = DEFAULT_RHO,
) -> TimeGrid:
    """EDM grid with n_steps transitions from t_hi (default T) down to t_lo (default t_min)."""
    if n_steps < 1:
        raise DomainError(f"need at least one sampling step, got {n_steps}")
    t_hi = schedule.T if t_hi is None else t_hi
    t_lo = schedule.t_min if t_lo is None else t_lo
    return edm_grid(schedule, n_steps + 1, t_lo, t_hi, rho)


def prior_draw(schedule: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """z_T ~ N(0, sigma_T^2 I)."""
    _, sigma = alpha_sigma(schedule, schedule.T)
    return sigma * np.asarray(noise, dtype=float)


def guidance_gradient(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    op: MeasurementOp,
    y: np.ndarray,
    z_t: np.ndarray,
    t: float,
    eps: np.ndarray,
    normalize: bool = False,
) -> np.ndarray:
    """
    Gradient in z_t of the reconstruction residual at x_hat(z_t, t).

    Gaussian observations use ||y - f(x_hat)||^2, Laplace ones the L1
    residual. With `normalize` each row is divided by its residual norm.
    """
    alpha, sigma = alpha_sigma(schedule, t)
    x_hat = (z_t - sigma * eps) / alpha
    residual = op.apply(x_hat) - y
    if op.obs_model is ObsModel.GAUSSIAN:
        g_x = 2.0 * op.adjoint(residual)
    else:
        g_x = op.adjoint(np.sign(residual))
    grad = (g_x - sigma * denoiser.vjp(z_t, t, g_x)) / alpha
    if normalize:
        norms = np.linalg.norm(residual, axis=-1, keepdims=True)
        grad = grad / np.maximum(norms, 1e-12)
    return grad


def ancestral_step(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    z_t: np.ndarray,
    s: float,
    t: float,
    noise: np.ndarray,
    eta: float = 0.0,
) -> np.ndarray:
    """One draw from prior_transition(z_t; s, t)."""
    eps = denoiser.eps_hat(z_t, t)
    kernel = transition_from_eps(schedule, z_t, eps, s, t, eta)
    return kernel.mean + kernel.std * noise


def guided_step(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    op: MeasurementOp,
    y: np.ndarray,
    z_t: np.ndarray,
    s: float,
    t: float,
    noise: np.ndarray,
    zeta: float,
    eta: float = 0.0,
    normalize: bool = False,
) -> np.ndarray:
    """Ancestral step followed by z_s -= zeta * guidance gradient; one denoiser call."""
    eps = denoiser.eps_hat(z_t, t)
    kernel = transition_from_eps(schedule, z_t, eps, s, t, eta)
    z_s = kernel.mean + kernel.std * noise
    if zeta != 0.0:
        z_s = z_s - zeta * guidance_gradient(schedule, denoiser, op, y, z_t, t, eps, normalize)
    return z_s


def final_prediction(denoiser: Denoiser, z: np.ndarray, t: float) -> np.ndarray:
    """x_hat at the bottom of the grid."""
    return denoiser.x_hat(z, t)
