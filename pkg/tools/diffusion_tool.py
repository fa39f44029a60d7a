# Gaussian algebra of the diffusion chain
"""
tools.diffusion_tool

Forward marginals and conditionals, reverse conditionals, the prior
transition kernels (VE ancestral, VP DDIM), the bridge posterior/prior used
by the diffusion term of the variational bound, and the diagonal KL.

Means and stds may be numpy arrays or grad_tool Vars; every formula here is
written with the grad_tool helpers so the same code runs inside a tape.
Leading axes of a mean are batch axes; the last axis is the data dimension.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Union

import numpy as np

from core.errors import DomainError, InvariantViolation
from tools import grad_tool as G
from tools.schedule_tool import NoiseSchedule, ScheduleKind, alpha_sigma, transition_coefficients

if TYPE_CHECKING:
    from tools.denoiser_tool import Denoiser

logger = logging.getLogger(__name__)

Tensor = Union[np.ndarray, G.Var]

_clamp_lock = threading.Lock()
_clamp_count = 0


def _record_clamp(what: str, value: float) -> None:
    global _clamp_count
    with _clamp_lock:
        _clamp_count += 1
        first = _clamp_count == 1
    if first:
        logger.warning("Clamped negative %s (%.3e) to 0", what, value)
    else:
        logger.debug("Clamped negative %s (%.3e) to 0", what, value)


def clamp_warnings() -> int:
    """Number of clamped variances since the last reset."""
    with _clamp_lock:
        return _clamp_count


def reset_clamp_warnings() -> None:
    global _clamp_count
    with _clamp_lock:
        _clamp_count = 0


@dataclass
class DiagGaussian:
    """Diagonal Gaussian; std is elementwise >= 0 and broadcasts to mean."""

    mean: Tensor
    std: Union[Tensor, float]

    def __post_init__(self) -> None:
        if not G.is_var(self.mean):
            self.mean = np.asarray(self.mean, dtype=float)
        if not G.is_var(self.std):
            self.std = np.asarray(self.std, dtype=float)
        mean_shape = G.value_of(self.mean).shape
        std_value = G.value_of(self.std)
        try:
            shape = np.broadcast_shapes(mean_shape, std_value.shape)
        except ValueError as exc:
            raise DomainError(f"std shape {std_value.shape} does not match mean shape {mean_shape}") from exc
        if shape != mean_shape:
            raise DomainError(f"std shape {std_value.shape} does not match mean shape {mean_shape}")
        if np.any(std_value < 0.0) or not np.all(np.isfinite(std_value)):
            raise DomainError("std must be finite and nonnegative")

    @property
    def var(self) -> Tensor:
        return G.square(self.std)

    def sample(self, noise: np.ndarray) -> Tensor:
        """Reparameterised draw mean + std * noise."""
        return self.mean + self.std * noise

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        """Log density summed over the last axis (values only)."""
        mean = G.value_of(self.mean)
        std = np.broadcast_to(G.value_of(self.std), mean.shape)
        z = (np.asarray(x, dtype=float) - mean) / std
        return np.sum(-0.5 * z**2 - np.log(std) - 0.5 * np.log(2.0 * np.pi), axis=-1)


def forward_marginal(schedule: NoiseSchedule, x: Tensor, t: float) -> DiagGaussian:
    """q(z_t | x) = N(alpha_t x, sigma_t^2 I)."""
    alpha, sigma = alpha_sigma(schedule, t)
    return DiagGaussian(G.mul(x, alpha), np.full(G.value_of(x).shape, sigma))


def forward_conditional(schedule: NoiseSchedule, z_s: Tensor, s: float, t: float) -> DiagGaussian:
    """q(z_t | z_s) for s < t."""
    if not s < t:
        raise DomainError(f"forward conditional needs s < t, got s={s}, t={t}")
    a_ts, var = transition_coefficients(schedule, s, t)
    if var <= 0.0:
        raise InvariantViolation(f"nonpositive forward variance {var} for s={s}, t={t}")
    mean = G.mul(z_s, a_ts)
    return DiagGaussian(mean, np.full(G.value_of(mean).shape, np.sqrt(var)))


def reverse_conditional(schedule: NoiseSchedule, z_t: Tensor, x: Tensor, s: float, t: float) -> DiagGaussian:
    """q(z_s | z_t, x) for s < t."""
    if not s < t:
        raise DomainError(f"reverse conditional needs s < t, got s={s}, t={t}")
    a_s, sig_s = alpha_sigma(schedule, s)
    _, sig_t = alpha_sigma(schedule, t)
    a_ts, var_ts = transition_coefficients(schedule, s, t)
    var = var_ts * sig_s**2 / sig_t**2
    mean = G.add(G.mul(z_t, a_ts * sig_s**2 / sig_t**2), G.mul(x, a_s * var_ts / sig_t**2))
    return DiagGaussian(mean, np.full(G.value_of(mean).shape, np.sqrt(var)))


def prior_transition(
    schedule: NoiseSchedule,
    denoiser: "Denoiser",
    z_t: Tensor,
    s: float,
    t: float,
    eta: float = 0.0,
) -> DiagGaussian:
    """
    Model kernel p(z_s | z_t) built from one denoiser evaluation.

    VE: ancestral rule, i.e. reverse_conditional with x replaced by x_hat.
    VP: DDIM kernel with coefficient eta (alpha_bar = alpha^2).
    """
    if not s < t:
        raise DomainError(f"prior transition needs s < t, got s={s}, t={t}")
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"eta must lie in [0, 1], got {eta}")
    eps = denoiser.eps(z_t, t)
    return transition_from_eps(schedule, z_t, eps, s, t, eta)


def transition_from_eps(
    schedule: NoiseSchedule,
    z_t: Tensor,
    eps: Tensor,
    s: float,
    t: float,
    eta: float = 0.0,
) -> DiagGaussian:
    """prior_transition given an already computed noise prediction."""
    a_t, sig_t = alpha_sigma(schedule, t)
    x_hat = (z_t - eps * sig_t) * (1.0 / a_t)
    shape = G.value_of(z_t).shape

    if schedule.kind is ScheduleKind.VE:
        return reverse_conditional(schedule, z_t, x_hat, s, t)

    a_s, _ = alpha_sigma(schedule, s)
    abar_s, abar_t = a_s**2, a_t**2
    var_tilde = eta**2 * ((1.0 - abar_s) / (1.0 - abar_t)) * (1.0 - abar_t / abar_s)
    if var_tilde < 0.0:
        _record_clamp("DDIM variance", var_tilde)
        var_tilde = 0.0
    direction = 1.0 - abar_s - var_tilde
    if direction < 0.0:
        _record_clamp("DDIM direction coefficient", direction)
        direction = 0.0
    mean = G.add(G.mul(x_hat, np.sqrt(abar_s)), G.mul(eps, np.sqrt(direction)))
    return DiagGaussian(mean, np.full(shape, np.sqrt(var_tilde)))


def kl_diag(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """
    KL(q || p) summed over the last axis.

    Returns a scalar for unbatched inputs and one value per batch row
    otherwise. p.std must be strictly positive.
    """
    p_std = G.value_of(p.std)
    if np.any(p_std <= 0.0):
        raise DomainError("KL reference distribution has zero std")
    diff = q.mean - p.mean
    p_var = G.square(p.std)
    terms = G.log(p.std) - G.log(q.std) + (G.square(q.std) + G.square(diff)) / (p_var * 2.0) - 0.5
    return G.sum_(terms, axis=-1)


def bridge_posterior(
    schedule: NoiseSchedule,
    z_t: Tensor,
    z_te: Tensor,
    s: float,
    t: float,
    te: float,
) -> DiagGaussian:
    """q(z_s | z_t, z_Te) for Te < s < t."""
    if not te < s < t:
        raise DomainError(f"bridge needs Te < s < t, got Te={te}, s={s}, t={t}")
    a_ts, v_ts = transition_coefficients(schedule, s, t)
    a_ste, v_ste = transition_coefficients(schedule, te, s)
    denom = v_ts + a_ts**2 * v_ste
    if denom <= 0.0:
        raise InvariantViolation(f"nonpositive bridge normaliser for Te={te}, s={s}, t={t}")
    var = v_ts * v_ste / denom
    mean = G.add(G.mul(z_te, a_ste * v_ts / denom), G.mul(z_t, a_ts * v_ste / denom))
    return DiagGaussian(mean, np.full(G.value_of(mean).shape, np.sqrt(var)))


def predict_z_te(schedule: NoiseSchedule, z_t: Tensor, eps: Tensor, t: float, te: float) -> Tensor:
    """(z_t - sigma_{t|Te} eps) / alpha_{t|Te}."""
    a_tte, v_tte = transition_coefficients(schedule, te, t)
    return (z_t - eps * np.sqrt(v_tte)) * (1.0 / a_tte)


def bridge_prior(
    schedule: NoiseSchedule,
    denoiser: "Denoiser",
    z_t: Tensor,
    s: float,
    t: float,
    te: float,
    eps: Optional[Tensor] = None,
) -> DiagGaussian:
    """bridge_posterior with z_Te replaced by the denoiser's prediction."""
    if not te < s < t:
        raise DomainError(f"bridge needs Te < s < t, got Te={te}, s={s}, t={t}")
    if eps is None:
        eps = denoiser.eps(z_t, t)
    return bridge_posterior(schedule, z_t, predict_z_te(schedule, z_t, eps, t, te), s, t, te)
