# Noise schedules, SNR and time discretisations
"""
tools.schedule_tool

Single source of truth for (alpha_t, sigma_t).

VE: alpha(t) = 1, sigma(t) geometric between sigma_min and sigma_max.
VP: sigma(t)^2 linear in t between sigma_min^2 and sigma_max^2,
    alpha(t) = sqrt(1 - sigma(t)^2).

Times are continuous in (0, T]. Discrete-step methods work on a TimeGrid
produced by edm_grid (power-law interpolation of sigma with exponent rho).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Tuple

import numpy as np

from core.config import DEFAULT_RHO, T_MIN_FRACTION, VE_SIGMA_MAX, VE_SIGMA_MIN, VP_VAR_MAX, VP_VAR_MIN
from core.errors import DomainError, InvariantViolation

# Relative slack on the time domain and on grid endpoints.
_TIME_TOL = 1e-12
_MONOTONE_CHECK_POINTS = 2048


class ScheduleKind(str, Enum):
    VE = "VE"
    VP = "VP"


@dataclass(frozen=True)
class NoiseSchedule:
    """
    Noise schedule (alpha_t, sigma_t) on (0, T].

    For VP, sigma_min / sigma_max are the standard deviations at t = 0 and
    t = T, so the variance curve runs from sigma_min**2 to sigma_max**2.
    """

    kind: ScheduleKind
    sigma_min: float
    sigma_max: float
    T: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if not (self.sigma_min > 0.0 and self.sigma_max > self.sigma_min):
            raise DomainError(
                f"need 0 < sigma_min < sigma_max, got ({self.sigma_min}, {self.sigma_max})"
            )
        if self.T <= 0.0:
            raise DomainError(f"terminal time must be positive, got {self.T}")
        if self.kind is ScheduleKind.VP and self.sigma_max >= 1.0:
            raise DomainError(f"VP sigma_max must be < 1, got {self.sigma_max}")

        ts = np.linspace(0.0, self.T, _MONOTONE_CHECK_POINTS)[1:]
        alpha, sigma = _alpha_sigma_array(self, ts)
        if np.any(alpha <= 0.0) or np.any(sigma <= 0.0):
            raise InvariantViolation("schedule produced nonpositive alpha or sigma")
        ratio = alpha**2 / sigma**2
        if np.any(np.diff(ratio) >= 0.0):
            raise InvariantViolation("SNR is not strictly decreasing on the check grid")

    @classmethod
    def ve(cls, sigma_min: float = VE_SIGMA_MIN, sigma_max: float = VE_SIGMA_MAX, T: float = 1.0) -> "NoiseSchedule":
        return cls(ScheduleKind.VE, sigma_min, sigma_max, T)

    @classmethod
    def vp(cls, var_min: float = VP_VAR_MIN, var_max: float = VP_VAR_MAX, T: float = 1.0) -> "NoiseSchedule":
        return cls(ScheduleKind.VP, float(np.sqrt(var_min)), float(np.sqrt(var_max)), T)

    @property
    def t_min(self) -> float:
        """The "t ~ 0" end used by sampling grids."""
        return T_MIN_FRACTION * self.T

    def to_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind.value,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "T": self.T,
        }


def _alpha_sigma_array(schedule: NoiseSchedule, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    u = np.asarray(t, dtype=float) / schedule.T
    if schedule.kind is ScheduleKind.VE:
        sigma = schedule.sigma_min * (schedule.sigma_max / schedule.sigma_min) ** u
        return np.ones_like(sigma), sigma
    v0, v1 = schedule.sigma_min**2, schedule.sigma_max**2
    var = v0 + (v1 - v0) * u
    return np.sqrt(1.0 - var), np.sqrt(var)


def _check_time(schedule: NoiseSchedule, t: float) -> float:
    t = float(t)
    if not (t > 0.0 and t <= schedule.T * (1.0 + _TIME_TOL)):
        raise DomainError(f"time {t} outside (0, {schedule.T}]")
    return min(t, schedule.T)


def alpha_sigma(schedule: NoiseSchedule, t: float) -> Tuple[float, float]:
    """(alpha_t, sigma_t) for 0 < t <= T."""
    t = _check_time(schedule, t)
    alpha, sigma = _alpha_sigma_array(schedule, np.array(t))
    return float(alpha), float(sigma)


def snr(schedule: NoiseSchedule, t: float) -> float:
    alpha, sigma = alpha_sigma(schedule, t)
    return alpha**2 / sigma**2


def time_at_sigma(schedule: NoiseSchedule, sigma: float) -> float:
    """Inverse of sigma(t); sigma must lie in (sigma(0), sigma(T)]."""
    sigma = float(sigma)
    lo, hi = schedule.sigma_min, schedule.sigma_max
    if not (lo < sigma <= hi * (1.0 + _TIME_TOL)):
        raise DomainError(f"sigma {sigma} outside ({lo}, {hi}]")
    sigma = min(sigma, hi)
    if schedule.kind is ScheduleKind.VE:
        u = np.log(sigma / lo) / np.log(hi / lo)
    else:
        u = (sigma**2 - lo**2) / (hi**2 - lo**2)
    return float(u * schedule.T)


def time_at_snr(schedule: NoiseSchedule, value: float) -> float:
    """Inverse of snr(t)."""
    value = float(value)
    if value <= 0.0:
        raise DomainError(f"SNR must be positive, got {value}")
    if schedule.kind is ScheduleKind.VE:
        sigma = 1.0 / np.sqrt(value)
    else:
        # (1 - v) / v = snr  ->  v = 1 / (1 + snr)
        sigma = np.sqrt(1.0 / (1.0 + value))
    return time_at_sigma(schedule, sigma)


def snr_window_times(schedule: NoiseSchedule, k: int, lo: float = 0.2, hi: float = 0.5) -> List[float]:
    """
    K critical times, decreasing, with SNR log-spaced across [lo, hi].

    The first entry (T_e) sits at SNR = lo, the last (T_s) at SNR = hi.
    """
    if k < 2:
        raise DomainError(f"need at least 2 critical times, got {k}")
    if not 0.0 < lo < hi:
        raise DomainError(f"invalid SNR window [{lo}, {hi}]")
    values = np.geomspace(lo, hi, k)
    return [time_at_snr(schedule, v) for v in values]


def edm_sigmas(sigma_hi: float, sigma_lo: float, n: int, rho: float = DEFAULT_RHO) -> np.ndarray:
    """Power-law interpolation from sigma_hi down to sigma_lo (n points)."""
    if n < 2:
        raise DomainError(f"grid needs n >= 2, got {n}")
    if rho <= 0.0:
        raise DomainError(f"rho must be positive, got {rho}")
    ramp = np.linspace(0.0, 1.0, n)
    hi_inv = sigma_hi ** (1.0 / rho)
    lo_inv = sigma_lo ** (1.0 / rho)
    return (hi_inv + ramp * (lo_inv - hi_inv)) ** rho


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing times in (0, T] with their sigma values."""

    points: Tuple[float, ...]
    rho: float = DEFAULT_RHO
    sigmas: Tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.size < 1 or np.any(pts <= 0.0):
            raise DomainError("grid points must be positive")
        if np.any(np.diff(pts) >= 0.0):
            raise DomainError("grid points must be strictly decreasing")

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[float]:
        return iter(self.points)

    def __getitem__(self, i: int) -> float:
        return self.points[i]

    def pairs(self) -> List[Tuple[float, float]]:
        """Consecutive (t, s) pairs with s < t, from the top of the grid down."""
        return list(zip(self.points[:-1], self.points[1:]))


def edm_grid(schedule: NoiseSchedule, n: int, t_lo: float, t_hi: float, rho: float = DEFAULT_RHO) -> TimeGrid:
    """n decreasing times whose sigmas follow the rho power law between sigma(t_hi) and sigma(t_lo)."""
    if n < 2:
        raise DomainError(f"grid needs n >= 2, got {n}")
    if not (0.0 < t_lo < t_hi):
        raise DomainError(f"need 0 < t_lo < t_hi, got ({t_lo}, {t_hi})")
    _check_time(schedule, t_hi)
    _, s_hi = alpha_sigma(schedule, t_hi)
    _, s_lo = alpha_sigma(schedule, t_lo)
    sigmas = edm_sigmas(s_hi, s_lo, n, rho)
    points = [time_at_sigma(schedule, s) for s in sigmas]
    points[0], points[-1] = float(t_hi), float(t_lo)
    sigmas[0], sigmas[-1] = s_hi, s_lo
    if np.any(np.diff(points) >= 0.0):
        raise DomainError(f"grid of {n} points collapses between {t_lo} and {t_hi}")
    return TimeGrid(tuple(points), float(rho), tuple(float(s) for s in sigmas))


def transition_coefficients(schedule: NoiseSchedule, s: float, t: float) -> Tuple[float, float]:
    """
    (alpha_{t|s}, sigma_{t|s}^2) of q(z_t | z_s) for s <= t.

    s == t gives the identity transition (1, 0).
    """
    if s > t:
        raise DomainError(f"transition needs s <= t, got s={s}, t={t}")
    a_s, sig_s = alpha_sigma(schedule, s)
    a_t, sig_t = alpha_sigma(schedule, t)
    if s == t:
        return 1.0, 0.0
    a_ts = a_t / a_s
    var = sig_t**2 - a_ts**2 * sig_s**2
    if var < 0.0:
        if var < -1e-12 * sig_t**2:
            raise InvariantViolation(f"negative transition variance {var} for s={s}, t={t}")
        var = 0.0
    return a_ts, var
