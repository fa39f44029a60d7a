# Reference posterior samplers: Blended, RePaint, DPS, RED-Diff
"""
tools.baseline_tool

Baselines run on the same grids, kernels and substreams as VIPaint:

- blended_sample: ancestral steps, observed coordinates overwritten with a
  forward-noised copy of y after every step (mask operators only).
- repaint_sample: blended steps plus time travel, i.e. jumping r levels back up
  through forward_conditional and denoising again.
- dps_sample: ancestral steps followed by a likelihood-gradient correction.
- reddiff / reddiff_sample: point-mass variational fit of a single mean with
  the stop-gradient denoising regulariser.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd

from core.config import (
    BLENDED_STEPS,
    DPS_SCALE_VE,
    DPS_STEPS,
    REDDIFF_LR,
    REDDIFF_STEPS,
    REDDIFF_WEIGHT,
    REDDIFF_WEIGHT_VE,
    REPAINT_JUMP_COUNT,
    REPAINT_JUMP_LENGTH,
    REPAINT_STEPS,
)
from core.errors import DomainError, NumericalAbort, UnsupportedOperator
from tools.denoiser_tool import Denoiser
from tools.diffusion_tool import forward_conditional
from tools.operator_tool import MeasurementOp, OperatorKind, fill_observation
from tools.optim_tool import Adam
from tools.rng_tool import substream
from tools.sampling_tool import ancestral_step, final_prediction, guided_step, prior_draw, sampling_grid
from tools.schedule_tool import NoiseSchedule, ScheduleKind, alpha_sigma, edm_grid

logger = logging.getLogger(__name__)

StepCallback = Callable[[int, float, np.ndarray, np.ndarray], None]


class BaselineMethod(str, Enum):
    BLENDED = "blended"
    REPAINT = "repaint"
    DPS = "dps"
    REDDIFF = "reddiff"
    REDDIFF_V = "reddiff-v"


@dataclass
class BaselineConfig:
    method: BaselineMethod
    steps: int
    zeta: float = 0.0
    jump_length: int = REPAINT_JUMP_LENGTH
    jump_count: int = REPAINT_JUMP_COUNT
    weight: float = REDDIFF_WEIGHT
    lr: float = REDDIFF_LR
    eta: float = 0.0
    normalize_guidance: bool = False

    def __post_init__(self) -> None:
        self.method = BaselineMethod(self.method)
        if self.steps < 1:
            raise DomainError(f"step count must be positive, got {self.steps}")
        if self.zeta < 0.0:
            raise DomainError(f"guidance scale must be nonnegative, got {self.zeta}")
        if self.jump_length < 1 or self.jump_count < 0:
            raise DomainError("jump length must be positive and jump count nonnegative")
        if self.weight < 0.0 or self.lr <= 0.0:
            raise DomainError("prior weight must be nonnegative and lr positive")

    @classmethod
    def defaults(cls, method: str, schedule: NoiseSchedule, **overrides) -> "BaselineConfig":
        """Full-scale settings; desk-scale configs usually override `steps`."""
        method = BaselineMethod(method)
        ve = schedule.kind is ScheduleKind.VE
        if method is BaselineMethod.BLENDED:
            fields = dict(steps=BLENDED_STEPS)
        elif method is BaselineMethod.REPAINT:
            fields = dict(steps=REPAINT_STEPS)
        elif method is BaselineMethod.DPS:
            fields = dict(steps=DPS_STEPS, zeta=DPS_SCALE_VE if ve else 1.0)
        else:
            fields = dict(steps=REDDIFF_STEPS, weight=REDDIFF_WEIGHT_VE if ve else REDDIFF_WEIGHT)
        fields.update(overrides)
        return cls(method=method, **fields)


def _require_mask(op: MeasurementOp, method: str) -> None:
    if op.kind is not OperatorKind.MASK:
        raise UnsupportedOperator(f"{method} needs a mask operator, got {op.kind.value}")


def repaint_schedule(n_steps: int, jump_length: int, jump_count: int) -> List[int]:
    """
    Sequence of grid levels visited, n_steps (top) down to 0.

    Every jump_length levels the walk climbs back jump_length levels,
    jump_count times, before continuing down.
    """
    jumps = {j: jump_count for j in range(0, n_steps - jump_length, jump_length)}
    level = n_steps
    path = [level]
    while level >= 1:
        level -= 1
        path.append(level)
        if jumps.get(level, 0) > 0:
            jumps[level] -= 1
            for _ in range(jump_length):
                level += 1
                path.append(level)
    return path


def _blend_walk(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    op: MeasurementOp,
    y: np.ndarray,
    n: int,
    seed: int,
    n_steps: int,
    path: List[int],
    eta: float,
    on_step: Optional[StepCallback],
) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    grid = sampling_grid(schedule, n_steps)
    times = grid.points  # times[n_steps - level]
    z = prior_draw(schedule, substream(seed, "baseline-init").standard_normal((n, op.dim)))

    for move, (upper, lower) in enumerate(zip(path[:-1], path[1:])):
        if lower < upper:
            t, s = times[n_steps - upper], times[n_steps - lower]
            noise = substream(seed, "blend-step", move).standard_normal(z.shape)
            z = ancestral_step(schedule, denoiser, z, s, t, noise, eta)
            alpha_s, sigma_s = alpha_sigma(schedule, s)
            obs_noise = substream(seed, "blend-obs", move).standard_normal((n, y.size))
            observed = alpha_s * y + sigma_s * obs_noise
            z[..., op.mask] = observed
            if on_step is not None:
                on_step(move, s, z, observed)
        else:
            s, t = times[n_steps - upper], times[n_steps - lower]
            noise = substream(seed, "blend-step", move).standard_normal(z.shape)
            z = forward_conditional(schedule, z, s, t).sample(noise)
    return final_prediction(denoiser, z, times[-1])


def blended_sample(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    op: MeasurementOp,
    y: np.ndarray,
    n: int,
    seed: int,
    steps: int = BLENDED_STEPS,
    eta: float = 0.0,
    on_step: Optional[StepCallback] = None,
) -> np.ndarray:
    """Ancestral sampling with observed coordinates replaced by noised y each step."""
    _require_mask(op, "blended")
    path = list(range(steps, -1, -1))
    return _blend_walk(schedule, denoiser, op, y, n, seed, steps, path, eta, on_step)


def repaint_sample(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    op: MeasurementOp,
    y: np.ndarray,
    n: int,
    seed: int,
    steps: int = REPAINT_STEPS,
    jump_length: int = REPAINT_JUMP_LENGTH,
    jump_count: int = REPAINT_JUMP_COUNT,
    eta: float = 0.0,
    on_step: Optional[StepCallback] = None,
) -> np.ndarray:
    """Blended sampling with time-travel resampling."""
    _require_mask(op, "repaint")
    path = repaint_schedule(steps, jump_length, jump_count)
    return _blend_walk(schedule, denoiser, op, y, n, seed, steps, path, eta, on_step)


def dps_sample(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    op: MeasurementOp,
    y: np.ndarray,
    n: int,
    seed: int,
    zeta: float,
    steps: int = DPS_STEPS,
    eta: float = 0.0,
    normalize: bool = False,
) -> np.ndarray:
    """Ancestral sampling with z -= zeta * grad ||y - f(x_hat(z_t))||^2 after each step."""
    y = np.asarray(y, dtype=float)
    grid = sampling_grid(schedule, steps)
    z = prior_draw(schedule, substream(seed, "baseline-init").standard_normal((n, op.dim)))
    for i, (t, s) in enumerate(grid.pairs()):
        noise = substream(seed, "dps-step", i).standard_normal(z.shape)
        z = guided_step(schedule, denoiser, op, y, z, s, t, noise, zeta=zeta, eta=eta, normalize=normalize)
    return final_prediction(denoiser, z, grid.points[-1])


def reddiff_weights(schedule: NoiseSchedule, times: np.ndarray, weight: float) -> np.ndarray:
    """weight * (sigma_t / alpha_t), normalised to `weight` at the grid midpoint."""
    ratios = np.array([alpha_sigma(schedule, float(t))[1] / alpha_sigma(schedule, float(t))[0] for t in times])
    return weight * ratios / ratios[len(ratios) // 2]


def reddiff(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    op: MeasurementOp,
    y: np.ndarray,
    steps: int,
    lr: float,
    weight: float,
    annealed: bool,
    seed: int,
    init: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, pd.DataFrame]:
    """
    Fit a single mean mu.

    Per step: z_t = alpha_t mu + sigma_t eps and
    loss = ||y - f(mu)||^2 + w_t * sg[eps_hat(z_t, t) - eps]^T mu.
    Annealed runs visit t from T down to t_min; the variational variant
    draws t uniformly from the same grid.
    """
    if steps < 1:
        raise DomainError(f"RED-Diff needs at least one step, got {steps}")
    y = np.asarray(y, dtype=float)
    method = "reddiff" if annealed else "reddiff-v"
    grid = np.asarray(edm_grid(schedule, max(steps, 2), schedule.t_min, schedule.T).points)
    weights = reddiff_weights(schedule, grid, weight)
    mu = fill_observation(op, y) if init is None else np.array(init, dtype=float)
    optimizer = Adam({"mu": lr})
    rows = []

    for step in range(steps):
        rng = substream(seed, method, step)
        index = step if annealed else int(rng.integers(0, grid.size))
        t = float(grid[index])
        alpha, sigma = alpha_sigma(schedule, t)
        eps = rng.standard_normal(mu.shape)
        eps_hat = denoiser.eps_hat(alpha * mu + sigma * eps, t)
        residual = op.apply(mu) - y
        reg = weights[index] * (eps_hat - eps)
        value = float(residual @ residual + reg @ mu)
        if not np.isfinite(value):
            raise NumericalAbort("loss is not finite", method=method, step=step, term="loss")
        grad = 2.0 * op.adjoint(residual) + reg
        mu = optimizer.step({"mu": mu}, {"mu": grad})["mu"]
        if not np.all(np.isfinite(mu)):
            raise NumericalAbort("mean diverged", method=method, step=step, term="mu")
        rows.append({"step": step, "t": t, "loss": value})

    return mu, pd.DataFrame(rows, columns=["step", "t", "loss"])


def reddiff_sample(
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    op: MeasurementOp,
    y: np.ndarray,
    n: int,
    seed: int,
    steps: int = REDDIFF_STEPS,
    lr: float = REDDIFF_LR,
    weight: float = REDDIFF_WEIGHT,
    annealed: bool = True,
) -> Tuple[np.ndarray, pd.DataFrame]:
    """n copies of the fitted mean (the variational family is a point mass)."""
    mu, trace = reddiff(schedule, denoiser, op, y, steps, lr, weight, annealed, seed)
    return np.tile(mu, (n, 1)), trace
