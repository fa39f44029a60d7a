# Hierarchical variational posterior: objective, optimisation, sampling
"""
tools.vipaint_tool

The posterior over the diffusion chain is a Markov chain of diagonal
Gaussians on K critical times times = [T_e, ..., T_s] (decreasing):

    z_Te          ~ N(mu_Te, tau_Te^2)
    z_s(i) | z_up ~ N(gamma_i * zhat_s(i) + (1 - gamma_i) * mu_i, tau_i^2)

where zhat_s(i) is the mean of the prior transition from the level above.
Parameters are unconstrained: tau_tilde = log tau^2, gamma_tilde = logit gamma.

The objective averages over M reparameterised chains

    -log p(y | x_hat(z_Ts)) + beta * (sum_i KL(q_i || p_i) + |grid| * KL_bridge)

and is differentiated with grad_tool through the denoiser VJPs.
Phase 1 fits the parameters with Adam; phase 2 samples the fitted hierarchy
down to T_s and refines with likelihood guidance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import logit

from core.config import (
    DDIM_ETA,
    DEFAULT_DIFFUSION_GRID,
    DEFAULT_MC_SAMPLES,
    DEFAULT_PHASE2_STEPS,
    DEFAULT_RHO,
    GAMMA_INIT,
    INIT_SCALES,
    LEARNING_RATES,
    LR_DECAY_EVERY,
    LR_DECAY_FACTOR,
    SNR_WINDOW,
    VP_GAMMA_PRESETS,
    VP_STD_SCALE,
)
from core.errors import DomainError, NumericalAbort
from tools import grad_tool as G
from tools.denoiser_tool import Denoiser
from tools.diffusion_tool import (
    DiagGaussian,
    bridge_posterior,
    bridge_prior,
    kl_diag,
    prior_transition,
    reverse_conditional,
)
from tools.operator_tool import MeasurementOp
from tools.optim_tool import Adam
from tools.rng_tool import chain_streams, draw_normals, substream
from tools.sampling_tool import final_prediction, guided_step, sampling_grid
from tools.schedule_tool import NoiseSchedule, ScheduleKind, alpha_sigma, edm_grid, snr, snr_window_times, transition_coefficients

logger = logging.getLogger(__name__)

Tensor = Union[np.ndarray, G.Var]

PARAM_GROUPS = {"mu_te": "mu", "mu": "mu", "tau_te": "tau", "tau": "tau", "gamma": "gamma"}
TRACE_COLUMNS = ["step", "total", "recon", "hier_kl", "diff_kl"]

# SNR window checks tolerate rounding in time_at_snr round trips.
_SNR_TOL = 1e-9


@dataclass
class VipaintConfig:
    times: Tuple[float, ...]
    beta: float = 1.0
    n_mc: int = DEFAULT_MC_SAMPLES
    opt_steps: int = 50
    lrs: Dict[str, float] = field(default_factory=lambda: dict(LEARNING_RATES))
    lr_decay: Tuple[float, int] = (LR_DECAY_FACTOR, LR_DECAY_EVERY)
    diffusion_grid: int = DEFAULT_DIFFUSION_GRID
    eta: float = DDIM_ETA
    zeta: float = 0.1
    phase2_steps: int = DEFAULT_PHASE2_STEPS
    normalize_guidance: bool = False
    gamma0: Optional[float] = None
    init_scales: Optional[Tuple[float, float]] = None
    std_scale: float = VP_STD_SCALE
    snr_window: Tuple[float, float] = SNR_WINDOW
    skip_snr_check: bool = False
    rho: float = DEFAULT_RHO

    @property
    def k(self) -> int:
        return len(self.times)

    @property
    def te(self) -> float:
        return self.times[0]

    @property
    def ts(self) -> float:
        return self.times[-1]

    @classmethod
    def preset(cls, name: str, schedule: NoiseSchedule, gamma_preset: Optional[str] = None, **overrides) -> "VipaintConfig":
        """
        vipaint-2: K = 2, beta = 1, 50 steps.
        vipaint-4: K = 4, beta = 50 (VE) or 10 (VP), 100 steps.
        """
        if name == "vipaint-2":
            k, beta, steps = 2, 1.0, 50
        elif name == "vipaint-4":
            k, steps = 4, 100
            beta = 50.0 if schedule.kind is ScheduleKind.VE else 10.0
        else:
            raise DomainError(f"unknown VIPaint preset '{name}'")
        lo, hi = overrides.pop("snr_window", SNR_WINDOW)
        gamma0 = None
        if gamma_preset is not None:
            if gamma_preset not in VP_GAMMA_PRESETS:
                raise DomainError(f"unknown gamma preset '{gamma_preset}'")
            gamma0 = VP_GAMMA_PRESETS[gamma_preset]
        fields = dict(
            times=tuple(snr_window_times(schedule, k, lo, hi)),
            beta=beta,
            opt_steps=steps,
            gamma0=gamma0,
            snr_window=(lo, hi),
        )
        fields.update(overrides)
        return cls(**fields)

    def validate(self, schedule: NoiseSchedule) -> None:
        times = np.asarray(self.times, dtype=float)
        if times.size < 2:
            raise DomainError(f"VIPaint needs K >= 2 critical times, got {times.size}")
        if np.any(np.diff(times) >= 0.0):
            raise DomainError("critical times must be strictly decreasing (T_e first)")
        if times[-1] <= 0.0 or times[0] >= schedule.T:
            raise DomainError(f"critical times must lie in (0, {schedule.T})")
        if not self.skip_snr_check:
            lo, hi = self.snr_window
            for t in times:
                value = snr(schedule, float(t))
                if not (lo * (1 - _SNR_TOL) <= value <= hi * (1 + _SNR_TOL)):
                    raise DomainError(f"time {t} has SNR {value:.4f} outside [{lo}, {hi}]")
        if self.beta < 0.0:
            raise DomainError(f"beta must be nonnegative, got {self.beta}")
        if self.n_mc < 1 or self.opt_steps < 0 or self.diffusion_grid < 1 or self.phase2_steps < 1:
            raise DomainError("M, diffusion grid and phase-2 steps must be positive; opt_steps nonnegative")
        if schedule.kind is ScheduleKind.VP and not 0.0 < self.eta <= 1.0:
            raise DomainError(f"VP prior transitions need eta in (0, 1], got {self.eta}")
        if self.zeta < 0.0:
            raise DomainError(f"guidance scale must be nonnegative, got {self.zeta}")
        if set(self.lrs) != {"mu", "gamma", "tau"}:
            raise DomainError(f"learning rates need groups mu, gamma, tau; got {sorted(self.lrs)}")


@dataclass
class VipaintParams:
    """
    lambda = {mu_Te, tau_tilde_Te, (mu_i, tau_tilde_i, gamma_tilde_i)}.

    Level arrays are ordered top-down: row j belongs to times[j + 1].
    """

    mu_te: np.ndarray
    tau_te: np.ndarray
    mu: np.ndarray
    tau: np.ndarray
    gamma: np.ndarray

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {"mu_te": self.mu_te, "tau_te": self.tau_te, "mu": self.mu, "tau": self.tau, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, values: Dict[str, np.ndarray]) -> "VipaintParams":
        return cls(**{k: np.array(values[k], dtype=float) for k in PARAM_GROUPS})

    def copy(self) -> "VipaintParams":
        return VipaintParams.from_dict(self.as_dict())

    @property
    def tau_te_std(self) -> np.ndarray:
        return np.exp(0.5 * self.tau_te)

    @property
    def tau_std(self) -> np.ndarray:
        return np.exp(0.5 * self.tau)

    @property
    def gammas(self) -> np.ndarray:
        return G.sigmoid(self.gamma)


@dataclass
class StepNoise:
    """Random inputs of one objective evaluation."""

    levels: np.ndarray  # (K, M, d)
    diffusion: np.ndarray  # (M, d)
    t_index: int


@dataclass
class HierarchySample:
    levels: List[Tensor]
    noise: np.ndarray
    kernels: List[Tuple[DiagGaussian, DiagGaussian]]


def init_params(config: VipaintConfig, schedule: NoiseSchedule, y_filled: np.ndarray, seed: int) -> VipaintParams:
    """Initialisation table: noisy lifted observation, reverse-conditional stds, gamma0."""
    y_filled = np.asarray(y_filled, dtype=float)
    kind = schedule.kind.value
    a1, a2 = config.init_scales or INIT_SCALES[kind]
    gamma0 = config.gamma0 if config.gamma0 is not None else GAMMA_INIT[kind]
    rng = substream(seed, "init")
    noise = rng.standard_normal((config.k, y_filled.size))

    alpha_te, sigma_te = alpha_sigma(schedule, config.te)
    mu_te = alpha_te * y_filled + a1 * sigma_te * noise[0]
    tau_te = np.full(y_filled.size, 2.0 * np.log(sigma_te))

    mus, taus = [], []
    for j in range(1, config.k):
        t, s = config.times[j - 1], config.times[j]
        alpha_s, sigma_s = alpha_sigma(schedule, s)
        mus.append(alpha_s * y_filled + a2 * sigma_s * noise[j])
        if schedule.kind is ScheduleKind.VE:
            std = float(reverse_conditional(schedule, np.zeros(1), np.zeros(1), s, t).std[0])
        else:
            abar_s, abar_t = alpha_s**2, alpha_sigma(schedule, t)[0] ** 2
            ddim_std = config.eta * np.sqrt((1.0 - abar_s) / (1.0 - abar_t) * (1.0 - abar_t / abar_s))
            std = ddim_std * config.std_scale / config.eta
        taus.append(np.full(y_filled.size, 2.0 * np.log(std)))

    return VipaintParams(
        mu_te=mu_te,
        tau_te=tau_te,
        mu=np.array(mus),
        tau=np.array(taus),
        gamma=np.full(config.k - 1, float(logit(gamma0))),
    )


def draw_step_noise(config: VipaintConfig, dim: int, n_chains: int, seed: int, step: int) -> StepNoise:
    """Fresh noise for one step: per-chain substreams plus one shared diffusion time."""
    streams = chain_streams(seed, "mc-chain", step, n_chains)
    draws = draw_normals(streams, (config.k + 1, dim))  # (M, K + 1, d)
    t_index = int(substream(seed, "diffusion-time", step).integers(0, config.diffusion_grid))
    return StepNoise(
        levels=np.transpose(draws[:, : config.k], (1, 0, 2)),
        diffusion=draws[:, config.k],
        t_index=t_index,
    )


def diffusion_pairs(config: VipaintConfig, schedule: NoiseSchedule) -> List[Tuple[float, float]]:
    """The |grid| (t, s) pairs over (T_e, T] used by the diffusion term."""
    grid = edm_grid(schedule, config.diffusion_grid + 2, config.te, schedule.T, config.rho)
    return grid.pairs()[: config.diffusion_grid]


def _rollout(
    tensors: Dict[str, Tensor],
    config: VipaintConfig,
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    noise: np.ndarray,
) -> HierarchySample:
    """Ancestral pass through the hierarchy; works on arrays or Vars."""
    z = tensors["mu_te"] + G.exp(tensors["tau_te"] * 0.5) * noise[0]
    levels = [z]
    kernels = []
    for j in range(1, config.k):
        t, s = config.times[j - 1], config.times[j]
        p = prior_transition(schedule, denoiser, z, s, t, config.eta)
        gamma = G.sigmoid(tensors["gamma"][j - 1])
        mean = gamma * p.mean + (1.0 - gamma) * tensors["mu"][j - 1]
        tau = G.exp(tensors["tau"][j - 1] * 0.5)
        q = DiagGaussian(mean, tau)
        z = q.sample(noise[j])
        levels.append(z)
        kernels.append((q, p))
    return HierarchySample(levels, noise, kernels)


def sample_hierarchy(
    params: VipaintParams,
    config: VipaintConfig,
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    n_chains: int,
    seed: int,
    step: int = 0,
) -> HierarchySample:
    """M reparameterised trajectories; noise from the per-chain substreams of `step`."""
    noise = draw_step_noise(config, params.mu_te.size, n_chains, seed, step)
    return _rollout(params.as_dict(), config, schedule, denoiser, noise.levels)


def _objective(
    tensors: Dict[str, Tensor],
    config: VipaintConfig,
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    op: MeasurementOp,
    y: np.ndarray,
    noise: StepNoise,
) -> Tuple[Tensor, Dict[str, float]]:
    sample = _rollout(tensors, config, schedule, denoiser, noise.levels)

    # reconstruction through the one-step prediction at T_s
    z_ts = sample.levels[-1]
    alpha_ts, sigma_ts = alpha_sigma(schedule, config.ts)
    x0 = (z_ts - denoiser.eps(z_ts, config.ts) * sigma_ts) * (1.0 / alpha_ts)
    recon = op.neg_log_likelihood(y, x0)

    hier = 0.0
    for q, p in sample.kernels:
        hier = kl_diag(q, p) + hier

    # diffusion term on one grid pair shared across chains
    t, s = diffusion_pairs(config, schedule)[noise.t_index]
    z_te = sample.levels[0]
    a_tte, v_tte = transition_coefficients(schedule, config.te, t)
    z_t = z_te * a_tte + np.sqrt(v_tte) * noise.diffusion
    eps_t = denoiser.eps(z_t, t)
    diff = kl_diag(
        bridge_posterior(schedule, z_t, z_te, s, t, config.te),
        bridge_prior(schedule, denoiser, z_t, s, t, config.te, eps=eps_t),
    ) * float(config.diffusion_grid)

    per_chain = recon + (hier + diff) * config.beta
    total = G.mean(per_chain)
    breakdown = {
        "total": float(G.value_of(total)),
        "recon": float(np.mean(G.value_of(recon))),
        "hier_kl": float(np.mean(G.value_of(hier))),
        "diff_kl": float(np.mean(G.value_of(diff))),
    }
    for term, value in breakdown.items():
        if not np.isfinite(value):
            raise NumericalAbort("objective is not finite", method="vipaint", term=term)
    return total, breakdown


def loss(
    params: VipaintParams,
    config: VipaintConfig,
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    op: MeasurementOp,
    y: np.ndarray,
    n_chains: int,
    seed: int,
    step: int = 0,
    noise: Optional[StepNoise] = None,
) -> Tuple[float, Dict[str, float]]:
    """Monte-Carlo objective and its per-term breakdown (chain means)."""
    if noise is None:
        noise = draw_step_noise(config, params.mu_te.size, n_chains, seed, step)
    _, breakdown = _objective(params.as_dict(), config, schedule, denoiser, op, np.asarray(y, dtype=float), noise)
    return breakdown["total"], breakdown


def loss_grad(
    params: VipaintParams,
    config: VipaintConfig,
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    op: MeasurementOp,
    y: np.ndarray,
    n_chains: int,
    seed: int,
    step: int = 0,
    noise: Optional[StepNoise] = None,
) -> Tuple[float, Dict[str, float], VipaintParams]:
    """Objective, breakdown and reverse-mode gradient with respect to every parameter."""
    if noise is None:
        noise = draw_step_noise(config, params.mu_te.size, n_chains, seed, step)
    tape = G.Tape()
    leaves = {name: tape.leaf(value, name) for name, value in params.as_dict().items()}
    total, breakdown = _objective(leaves, config, schedule, denoiser, op, np.asarray(y, dtype=float), noise)
    grads = tape.backward(total)
    return breakdown["total"], breakdown, VipaintParams.from_dict(grads)


def optimize(
    params: VipaintParams,
    config: VipaintConfig,
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    op: MeasurementOp,
    y: np.ndarray,
    seed: int,
) -> Tuple[VipaintParams, pd.DataFrame]:
    """Phase 1: Adam with per-group rates and step decay, fresh noise every step."""
    factor, every = config.lr_decay
    optimizer = Adam(config.lrs, group_of=PARAM_GROUPS.__getitem__, decay_factor=factor, decay_every=every)
    current = params.as_dict()
    rows = []
    for step in range(config.opt_steps):
        try:
            _, breakdown, grads = loss_grad(
                VipaintParams.from_dict(current), config, schedule, denoiser, op, y, config.n_mc, seed, step
            )
        except NumericalAbort as exc:
            raise NumericalAbort("objective is not finite", method="vipaint", step=step, term=exc.term) from exc
        rows.append({"step": step, **breakdown})
        current = optimizer.step(current, grads.as_dict())
        if not all(np.all(np.isfinite(v)) for v in current.values()):
            raise NumericalAbort("parameters diverged", method="vipaint", step=step, term="params")
        if step % 10 == 0:
            logger.debug(
                "step %d total %.4f recon %.4f hier %.4f diff %.4f",
                step, breakdown["total"], breakdown["recon"], breakdown["hier_kl"], breakdown["diff_kl"],
            )
    return VipaintParams.from_dict(current), pd.DataFrame(rows, columns=TRACE_COLUMNS)


def phase2_sample(
    params: VipaintParams,
    config: VipaintConfig,
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    op: MeasurementOp,
    y: np.ndarray,
    n_samples: int,
    seed: int,
) -> np.ndarray:
    """Sample the fitted hierarchy to T_s, then guided ancestral steps down to t_min."""
    dim = params.mu_te.size
    if n_samples == 0:
        return np.zeros((0, dim))
    y = np.asarray(y, dtype=float)
    rng = substream(seed, "phase2")
    noise = rng.standard_normal((config.k, n_samples, dim))
    z = _rollout(params.as_dict(), config, schedule, denoiser, noise).levels[-1]

    grid = sampling_grid(schedule, config.phase2_steps, t_hi=config.ts, rho=config.rho)
    for i, (t, s) in enumerate(grid.pairs()):
        step_noise = substream(seed, "phase2-step", i).standard_normal(z.shape)
        z = guided_step(
            schedule, denoiser, op, y, z, s, t, step_noise,
            zeta=config.zeta, eta=config.eta, normalize=config.normalize_guidance,
        )
    return final_prediction(denoiser, z, grid.points[-1])


def calls_per_step(config: VipaintConfig) -> int:
    """Denoiser evaluations per chain per phase-1 step: K - 1 transitions, reconstruction, diffusion term."""
    return config.k + 1
