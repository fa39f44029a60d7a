# Noise-prediction networks: interface, exact GMM denoiser, small MLP
"""
tools.denoiser_tool

A Denoiser predicts the noise eps_hat(z_t, t) in z_t = alpha_t x + sigma_t eps
and exposes its vector-Jacobian product with respect to z_t. The generic
`eps` entry point returns a grad_tool Var when given one, so diffusion
formulas can be differentiated through denoiser calls.

Every forward evaluation (one batched call, whatever the batch size) bumps
the call counter used for cost accounting.
"""

from __future__ import annotations

import copy
import logging
import threading
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit, logsumexp

from core.config import MLP_HIDDEN, MLP_TIME_FEATURES
from core.errors import DomainError, NumericalAbort
from tools import grad_tool as G
from tools.gmm_tool import GmmPrior
from tools.optim_tool import Adam
from tools.rng_tool import substream
from tools.schedule_tool import NoiseSchedule, alpha_sigma

logger = logging.getLogger(__name__)

Tensor = Union[np.ndarray, G.Var]


class Denoiser(ABC):
    """Noise predictor eps_hat(z_t, t) with reverse-mode support."""

    def __init__(self, schedule: NoiseSchedule) -> None:
        self.schedule = schedule
        self._calls = 0
        self._lock = threading.Lock()

    @abstractmethod
    def _predict(self, z_t: np.ndarray, t: float) -> np.ndarray:
        """Raw eps prediction for z_t of shape (..., d)."""

    @abstractmethod
    def _vjp(self, z_t: np.ndarray, t: float, cotangent: np.ndarray) -> np.ndarray:
        """cotangent^T d eps_hat / d z_t, same shape as z_t."""

    @property
    def calls(self) -> int:
        with self._lock:
            return self._calls

    def reset_calls(self) -> None:
        with self._lock:
            self._calls = 0

    def with_counter(self) -> "Denoiser":
        """Shallow copy sharing parameters but with its own call counter."""
        clone = copy.copy(self)
        clone._calls = 0
        clone._lock = threading.Lock()
        return clone

    def eps_hat(self, z_t: np.ndarray, t: float) -> np.ndarray:
        with self._lock:
            self._calls += 1
        return self._predict(np.asarray(z_t, dtype=float), t)

    def x_hat(self, z_t: np.ndarray, t: float) -> np.ndarray:
        """One-step prediction (z_t - sigma_t eps_hat) / alpha_t."""
        alpha, sigma = alpha_sigma(self.schedule, t)
        z_t = np.asarray(z_t, dtype=float)
        return (z_t - sigma * self.eps_hat(z_t, t)) / alpha

    def vjp(self, z_t: np.ndarray, t: float, cotangent: np.ndarray) -> np.ndarray:
        return self._vjp(np.asarray(z_t, dtype=float), t, np.asarray(cotangent, dtype=float))

    def eps(self, z_t: Tensor, t: float) -> Tensor:
        """eps_hat that records an opaque node when z_t is a Var."""
        if not G.is_var(z_t):
            return self.eps_hat(z_t, t)
        z_value = z_t.value
        out = self.eps_hat(z_value, t)
        return z_t.tape.custom([z_t], out, lambda g: (self._vjp(z_value, t, g),))


# --- exact denoiser for Gaussian-mixture data ---


class GmmDenoiser(Denoiser):
    """Bayes-optimal eps for a diagonal GMM prior."""

    def __init__(self, prior: GmmPrior, schedule: NoiseSchedule) -> None:
        super().__init__(schedule)
        self.prior = prior

    def _terms(self, z_t: np.ndarray, t: float):
        alpha, sigma = alpha_sigma(self.schedule, t)
        m = self.prior.means
        c = self.prior.covs
        s = alpha**2 * c + sigma**2  # (K, d)
        diff = z_t[..., None, :] - alpha * m  # (..., K, d)
        log_r = np.log(self.prior.weights) - 0.5 * np.sum(np.log(2.0 * np.pi * s) + diff**2 / s, axis=-1)
        r = np.exp(log_r - logsumexp(log_r, axis=-1, keepdims=True))  # (..., K)
        gain = alpha * c / s  # D_k
        post_means = m + gain * diff  # (..., K, d)
        return alpha, sigma, r, s, diff, gain, post_means

    def posterior_mean(self, z_t: np.ndarray, t: float) -> np.ndarray:
        """E[x | z_t]."""
        _, _, r, _, _, _, post_means = self._terms(np.asarray(z_t, dtype=float), t)
        return np.einsum("...k,...kd->...d", r, post_means)

    def responsibilities(self, z_t: np.ndarray, t: float) -> np.ndarray:
        return self._terms(np.asarray(z_t, dtype=float), t)[2]

    def _predict(self, z_t: np.ndarray, t: float) -> np.ndarray:
        alpha, sigma, r, _, _, _, post_means = self._terms(z_t, t)
        mean = np.einsum("...k,...kd->...d", r, post_means)
        return (z_t - alpha * mean) / sigma

    def _vjp(self, z_t: np.ndarray, t: float, cotangent: np.ndarray) -> np.ndarray:
        alpha, sigma, r, s, diff, gain, post_means = self._terms(z_t, t)
        g = -diff / s  # d log N_k / d z
        g_bar = np.einsum("...k,...kd->...d", r, g)
        direct = np.einsum("...k,...kd->...d", r, gain) * cotangent
        proj = np.einsum("...kd,...d->...k", post_means, cotangent)
        resp = np.einsum("...k,...kd->...d", r * proj, g) - np.sum(r * proj, axis=-1, keepdims=True) * g_bar
        jt_c = direct + resp
        return (cotangent - alpha * jt_c) / sigma


def gmm_eps_hat(prior: GmmPrior, schedule: NoiseSchedule, z_t: np.ndarray, t: float) -> np.ndarray:
    return GmmDenoiser(prior, schedule).eps_hat(z_t, t)


def gmm_vjp(prior: GmmPrior, schedule: NoiseSchedule, z_t: np.ndarray, t: float, cotangent: np.ndarray) -> np.ndarray:
    return GmmDenoiser(prior, schedule).vjp(z_t, t, cotangent)


# --- trainable MLP ---


def _silu(x: np.ndarray) -> np.ndarray:
    return x * expit(x)


def _silu_grad(x: np.ndarray) -> np.ndarray:
    s = expit(x)
    return s + x * s * (1.0 - s)


class MlpDenoiser(Denoiser):
    """
    Feed-forward eps predictor.

    Input: c_in * z_t (c_in = 1 / sqrt(alpha^2 + sigma^2)) concatenated with
    sinusoidal features of log sigma_t; SiLU hidden layers; linear output.
    """

    def __init__(
        self,
        dim: int,
        schedule: NoiseSchedule,
        hidden: Sequence[int] = MLP_HIDDEN,
        time_features: int = MLP_TIME_FEATURES,
        seed: int = 0,
        params: Optional[Dict[str, np.ndarray]] = None,
    ) -> None:
        super().__init__(schedule)
        if time_features % 2 != 0:
            raise DomainError(f"time features must be even, got {time_features}")
        self.dim = int(dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.time_features = int(time_features)
        self.seed = int(seed)
        self.loss_trace: Optional[pd.DataFrame] = None
        self.params = params if params is not None else self._init_params()

    @property
    def widths(self) -> List[int]:
        return [self.dim + self.time_features, *self.hidden, self.dim]

    def _init_params(self) -> Dict[str, np.ndarray]:
        rng = substream(self.seed, "mlp-init")
        params = {}
        widths = self.widths
        for layer, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            params[f"W{layer}"] = rng.standard_normal((fan_in, fan_out)) * np.sqrt(1.0 / fan_in)
            params[f"b{layer}"] = np.zeros(fan_out)
        return params

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def _features(self, t: float) -> Tuple[float, np.ndarray]:
        alpha, sigma = alpha_sigma(self.schedule, t)
        freqs = 2.0 ** (np.arange(self.time_features // 2, dtype=float) - 1.0)
        phase = np.log(sigma) * freqs
        return 1.0 / np.sqrt(alpha**2 + sigma**2), np.concatenate([np.sin(phase), np.cos(phase)])

    def _forward(self, z_t: np.ndarray, t: float, params: Dict[str, np.ndarray]):
        c_in, feats = self._features(t)
        batch_shape = z_t.shape[:-1]
        h = np.concatenate([c_in * z_t, np.broadcast_to(feats, batch_shape + feats.shape)], axis=-1)
        cache = [h]
        for layer in range(self.n_layers):
            pre = h @ params[f"W{layer}"] + params[f"b{layer}"]
            if layer < self.n_layers - 1:
                cache.append(pre)
                h = _silu(pre)
                cache.append(h)
            else:
                h = pre
        return h, cache, c_in

    def _backward(self, cache: List[np.ndarray], grad_out: np.ndarray, params: Dict[str, np.ndarray], want_params: bool):
        grads: Dict[str, np.ndarray] = {}
        g = grad_out
        for layer in reversed(range(self.n_layers)):
            h_in = cache[2 * layer]
            if want_params:
                flat_h = h_in.reshape(-1, h_in.shape[-1])
                flat_g = g.reshape(-1, g.shape[-1])
                grads[f"W{layer}"] = flat_h.T @ flat_g
                grads[f"b{layer}"] = flat_g.sum(axis=0)
            g = g @ params[f"W{layer}"].T
            if layer > 0:
                g = g * _silu_grad(cache[2 * layer - 1])
        return g, grads

    def _predict(self, z_t: np.ndarray, t: float) -> np.ndarray:
        out, _, _ = self._forward(z_t, t, self.params)
        return out

    def _vjp(self, z_t: np.ndarray, t: float, cotangent: np.ndarray) -> np.ndarray:
        _, cache, c_in = self._forward(z_t, t, self.params)
        g_in, _ = self._backward(cache, cotangent, self.params, want_params=False)
        return c_in * g_in[..., : self.dim]

    def loss_and_grads(
        self, x: np.ndarray, noise: np.ndarray, t: float
    ) -> Tuple[float, Dict[str, np.ndarray]]:
        """Mean over the batch of ||eps - eps_hat(z_t, t)||^2 and its parameter gradient."""
        alpha, sigma = alpha_sigma(self.schedule, t)
        z_t = alpha * x + sigma * noise
        out, cache, _ = self._forward(z_t, t, self.params)
        resid = out - noise
        n = x.shape[0]
        loss = float(np.sum(resid**2) / n)
        _, grads = self._backward(cache, 2.0 * resid / n, self.params, want_params=True)
        return loss, grads

    def header(self) -> Dict[str, object]:
        return {
            "dim": self.dim,
            "widths": self.widths,
            "hidden": list(self.hidden),
            "time_features": self.time_features,
            "schedule": self.schedule.to_dict(),
            "seed": self.seed,
        }


def train_mlp(
    denoiser: MlpDenoiser,
    data: np.ndarray,
    schedule: NoiseSchedule,
    steps: int,
    lr: float = 1e-3,
    batch: int = 128,
    seed: int = 0,
    grid_size: int = 1000,
) -> MlpDenoiser:
    """
    Adam on E_{eps, t}[||eps - eps_hat(z_t, t)||^2], t uniform on a training grid.

    `schedule` must be the one the network was built for; its time features
    and the training grid both follow it. Updates the denoiser in place,
    stores the loss trace on `denoiser.loss_trace` and returns it.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 0:
        raise DomainError("training data is empty")
    if data.shape[1] != denoiser.dim:
        raise DomainError(f"data dimension {data.shape[1]} != denoiser dimension {denoiser.dim}")

    if schedule.to_dict() != denoiser.schedule.to_dict():
        raise DomainError("training schedule differs from the denoiser's schedule")
    if steps < 0:
        raise DomainError(f"training steps must be nonnegative, got {steps}")
    grid = np.linspace(schedule.t_min, schedule.T, grid_size)
    optimizer = Adam({"all": lr}, group_of=lambda name: "all")
    rows = []
    logger.info("Training MLP denoiser: %d steps, batch %d, lr %.1e", steps, batch, lr)

    for step in range(steps):
        rng = substream(seed, "mlp-train", step)
        idx = rng.integers(0, data.shape[0], size=batch)
        t = float(grid[rng.integers(0, grid_size)])
        noise = rng.standard_normal((batch, denoiser.dim))
        loss, grads = denoiser.loss_and_grads(data[idx], noise, t)
        if not np.isfinite(loss):
            raise NumericalAbort("training loss is not finite", method="train_mlp", step=step, term="loss")
        params = optimizer.step(denoiser.params, grads)
        if not all(np.all(np.isfinite(v)) for v in params.values()):
            raise NumericalAbort("parameters diverged", method="train_mlp", step=step, term="params")
        denoiser.params = params
        rows.append({"step": step, "t": t, "loss": loss})
        if step % 500 == 0:
            logger.debug("step %d loss %.5f", step, loss)

    denoiser.loss_trace = pd.DataFrame(rows, columns=["step", "t", "loss"])
    return denoiser
