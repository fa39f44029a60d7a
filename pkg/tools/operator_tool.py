# Linear measurement operators and observation likelihoods
"""
tools.operator_tool

MeasurementOp bundles a linear degradation A (mask, Gaussian blur or block
downsampling), the measurement noise level sigma_v and the observation model
(Gaussian or Laplace) used as the reconstruction likelihood.

Vectors of dimension `dim` can be viewed as images of `image_shape`; blur
and downsampling then act separably along both axes (Kronecker products of
1-D banded matrices, zero padding at the border). Leading axes of inputs are
batch axes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple, Union

import numpy as np

from core.errors import DomainError
from tools import grad_tool as G
from tools.rng_tool import substream

logger = logging.getLogger(__name__)

Tensor = Union[np.ndarray, G.Var]


class OperatorKind(str, Enum):
    MASK = "mask"
    BLUR = "blur"
    DOWNSAMPLE = "downsample"


class ObsModel(str, Enum):
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"


def gaussian_kernel(size: int, std: float) -> np.ndarray:
    """Normalised odd-length 1-D Gaussian kernel; size 1 is the delta kernel."""
    if size < 1 or size % 2 == 0:
        raise DomainError(f"kernel size must be odd and positive, got {size}")
    if size == 1:
        return np.ones(1)
    if std <= 0.0:
        raise DomainError(f"kernel std must be positive, got {std}")
    r = size // 2
    taps = np.exp(-0.5 * (np.arange(-r, r + 1) / std) ** 2)
    return taps / taps.sum()


def _conv_matrix(n: int, kernel: np.ndarray) -> np.ndarray:
    """Banded n x n matrix of a centred 1-D convolution with zero padding."""
    r = kernel.size // 2
    mat = np.zeros((n, n))
    for offset in range(-r, r + 1):
        mat += kernel[offset + r] * np.eye(n, k=offset)
    return mat


def _block_average_matrix(n: int, factor: int) -> np.ndarray:
    if n % factor != 0:
        raise DomainError(f"length {n} is not divisible by downsampling factor {factor}")
    return np.kron(np.eye(n // factor), np.full((1, factor), 1.0 / factor))


@dataclass(frozen=True, eq=False)
class MeasurementOp:
    kind: OperatorKind
    dim: int
    sigma_v: float
    obs_model: ObsModel = ObsModel.GAUSSIAN
    laplace_scale: Optional[float] = None
    mask: Optional[np.ndarray] = None
    kernel: Optional[np.ndarray] = None
    factor: int = 1
    image_shape: Optional[Tuple[int, int]] = None
    _matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", OperatorKind(self.kind))
        object.__setattr__(self, "obs_model", ObsModel(self.obs_model))
        if self.dim < 1:
            raise DomainError(f"dimension must be positive, got {self.dim}")
        if self.sigma_v < 0.0:
            raise DomainError(f"sigma_v must be nonnegative, got {self.sigma_v}")
        if self.laplace_scale is not None and self.laplace_scale <= 0.0:
            raise DomainError(f"laplace scale must be positive, got {self.laplace_scale}")
        if self.image_shape is not None:
            h, w = self.image_shape
            if h * w != self.dim:
                raise DomainError(f"image shape {self.image_shape} does not match dimension {self.dim}")
        object.__setattr__(self, "_matrix", self._build_matrix())

    # --- construction ---

    @classmethod
    def masking(cls, mask, sigma_v: float, **kwargs) -> "MeasurementOp":
        mask = np.asarray(mask).astype(bool).ravel()
        return cls(OperatorKind.MASK, mask.size, sigma_v, mask=mask, **kwargs)

    @classmethod
    def blur(cls, dim: int, size: int, std: float, sigma_v: float, **kwargs) -> "MeasurementOp":
        return cls(OperatorKind.BLUR, dim, sigma_v, kernel=gaussian_kernel(size, std), **kwargs)

    @classmethod
    def downsample(cls, dim: int, factor: int, sigma_v: float, **kwargs) -> "MeasurementOp":
        return cls(OperatorKind.DOWNSAMPLE, dim, sigma_v, factor=factor, **kwargs)

    def _build_matrix(self) -> np.ndarray:
        if self.kind is OperatorKind.MASK:
            if self.mask is None or self.mask.size != self.dim:
                raise DomainError("mask operator needs a mask of length dim")
            mask = np.asarray(self.mask, dtype=bool)
            object.__setattr__(self, "mask", mask)
            return np.eye(self.dim)[mask]
        if self.kind is OperatorKind.BLUR:
            kernel = np.asarray(self.kernel, dtype=float).ravel()
            if kernel.size % 2 == 0:
                raise DomainError("blur kernel length must be odd")
            object.__setattr__(self, "kernel", kernel)
            if self.image_shape is None:
                return _conv_matrix(self.dim, kernel)
            h, w = self.image_shape
            return np.kron(_conv_matrix(h, kernel), _conv_matrix(w, kernel))
        if self.factor < 2:
            raise DomainError(f"downsampling factor must be >= 2, got {self.factor}")
        if self.image_shape is None:
            return _block_average_matrix(self.dim, self.factor)
        h, w = self.image_shape
        return np.kron(_block_average_matrix(h, self.factor), _block_average_matrix(w, self.factor))

    def with_laplace_scale(self, scale: float) -> "MeasurementOp":
        return MeasurementOp(
            self.kind, self.dim, self.sigma_v, self.obs_model, scale,
            self.mask, self.kernel, self.factor, self.image_shape,
        )

    # --- linear map ---

    @property
    def out_dim(self) -> int:
        return int(self._matrix.shape[0])

    def matrix(self) -> np.ndarray:
        return self._matrix.copy()

    def _check_input(self, x: np.ndarray, size: int, what: str) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (size,):
            raise DomainError(f"{what} has trailing dimension {x.shape[-1:]}, expected {size}")
        return x

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = self._check_input(x, self.dim, "input")
        if self.kind is OperatorKind.MASK:
            return x[..., self.mask]
        return x @ self._matrix.T

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        u = self._check_input(u, self.out_dim, "cotangent")
        if self.kind is OperatorKind.MASK:
            out = np.zeros(u.shape[:-1] + (self.dim,))
            out[..., self.mask] = u
            return out
        return u @ self._matrix

    def forward(self, x: Tensor) -> Tensor:
        """apply() that also records onto a gradient tape when given a Var."""
        return G.linear(x, self.apply, self.adjoint)

    # --- likelihood ---

    def _scale(self) -> float:
        if self.obs_model is ObsModel.GAUSSIAN:
            if self.sigma_v <= 0.0:
                raise DomainError("Gaussian likelihood needs sigma_v > 0")
            return self.sigma_v
        if self.laplace_scale is None:
            raise DomainError("Laplace likelihood needs a laplace_scale")
        return self.laplace_scale

    def neg_log_likelihood(self, y: np.ndarray, x: Tensor) -> Tensor:
        """-log p(y | x), summed over the last axis; accepts a Var for x."""
        scale = self._scale()
        residual = self.forward(x) - np.asarray(y, dtype=float)
        m = self.out_dim
        if self.obs_model is ObsModel.GAUSSIAN:
            const = 0.5 * m * np.log(2.0 * np.pi * scale**2)
            return G.sum_(G.square(residual), axis=-1) * (0.5 / scale**2) + const
        return G.sum_(G.abs_(residual), axis=-1) * (1.0 / scale) + m * np.log(2.0 * scale)

    def log_likelihood(self, y: np.ndarray, x: np.ndarray) -> Union[float, np.ndarray]:
        out = -G.value_of(self.neg_log_likelihood(y, np.asarray(x, dtype=float)))
        return float(out) if np.ndim(out) == 0 else out

    def log_likelihood_grad(self, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Gradient of log_likelihood with respect to x."""
        scale = self._scale()
        residual = self.apply(x) - np.asarray(y, dtype=float)
        if self.obs_model is ObsModel.GAUSSIAN:
            return -self.adjoint(residual) / scale**2
        return -self.adjoint(np.sign(residual)) / scale

    def to_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind.value,
            "dim": self.dim,
            "sigma_v": self.sigma_v,
            "obs_model": self.obs_model.value,
            "laplace_scale": self.laplace_scale,
            "mask": None if self.mask is None else self.mask.astype(int).tolist(),
            "kernel": None if self.kernel is None else self.kernel.tolist(),
            "factor": self.factor,
            "image_shape": None if self.image_shape is None else list(self.image_shape),
        }


def default_laplace_scale(samples: np.ndarray) -> float:
    """Pooled std of all data coordinates."""
    samples = np.asarray(samples, dtype=float)
    if samples.size < 2:
        raise DomainError("need at least two values to estimate a Laplace scale")
    return float(np.std(samples))


def observe(op: MeasurementOp, x: np.ndarray, seed: int) -> np.ndarray:
    """y = A x + sigma_v * noise, noise from the "observation" substream."""
    clean = op.apply(x)
    noise = substream(seed, "observation").standard_normal(clean.shape)
    return clean + op.sigma_v * noise


def fill_observation(op: MeasurementOp, y: np.ndarray) -> np.ndarray:
    """
    Lift y to the data dimension.

    Mask: observed entries copied, the rest set to the mean of the observed
    values. Otherwise A^T y rescaled by the least-squares factor c minimising
    ||c A A^T y - y||.
    """
    y = np.asarray(y, dtype=float)
    if op.kind is OperatorKind.MASK:
        fill = float(np.mean(y)) if y.size else 0.0
        out = np.full(op.dim, fill)
        out[op.mask] = y
        return out
    back = op.adjoint(y)
    forward = op.apply(back)
    denom = float(forward @ forward)
    c = float(forward @ y) / denom if denom > 0.0 else 1.0
    return c * back
