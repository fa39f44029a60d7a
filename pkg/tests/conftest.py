"""Shared fixtures for the vipaint_bench test suite."""

import sys
from pathlib import Path
from typing import Callable

import numpy as np
import pytest

ROOT_DIR = Path(__file__).resolve().parents[1]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from tools.denoiser_tool import GmmDenoiser  # noqa: E402
from tools.gmm_tool import GmmPrior  # noqa: E402
from tools.operator_tool import MeasurementOp  # noqa: E402
from tools.schedule_tool import NoiseSchedule  # noqa: E402

CONFIGS_DIR = ROOT_DIR / "configs"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


def central_diff(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function, same shape as x."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[idx] = h
        grad[idx] = (f(x + step) - f(x - step)) / (2.0 * h)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


@pytest.fixture
def ve():
    return NoiseSchedule.ve()


@pytest.fixture
def vp():
    return NoiseSchedule.vp()


@pytest.fixture(params=["VE", "VP"])
def schedule(request):
    return NoiseSchedule.ve() if request.param == "VE" else NoiseSchedule.vp()


@pytest.fixture
def bimodal_prior():
    """Symmetric modes at (+-2, 0); observing the second coordinate keeps both."""
    return GmmPrior(
        np.array([0.5, 0.5]),
        np.array([[-2.0, 0.0], [2.0, 0.0]]),
        np.array([[0.25, 0.25], [0.25, 0.25]]),
    )


@pytest.fixture
def separated_prior():
    return GmmPrior(
        np.array([0.5, 0.5]),
        np.array([[-2.0, -2.0], [2.0, 2.0]]),
        np.array([[0.25, 0.25], [0.25, 0.25]]),
    )


@pytest.fixture
def gaussian_prior():
    return GmmPrior(np.array([1.0]), np.array([[0.5, -1.0]]), np.array([[0.4, 0.9]]))


@pytest.fixture
def asymmetric_prior():
    return GmmPrior(
        np.array([0.3, 0.7]),
        np.array([[-1.0, 0.5], [1.5, -0.5]]),
        np.array([[0.2, 0.4], [0.3, 0.1]]),
    )


@pytest.fixture
def second_coord_mask():
    return MeasurementOp.masking(np.array([0, 1]), 0.05)


@pytest.fixture
def exact_denoiser(asymmetric_prior, schedule):
    return GmmDenoiser(asymmetric_prior, schedule)


@pytest.fixture
def bimodal_config_path():
    return CONFIGS_DIR / "bimodal_mask.yaml"


SMALL_CONFIG = """\
schema_version: 1
name: small_bimodal
schedule:
  kind: VE
prior:
  weights: [0.5, 0.5]
  means: [[-2.0, 0.0], [2.0, 0.0]]
  covs: [0.25, 0.25]
operator:
  kind: mask
  mask: [0, 1]
  sigma_v: 0.05
observation:
  y: [0.0]
methods:
  vipaint:
    opt_steps: 5
    n_mc: 2
    diffusion_grid: 4
    phase2_steps: 5
  blended:
    steps: 5
  dps:
    steps: 5
    zeta: 0.3
  reddiff:
    steps: 10
seeds: "0..1"
n_samples: 4
oracle_samples: 50
"""


@pytest.fixture
def write_config(tmp_path):
    """Write YAML text into tmp_path and return its path."""

    def write(text: str = SMALL_CONFIG, name: str = "experiment.yaml") -> Path:
        path = tmp_path / name
        path.write_text(text)
        return path

    return write
