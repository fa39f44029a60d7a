# Fast numerical invariant suite behind the `selfcheck` CLI verb
"""
eval.selfcheck

Each check returns (passed, detail). run_selfcheck prints a rich table and
returns True when every check passed.

Run via:
    python main.py selfcheck
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
from rich.console import Console
from rich.table import Table
from scipy.integrate import trapezoid
from scipy.stats import norm

ROOT_DIR = Path(__file__).resolve().parents[1]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from tools import grad_tool as G  # noqa: E402
from tools.denoiser_tool import GmmDenoiser  # noqa: E402
from tools.diffusion_tool import DiagGaussian, bridge_posterior, kl_diag, reverse_conditional  # noqa: E402
from tools.gmm_tool import GmmPrior  # noqa: E402
from tools.operator_tool import MeasurementOp  # noqa: E402
from tools.rng_tool import substream  # noqa: E402
from tools.schedule_tool import NoiseSchedule, alpha_sigma, transition_coefficients  # noqa: E402
from tools.vipaint_tool import VipaintConfig, calls_per_step  # noqa: E402

logger = logging.getLogger(__name__)

CheckResult = Tuple[bool, str]

SCHEDULES = {"VE": NoiseSchedule.ve(), "VP": NoiseSchedule.vp()}


def check_vp_identity() -> CheckResult:
    schedule = SCHEDULES["VP"]
    worst = max(abs(a**2 + s**2 - 1.0) for a, s in (alpha_sigma(schedule, t) for t in np.linspace(schedule.t_min, 1.0, 257)))
    return worst < 1e-12, f"max |alpha^2 + sigma^2 - 1| = {worst:.1e}"


def check_composition() -> CheckResult:
    worst = 0.0
    for schedule in SCHEDULES.values():
        for s, u, t in [(0.05, 0.3, 0.7), (0.2, 0.5, 0.9), (0.01, 0.02, 0.03)]:
            a_su, v_su = transition_coefficients(schedule, s, u)
            a_ut, v_ut = transition_coefficients(schedule, u, t)
            a_st, v_st = transition_coefficients(schedule, s, t)
            worst = max(worst, abs(a_su * a_ut - a_st), abs(v_ut + a_ut**2 * v_su - v_st) / max(v_st, 1.0))
    return worst < 1e-12, f"max composition error = {worst:.1e}"


def _grid_check(target: DiagGaussian, unnormalised: Callable[[np.ndarray], np.ndarray]) -> float:
    mean, std = float(target.mean[0]), float(target.std[0])
    grid = np.linspace(mean - 12 * std, mean + 12 * std, 20001)
    density = unnormalised(grid)
    density = density / trapezoid(density, grid)
    return float(np.max(np.abs(density - norm.pdf(grid, mean, std))) * std)


def check_reverse_conditional() -> CheckResult:
    worst = 0.0
    for schedule in SCHEDULES.values():
        s, t, x, z_t = 0.3, 0.6, 0.7, 1.1
        a_s, sig_s = alpha_sigma(schedule, s)
        a_ts, v_ts = transition_coefficients(schedule, s, t)
        target = reverse_conditional(schedule, np.array([z_t]), np.array([x]), s, t)
        worst = max(
            worst,
            _grid_check(
                target,
                lambda z: norm.pdf(z_t, a_ts * z, np.sqrt(v_ts)) * norm.pdf(z, a_s * x, sig_s),
            ),
        )
    return worst < 1e-6, f"max scaled density error = {worst:.1e}"


def check_bridge_posterior() -> CheckResult:
    worst = 0.0
    for schedule in SCHEDULES.values():
        te, s, t, z_te, z_t = 0.3, 0.5, 0.7, 0.4, -0.2
        a_ts, v_ts = transition_coefficients(schedule, s, t)
        a_ste, v_ste = transition_coefficients(schedule, te, s)
        target = bridge_posterior(schedule, np.array([z_t]), np.array([z_te]), s, t, te)
        worst = max(
            worst,
            _grid_check(
                target,
                lambda z: norm.pdf(z_t, a_ts * z, np.sqrt(v_ts)) * norm.pdf(z, a_ste * z_te, np.sqrt(v_ste)),
            ),
        )
    return worst < 1e-6, f"max scaled density error = {worst:.1e}"


def check_kl_monte_carlo(n_pairs: int = 5, n_draws: int = 100_000) -> CheckResult:
    rng = substream(0, "selfcheck-kl")
    worst = 0.0
    for _ in range(n_pairs):
        q = DiagGaussian(rng.normal(size=3), rng.uniform(0.5, 1.5, size=3))
        p = DiagGaussian(rng.normal(size=3), rng.uniform(0.5, 1.5, size=3))
        x = q.sample(rng.standard_normal((n_draws, 3)))
        log_ratio = q.log_prob(x) - p.log_prob(x)
        se = log_ratio.std() / np.sqrt(n_draws)
        worst = max(worst, abs(float(kl_diag(q, p)) - log_ratio.mean()) / se)
    return worst < 3.0, f"max deviation = {worst:.2f} standard errors"


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def check_gmm_vjp() -> CheckResult:
    prior = GmmPrior(np.array([0.3, 0.7]), np.array([[-1.0, 0.5], [1.5, -0.5]]), np.array([[0.2, 0.4], [0.3, 0.1]]))
    worst = 0.0
    for schedule in SCHEDULES.values():
        denoiser = GmmDenoiser(prior, schedule)
        z, c, t, h = np.array([0.3, -0.4]), np.array([0.7, -1.2]), 0.4, 1e-6
        fd = np.array([
            (c @ denoiser.eps_hat(z + h * e, t) - c @ denoiser.eps_hat(z - h * e, t)) / (2 * h) for e in np.eye(2)
        ])
        worst = max(worst, _relative(denoiser.vjp(z, t, c), fd))
    return worst < 1e-5, f"relative error = {worst:.1e}"


def check_tape() -> CheckResult:
    x0 = np.array([0.3, -1.2, 2.0])

    def f(x):
        return G.sum_(G.sigmoid(x) * G.exp(x * 0.5) + G.log(G.square(x) + 1.0))

    tape = G.Tape()
    grads = tape.backward(f(tape.leaf(x0, "x")))["x"]
    h = 1e-6
    fd = np.array([(f(x0 + h * e) - f(x0 - h * e)) / (2 * h) for e in np.eye(3)])
    err = _relative(grads, fd)
    return err < 1e-6, f"relative error = {err:.1e}"


def check_adjoints() -> CheckResult:
    rng = substream(0, "selfcheck-adjoint")
    ops = [
        MeasurementOp.masking(np.array([1, 0, 1, 1, 0, 0, 1, 0, 1]), 0.1),
        MeasurementOp.blur(9, 3, 1.0, 0.1, image_shape=(3, 3)),
        MeasurementOp.downsample(16, 2, 0.1, image_shape=(4, 4)),
    ]
    worst = 0.0
    for op in ops:
        x, u = rng.normal(size=op.dim), rng.normal(size=op.out_dim)
        worst = max(worst, abs(op.apply(x) @ u - x @ op.adjoint(u)))
    return worst < 1e-12, f"max |<Ax,u> - <x,A^T u>| = {worst:.1e}"


def check_call_accounting() -> CheckResult:
    config = VipaintConfig.preset("vipaint-2", SCHEDULES["VE"])
    total = calls_per_step(config) * config.opt_steps
    return total == 150, f"K=2 over {config.opt_steps} steps -> {total} calls per chain"


CHECKS: List[Tuple[str, Callable[[], CheckResult]]] = [
    ("VP identity", check_vp_identity),
    ("transition composition", check_composition),
    ("reverse conditional (grid Bayes)", check_reverse_conditional),
    ("bridge posterior (grid Bayes)", check_bridge_posterior),
    ("KL vs Monte Carlo", check_kl_monte_carlo),
    ("GMM denoiser VJP", check_gmm_vjp),
    ("gradient tape", check_tape),
    ("operator adjoints", check_adjoints),
    ("denoiser call accounting", check_call_accounting),
]


def run_selfcheck(console: Optional[Console] = None) -> bool:
    console = console or Console()
    table = Table(title="selfcheck")
    table.add_column("check")
    table.add_column("result")
    table.add_column("detail")
    all_passed = True
    for name, check in CHECKS:
        try:
            passed, detail = check()
        except Exception as e:  # noqa: BLE001
            logger.exception("Check %s raised", name)
            passed, detail = False, f"{type(e).__name__}: {e}"
        all_passed &= passed
        table.add_row(name, "[green]pass[/green]" if passed else "[red]FAIL[/red]", detail)
    console.print(table)
    return bool(all_passed)


if __name__ == "__main__":
    sys.exit(0 if run_selfcheck() else 1)
