# Runs the inference methods
# Goal: Execute one method per seed, in parallel worker slots when asked.
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Optional, Union

from core.experiment_config import VIPAINT, build_method_config
from core.models import AgentMessage, MethodResult, Problem, Scenario
from tools import baseline_tool, vipaint_tool
from tools.baseline_tool import BaselineConfig, BaselineMethod
from tools.operator_tool import fill_observation
from tools.vipaint_tool import VipaintConfig

logger = logging.getLogger(__name__)


def run_vipaint(problem: Problem, config: VipaintConfig, seed: int, n_samples: int) -> MethodResult:
    denoiser = problem.denoiser.with_counter()
    params = vipaint_tool.init_params(config, problem.schedule, fill_observation(problem.op, problem.y), seed)
    params, trace = vipaint_tool.optimize(params, config, problem.schedule, denoiser, problem.op, problem.y, seed)
    # batched over the M chains, so the counter is already per chain
    phase1 = denoiser.calls
    denoiser.reset_calls()
    samples = vipaint_tool.phase2_sample(
        params, config, problem.schedule, denoiser, problem.op, problem.y, n_samples, seed
    )
    return MethodResult(
        method=VIPAINT,
        seed=seed,
        samples=samples,
        calls={"phase1_per_chain": phase1, "sampling": denoiser.calls},
        trace=trace,
    )


def run_baseline(problem: Problem, config: BaselineConfig, seed: int, n_samples: int) -> MethodResult:
    denoiser = problem.denoiser.with_counter()
    args = (problem.schedule, denoiser, problem.op, problem.y, n_samples, seed)
    method = config.method
    trace = None
    if method is BaselineMethod.BLENDED:
        samples = baseline_tool.blended_sample(*args, steps=config.steps, eta=config.eta)
    elif method is BaselineMethod.REPAINT:
        samples = baseline_tool.repaint_sample(
            *args, steps=config.steps, jump_length=config.jump_length, jump_count=config.jump_count, eta=config.eta
        )
    elif method is BaselineMethod.DPS:
        samples = baseline_tool.dps_sample(
            *args, zeta=config.zeta, steps=config.steps, eta=config.eta, normalize=config.normalize_guidance
        )
    else:
        samples, trace = baseline_tool.reddiff_sample(
            *args,
            steps=config.steps,
            lr=config.lr,
            weight=config.weight,
            annealed=method is BaselineMethod.REDDIFF,
        )
    return MethodResult(
        method=method.value,
        seed=seed,
        samples=samples,
        calls={"sampling": denoiser.calls},
        trace=trace,
    )


def run_method(
    problem: Problem,
    method_config: Union[VipaintConfig, BaselineConfig],
    seed: int,
    n_samples: int,
) -> MethodResult:
    started = time.perf_counter()
    if isinstance(method_config, VipaintConfig):
        result = run_vipaint(problem, method_config, seed, n_samples)
    else:
        result = run_baseline(problem, method_config, seed, n_samples)
    result.wall_time = time.perf_counter() - started
    return result


class SimulationAgent:
    """
    SimulationAgent

    Receives a SCENARIOS batch, runs the method for every seed (up to
    `threads` at once, each with its own denoiser call counter) and sends
    one SIM_RESULT per seed to EvaluationAgent, in seed order.
    """

    def __init__(self, threads: Optional[int] = None) -> None:
        self.threads = threads

    def handle_message(self, msg: AgentMessage, bus: "MessageBus") -> None:
        if msg.type != "SCENARIOS":
            logger.debug("SimulationAgent ignoring message type %s", msg.type)
            return

        problem: Problem = msg.payload["problem"]
        scenarios: List[Scenario] = msg.payload["scenarios"]
        threads = max(1, int(self.threads or msg.payload.get("threads", 1)))
        method = msg.payload["method"]
        method_config = build_method_config(method, problem.schedule, scenarios[0].settings if scenarios else {})

        logger.info(
            "SimulationAgent running %s on %d seeds with %d worker(s) (run %s)",
            method,
            len(scenarios),
            threads,
            msg.run_id,
        )

        def execute(scenario: Scenario) -> Dict[str, Any]:
            try:
                result = run_method(problem, method_config, scenario.seed, scenario.n_samples)
            except Exception as e:  # noqa: BLE001
                logger.exception("%s seed %d failed: %s", method, scenario.seed, e)
                return {"scenario": scenario, "error": e}
            result.run_dir = scenario.run_dir
            logger.info("%s seed %d done in %.2fs, calls %s", method, scenario.seed, result.wall_time, result.calls)
            return {"scenario": scenario, "result": result}

        if threads == 1:
            outcomes = [execute(s) for s in scenarios]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(execute, scenarios))

        for outcome in outcomes:
            if "error" in outcome:
                bus.record_failure("SimulationAgent", msg, outcome["error"])
            bus.send(
                AgentMessage(
                    sender="SimulationAgent",
                    receiver="EvaluationAgent",
                    type="SIM_RESULT",
                    payload={"problem": problem, "config": msg.payload["config"], "out_dir": msg.payload["out_dir"], **outcome},
                    run_id=msg.run_id,
                )
            )
