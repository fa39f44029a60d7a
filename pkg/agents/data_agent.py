# Builds the inference problem
# Goal: Turn a validated experiment config into schedule, prior, denoiser, operator, y and the exact posterior.
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from core.errors import DomainError
from core.experiment_config import build_operator, build_prior, build_schedule
from core.models import AgentMessage, ExperimentConfig, Problem
from tools.denoiser_tool import Denoiser, GmmDenoiser, MlpDenoiser, train_mlp
from tools.gmm_tool import GmmPrior, exact_posterior, sample
from tools.operator_tool import MeasurementOp, ObsModel, default_laplace_scale, observe
from tools.schedule_tool import NoiseSchedule
from tools.storage_tool import load_weights, save_trace, save_weights

logger = logging.getLogger(__name__)

LAPLACE_SCALE_DRAWS = 4096
DEFAULT_TRAINING = {"steps": 5000, "lr": 1e-3, "batch": 128, "n_data": 4096, "seed": 0}


def load_mlp(path: Union[str, Path], schedule: NoiseSchedule) -> MlpDenoiser:
    params, meta = load_weights(path)
    if meta["schedule"]["kind"] != schedule.kind.value:
        raise DomainError(
            f"weights in {path} were trained for a {meta['schedule']['kind']} schedule, "
            f"config uses {schedule.kind.value}"
        )
    return MlpDenoiser(
        meta["dim"],
        schedule,
        hidden=meta["hidden"],
        time_features=meta["time_features"],
        seed=meta["seed"],
        params=params,
    )


def train_on_prior(
    prior: GmmPrior, schedule: NoiseSchedule, settings: Optional[Dict[str, Any]] = None
) -> MlpDenoiser:
    """Fit an MLP denoiser on draws from the GMM prior."""
    opts = {**DEFAULT_TRAINING, **(settings or {})}
    data = sample(prior, opts["n_data"], opts["seed"], stream="training-data")
    kwargs = {"hidden": opts["hidden"]} if "hidden" in opts else {}
    denoiser = MlpDenoiser(prior.dim, schedule, seed=opts["seed"], **kwargs)
    return train_mlp(denoiser, data, schedule, opts["steps"], lr=opts["lr"], batch=opts["batch"], seed=opts["seed"])


def save_mlp(denoiser: MlpDenoiser, path: Union[str, Path]) -> Path:
    path = save_weights(path, denoiser.params, denoiser.header())
    if denoiser.loss_trace is not None:
        save_trace(Path(path).with_suffix(".trace.csv"), denoiser.loss_trace)
    return path


def build_denoiser(config: ExperimentConfig, schedule: NoiseSchedule, prior: GmmPrior) -> Denoiser:
    settings = config.denoiser
    if settings["kind"] == "exact":
        return GmmDenoiser(prior, schedule)
    if "weights" in settings:
        denoiser = load_mlp(settings["weights"], schedule)
        if denoiser.dim != prior.dim:
            raise DomainError(f"weights are for dimension {denoiser.dim}, prior has {prior.dim}")
        return denoiser
    return train_on_prior(prior, schedule, settings.get("train"))


def resolve_observation(
    config: ExperimentConfig, op: MeasurementOp, prior: GmmPrior
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """(y, x_true); x_true is None when y is given literally."""
    settings = config.observation
    if "y" in settings:
        return np.asarray(settings["y"], dtype=float), None
    if "x" in settings:
        x = np.asarray(settings["x"], dtype=float)
        return observe(op, x, seed=0), x
    x = sample(prior, 1, settings["seed"], stream="ground-truth")[0]
    return observe(op, x, seed=settings["seed"]), x


def build_problem(config: ExperimentConfig) -> Problem:
    schedule = build_schedule(config.schedule)
    prior = build_prior(config.prior)
    op = build_operator(config.operator, prior.dim)
    if op.obs_model is ObsModel.LAPLACE and op.laplace_scale is None:
        scale = default_laplace_scale(sample(prior, LAPLACE_SCALE_DRAWS, 0, stream="laplace-scale"))
        op = op.with_laplace_scale(scale)
        logger.info("Laplace scale defaulted to %.4f (pooled prior std)", scale)
    y, x_true = resolve_observation(config, op, prior)
    denoiser = build_denoiser(config, schedule, prior)
    posterior = exact_posterior(prior, op, y)
    return Problem(
        name=config.name,
        schedule=schedule,
        prior=prior,
        denoiser=denoiser,
        op=op,
        y=y,
        posterior=posterior,
        problem_hash=config.problem_hash,
        x_true=x_true,
        data_range=config.data_range,
    )


class DataAgent:
    """
    DataAgent

    Given LOAD_PROBLEM, builds the Problem (training an MLP denoiser if the
    config asks for one) and forwards it to the ScenarioAgent.
    """

    def handle_message(self, msg: AgentMessage, bus: "MessageBus") -> None:
        if msg.type != "LOAD_PROBLEM":
            logger.debug("DataAgent ignoring message type %s", msg.type)
            return

        config: ExperimentConfig = msg.payload["config"]
        logger.info("DataAgent building problem '%s' (run %s)", config.name, msg.run_id)

        problem = build_problem(config)
        logger.info(
            "DataAgent built %s problem: dim %d, %d observations, posterior weights %s",
            problem.op.kind.value,
            problem.op.dim,
            problem.op.out_dim,
            np.round(problem.posterior.weights, 4).tolist(),
        )

        bus.send(
            AgentMessage(
                sender="DataAgent",
                receiver="ScenarioAgent",
                type="PROBLEM",
                payload={**msg.payload, "problem": problem},
                run_id=msg.run_id,
            )
        )
