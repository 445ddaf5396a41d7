"""Glue between a validated run configuration and the restoration models."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from imrestore.core.config import RunConfig, deblur_defaults, default_deblur_nu, inpaint_defaults
from imrestore.core.errors import ConfigError
from imrestore.imaging.degrade import DegradeSpec, build_mask, mask_seed
from imrestore.imaging.metrics import MetricReport, measure
from imrestore.optim.ipmm import IpmmConfig, run
from imrestore.optim.linops import Kernel, MaskSet, make_kernel
from imrestore.optim.penalty import Penalty, PenaltyKind
from imrestore.optim.prox import BoxSet, TVKind
from imrestore.optim.trace import IterationTrace
from imrestore.problems.deblur import DeblurProblem
from imrestore.problems.inpaint import InpaintProblem, inpaint_init

logger = logging.getLogger("imrestore.pipeline")

_TASK_PENALTY = {
    "deblur": (PenaltyKind.EXP, 90.0),
    "inpaint": (PenaltyKind.POWER, 1e-5),
}


@dataclass
class RestoreResult:
    channels: list[np.ndarray]
    traces: list[IterationTrace]
    metrics: Optional[MetricReport] = None
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return all(trace.termination == "converged" for trace in self.traces)


def build_ipmm_config(defaults: dict[str, Any], overrides: dict[str, Any]) -> IpmmConfig:
    """Engine configuration from model defaults plus ``key=value`` overrides."""
    values: dict[str, Any] = dict(defaults)
    solver: dict[str, Any] = {}
    for key, value in overrides.items():
        if key.startswith("lbfgs_") or key.startswith("lbfgs."):
            solver[key[len("lbfgs_") :]] = value
        elif key in IpmmConfig.model_fields:
            values[key] = value
        else:
            raise ConfigError(key, "unknown engine parameter.")
    if solver:
        values["lbfgs"] = solver
    try:
        return IpmmConfig(**values)
    except ValidationError as exc:
        error = exc.errors()[0]
        location = ".".join(str(part) for part in error.get("loc", ())) or "engine"
        raise ConfigError(location, error["msg"]) from exc


def resolve_penalty(run_config: RunConfig, task: str) -> Penalty:
    default_kind, default_eps = _TASK_PENALTY[task]
    kind = run_config.penalty or default_kind
    eps = run_config.eps if run_config.eps is not None else (default_eps if kind is default_kind else 1.0)
    try:
        return Penalty(kind=kind, eps=eps, q=run_config.q if run_config.q is not None else 0.5)
    except ValidationError as exc:
        raise ConfigError("penalty", exc.errors()[0]["msg"]) from exc


def resolve_kernel(run_config: RunConfig) -> Kernel:
    if run_config.blur is None:
        return Kernel.identity()
    try:
        return make_kernel(run_config.blur, run_config.kernel_size, run_config.sigma)
    except ValueError as exc:
        raise ConfigError("blur", str(exc)) from exc


def deblur_channel(observed: np.ndarray, run_config: RunConfig) -> tuple[np.ndarray, IterationTrace]:
    nu = run_config.nu if run_config.nu is not None else default_deblur_nu(run_config.noise)
    problem = DeblurProblem(
        observed,
        resolve_kernel(run_config),
        resolve_penalty(run_config, "deblur"),
        nu=nu,
        box=BoxSet.unit() if run_config.box else BoxSet.unbounded(),
        tv=run_config.tv or TVKind.ISOTROPIC,
        use_fft=run_config.fft,
    )
    x0 = np.array(observed, dtype=float, copy=True)
    defaults = deblur_defaults(run_config.noise, run_config.blur, nu, problem.objective(x0))
    return run(problem, x0, build_ipmm_config(defaults, run_config.overrides))


def inpaint_channel(observed: np.ndarray, mask: MaskSet, run_config: RunConfig) -> tuple[np.ndarray, IterationTrace]:
    m, n = mask.shape
    rank = run_config.rank or min(m, n)
    if rank > min(m, n):
        raise ConfigError("rank", f"must not exceed {min(m, n)}.")
    problem = InpaintProblem(
        observed,
        mask,
        resolve_penalty(run_config, "inpaint"),
        nu=run_config.nu if run_config.nu is not None else 0.6,
        lam=run_config.lam if run_config.lam is not None else 0.5,
        rank=rank,
        tv=run_config.tv or TVKind.ANISOTROPIC,
    )
    x0 = inpaint_init(observed, mask, rank)
    factors, trace = run(problem, x0, build_ipmm_config(inpaint_defaults(), run_config.overrides))
    return np.clip(factors.image(), 0.0, 1.0), trace


def resolve_mask(run_config: RunConfig, shape: tuple[int, int]) -> MaskSet:
    if run_config.mask is None:
        return MaskSet.full(shape)
    spec = DegradeSpec(mask=run_config.mask, mask_missing=run_config.mask_missing, seed=run_config.seed)
    try:
        return build_mask(spec, shape, mask_seed(run_config.seed))
    except ValueError as exc:
        raise ConfigError("mask", str(exc)) from exc


def restore(
    channels: Sequence[np.ndarray],
    run_config: RunConfig,
    workers: int = 1,
    reference: Optional[Sequence[np.ndarray]] = None,
    mask: Optional[MaskSet] = None,
    psnr_cap: float = 100.0,
) -> RestoreResult:
    """Restore every channel independently; channels may run on a thread pool."""
    task = run_config.task
    if task == "deblur":
        def job(channel):
            return deblur_channel(channel, run_config)
    elif task == "inpaint":
        if mask is None:
            mask = resolve_mask(run_config, np.shape(channels[0]))

        def job(channel):
            return inpaint_channel(channel, mask, run_config)
    else:
        raise ConfigError("task", f"{task} is not a restoration task.")

    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(channels)))) as pool:
        outcomes = list(pool.map(job, channels))

    restored = [image for image, _ in outcomes]
    traces = [trace for _, trace in outcomes]
    metrics = measure(restored, list(reference), psnr_cap) if reference is not None else None
    if metrics is not None:
        logger.info("restoration_scored", extra={"psnr": metrics.psnr, "ssim": metrics.ssim})
    return RestoreResult(restored, traces, metrics, run_config.model_dump(mode="json"))
