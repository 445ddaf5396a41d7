"""Inexact proximal majorization-minimization engine.

Each outer step builds a convex surrogate at the current iterate, solves it
inexactly through a regularized dual with L-BFGS, and backtracks on the
proximal curvature ``gamma`` until the surrogate majorizes the objective at
the candidate.  Inexactness is certified by weak duality.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from imrestore.core.errors import SolverError
from imrestore.optim.lbfgs import LbfgsConfig, StopReason, minimize
from imrestore.optim.linops import StackedField
from imrestore.optim.trace import IterationTrace, TraceRow
from imrestore.problems.base import MajorizedProblem, SubproblemContext

logger = logging.getLogger("imrestore.ipmm")

_ACCEPT_RTOL = 1e-12


class IpmmConfig(BaseModel):
    varrho: float = 2.0
    gamma_lo: float = 1.0
    gamma_hi: float = 1e6
    mu_bar: float = 1e10
    mu_power: float = 2.1
    alpha0: float = 1.0
    alpha_decay: float = 1.05
    alpha_floor: float = 1e-3
    alpha_period: int = Field(default=3, ge=1)
    tau0: float = 1.0
    rho_tau: float = 1.2
    eps_star: float = 1e-8
    stall_window: int = Field(default=9, ge=1)
    stall_tol: float = 1e-5
    max_outer: int = Field(default=500, ge=1)
    max_inner: int = Field(default=40, ge=0)
    restarts: int = Field(default=1, ge=0)
    prox_steps: int = Field(default=20, ge=0)
    lbfgs: LbfgsConfig = Field(default_factory=LbfgsConfig)

    @model_validator(mode="after")
    def validate_schedule(self) -> "IpmmConfig":
        if not self.varrho > 1.0:
            raise ValueError("varrho must exceed 1.")
        if not 0.0 < self.gamma_lo < self.gamma_hi:
            raise ValueError("need 0 < gamma_lo < gamma_hi.")
        for name in ("mu_bar", "mu_power", "alpha0", "alpha_floor", "tau0", "eps_star", "stall_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive.")
        if self.alpha_decay < 1.0 or self.rho_tau < 1.0:
            raise ValueError("alpha_decay and rho_tau must be at least 1.")
        return self


@dataclass(frozen=True)
class ScheduleState:
    alpha: float
    mu: float
    tau: float
    gamma: float

    @classmethod
    def initial(cls, config: IpmmConfig) -> "ScheduleState":
        return cls(alpha=config.alpha0, mu=config.mu_bar, tau=config.tau0, gamma=config.gamma_lo)


def advance_schedules(k: int, state: ScheduleState, config: IpmmConfig) -> ScheduleState:
    """Parameters of outer step ``k + 1``; ``state.gamma`` is the curvature accepted at step ``k``."""
    if k < 0:
        raise ValueError("k must be nonnegative.")
    alpha = state.alpha
    if k % config.alpha_period == 0:
        alpha = max(alpha / config.alpha_decay, config.alpha_floor)
    return ScheduleState(
        alpha=alpha,
        mu=config.mu_bar / float(k + 1) ** config.mu_power,
        tau=max(state.tau / config.rho_tau, config.eps_star),
        gamma=min(max(state.gamma / config.varrho, config.gamma_lo), config.gamma_hi),
    )


def stopping_check(trace: IterationTrace, config: IpmmConfig) -> bool:
    """Small relative step, or a floored ``tau`` together with a flat objective window."""
    if not trace.rows:
        return False
    row = trace.last
    if row.status == SubproblemStatus.STALLED.value:
        return False
    if row.step_norm / (1.0 + trace.scale) <= config.eps_star:
        return True
    if row.tau > config.eps_star or len(trace) < config.stall_window + 1:
        return False
    thetas = trace.thetas()
    current = thetas[-1]
    window = thetas[-config.stall_window - 1 : -1]
    return abs(current - max(window)) / max(1.0, current) <= config.stall_tol


class SubproblemStatus(str, Enum):
    CERTIFIED = "certified"
    STATIONARY = "stationary"
    FORCED = "forced"
    FAILED = "failed"
    STALLED = "stalled"


@dataclass
class SubproblemOutcome:
    x: Any
    xi: StackedField
    gap: float
    majorant: float
    iterations: int
    status: SubproblemStatus


@dataclass
class _Candidate:
    x: Any
    xi: np.ndarray
    majorant: float
    gap: float


def solve_subproblem_inexact(
    problem: MajorizedProblem,
    ctx: SubproblemContext,
    xi_init: StackedField,
    mu: float,
    tau: float,
    config: Optional[IpmmConfig] = None,
) -> SubproblemOutcome:
    """Minimize the regularized dual until weak duality certifies an inexact primal solution."""
    if not mu > 0 or not tau > 0:
        raise ValueError("mu and tau must be positive.")
    config = config or IpmmConfig()
    shape = problem.dual_shape
    theta_k = ctx.objective_value
    step_scale = 1.0 + problem.scale

    memo: dict[str, Any] = {"point": None, "value": 0.0}
    best: Optional[_Candidate] = None
    fired: dict[str, Any] = {}

    def dual_value(vector: np.ndarray) -> tuple[float, StackedField]:
        value, gradient = problem.dual(ctx, StackedField.from_vector(vector, shape))
        memo["point"], memo["value"] = vector.copy(), value
        return value, gradient

    def check(vector: np.ndarray) -> bool:
        nonlocal best
        if memo["point"] is not None and np.array_equal(vector, memo["point"]):
            phi = memo["value"]
        else:
            phi = dual_value(vector)[0]
        lower = -phi
        xi = StackedField.from_vector(vector, shape)
        x = problem.primal_from_dual(ctx, xi)
        majorant = problem.majorant(ctx, x)
        gap = majorant - lower
        decrease = theta_k - majorant
        if decrease > 0 and (best is None or majorant < best.majorant):
            best = _Candidate(x, vector.copy(), majorant, gap)
        if decrease > 0 and gap <= 0.5 * mu * decrease:
            fired.update(status=SubproblemStatus.CERTIFIED, x=x, xi=vector.copy(), gap=gap, majorant=majorant)
            return True
        anchor_gap = max(theta_k - lower, 0.0)
        if math.sqrt(2.0 * anchor_gap / ctx.gamma) / step_scale <= config.eps_star:
            fired.update(status=SubproblemStatus.STATIONARY, x=ctx.anchor, xi=vector.copy(), gap=anchor_gap, majorant=theta_k)
            return True
        return False

    center = xi_init.to_vector()
    point = center.copy()
    phi_center: Optional[float] = None
    iterations = 0
    restarts_left = config.restarts
    recenters_left = config.prox_steps
    while True:
        anchor_center = center

        def oracle(vector: np.ndarray) -> tuple[float, np.ndarray]:
            value, gradient = dual_value(vector)
            offset = vector - anchor_center
            return value + 0.5 * tau * float(offset @ offset), gradient.to_vector() + tau * offset

        point, report = minimize(oracle, point, config.lbfgs, check)
        iterations += report.iterations
        if fired:
            break
        if report.reason is StopReason.GRADIENT:
            # proximal-point step on the dual: re-center while it keeps dropping
            if phi_center is None:
                phi_center = dual_value(center)[0]
            phi_point = dual_value(point)[0]
            if recenters_left == 0 or not phi_point < phi_center:
                break
            recenters_left -= 1
            phi_center = phi_point
            logger.debug("dual_recentered", extra={"gamma": ctx.gamma, "phi": phi_point})
        else:
            if restarts_left == 0:
                if report.reason is StopReason.LINE_SEARCH:
                    logger.debug("dual_line_search_exhausted", extra={"gamma": ctx.gamma})
                break
            restarts_left -= 1
            logger.warning(
                "lbfgs_restart",
                extra={"attempt": config.restarts - restarts_left, "reason": report.reason.value, "gamma": ctx.gamma},
            )
            phi_center = None
        # fresh memory around the current dual point
        center = point.copy()

    if fired:
        return SubproblemOutcome(
            x=fired["x"],
            xi=StackedField.from_vector(fired["xi"], shape),
            gap=fired["gap"],
            majorant=fired["majorant"],
            iterations=iterations,
            status=fired["status"],
        )
    if best is not None:
        logger.warning("subproblem_forced", extra={"gamma": ctx.gamma, "gap": best.gap, "majorant": best.majorant})
        return SubproblemOutcome(
            x=best.x,
            xi=StackedField.from_vector(best.xi, shape),
            gap=best.gap,
            majorant=best.majorant,
            iterations=iterations,
            status=SubproblemStatus.FORCED,
        )
    return SubproblemOutcome(
        x=None,
        xi=StackedField.from_vector(point, shape),
        gap=float("inf"),
        majorant=float("inf"),
        iterations=iterations,
        status=SubproblemStatus.FAILED,
    )


def run(problem: MajorizedProblem, x0, config: Optional[IpmmConfig] = None) -> tuple[Any, IterationTrace]:
    """Run the outer loop from ``x0`` until the stopping rule or ``max_outer``."""
    config = config or IpmmConfig()
    trace = IterationTrace(scale=problem.scale, config=config.model_dump())
    x = x0
    theta = problem.objective(x)
    if not np.isfinite(theta):
        raise SolverError("the starting point lies outside the domain of the objective.")

    state = ScheduleState.initial(config)
    xi = StackedField.zeros(problem.dual_shape)
    gamma_cap = config.gamma_hi * config.varrho

    for k in range(config.max_outer):
        ctx = problem.build_context(x, state.gamma, state.alpha)
        gamma = state.gamma
        spent = 0
        accepted: Optional[SubproblemOutcome] = None
        theta_next = theta
        j = 0
        while True:
            outcome = solve_subproblem_inexact(problem, ctx.with_gamma(gamma), xi, state.mu, state.tau, config)
            spent += outcome.iterations
            xi = outcome.xi
            if outcome.status is SubproblemStatus.STATIONARY:
                accepted = outcome
                break
            if outcome.x is not None:
                candidate = problem.objective(outcome.x)
                if not np.isfinite(candidate):
                    raise SolverError("objective became non-finite at a subproblem candidate.")
                majorized = candidate <= outcome.majorant + _ACCEPT_RTOL * max(1.0, abs(outcome.majorant))
                if majorized and candidate <= theta:
                    accepted, theta_next = outcome, candidate
                    break
            if j >= config.max_inner or gamma * config.varrho > gamma_cap:
                break
            gamma *= config.varrho
            j += 1

        if accepted is None:
            logger.warning("inner_loop_exhausted", extra={"k": k, "gamma": gamma, "inner_steps": j})
            accepted = SubproblemOutcome(x, xi, float("inf"), theta, 0, SubproblemStatus.STALLED)
        x_next = accepted.x
        status = accepted.status
        row = TraceRow(
            k=k,
            theta=theta,
            jk=j,
            gamma=gamma,
            alpha=state.alpha,
            mu=state.mu,
            tau=state.tau,
            lbfgs_iters=spent,
            gap=accepted.gap,
            step_norm=problem.distance(x_next, x),
            theta_next=theta_next,
            majorant=accepted.majorant,
            status=status.value,
            forced=status is not SubproblemStatus.CERTIFIED,
        )
        trace.append(row)
        logger.info(
            "outer_iteration",
            extra={
                "k": k,
                "theta": theta,
                "jk": j,
                "gamma": gamma,
                "lbfgs_iters": spent,
                "gap": accepted.gap,
                "step_norm": row.step_norm,
                "status": status.value,
            },
        )
        x, theta = x_next, theta_next

        if status is SubproblemStatus.STALLED:
            trace.termination = "stalled"
            break
        if stopping_check(trace, config):
            trace.termination = "converged"
            break
        state = advance_schedules(k, replace(state, gamma=gamma), config)
    else:
        trace.termination = "max_outer"

    logger.info(
        "run_finished",
        extra={"iterations": len(trace), "termination": trace.termination, "theta": theta},
    )
    return x, trace
