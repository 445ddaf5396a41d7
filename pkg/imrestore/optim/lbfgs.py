"""Limited-memory BFGS for smooth convex objectives with an early-stop hook."""

from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.optimize import line_search

from imrestore.core.errors import SolverError

logger = logging.getLogger("imrestore.lbfgs")

Oracle = Callable[[np.ndarray], tuple[float, np.ndarray]]


class LbfgsConfig(BaseModel):
    memory: int = Field(default=10, ge=1)
    max_iters: int = Field(default=50, ge=1)
    c1: float = 1e-4
    c2: float = 0.9
    max_backtracks: int = Field(default=30, ge=1)
    gtol: float = Field(default=1e-12, gt=0)

    @model_validator(mode="after")
    def validate_wolfe(self) -> "LbfgsConfig":
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("line search constants need 0 < c1 < c2 < 1.")
        return self


class StopReason(str, Enum):
    CALLBACK = "callback"
    GRADIENT = "gradient"
    MAX_ITERS = "max_iters"
    LINE_SEARCH = "line_search"


@dataclass
class LbfgsReport:
    iterations: int
    value: float
    grad_norm: float
    reason: StopReason


class _CachedOracle:
    """Remembers the last evaluation so the line search and the solver share work."""

    def __init__(self, oracle: Oracle):
        self._oracle = oracle
        self._point: Optional[np.ndarray] = None
        self._value = 0.0
        self._grad: Optional[np.ndarray] = None
        self.evaluations = 0

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        if self._point is None or not np.array_equal(x, self._point):
            value, grad = self._oracle(x)
            value = float(value)
            if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                raise SolverError("objective oracle returned a non-finite value or gradient.")
            self._point = np.array(x, copy=True)
            self._value, self._grad = value, np.asarray(grad, dtype=float)
            self.evaluations += 1
        return self._value, self._grad

    def value(self, x: np.ndarray) -> float:
        return self(x)[0]

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self(x)[1]


def _two_loop(grad: np.ndarray, pairs: deque) -> np.ndarray:
    q = grad.copy()
    history = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        q -= a * y
        history.append(a)
    s, y, _ = pairs[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(pairs, reversed(history)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def _backtrack(oracle: _CachedOracle, x, f, g, config: LbfgsConfig):
    """Armijo backtracking along the steepest descent direction."""
    direction = -g
    slope = -float(g @ g)
    step = 1.0 / max(np.linalg.norm(g), 1.0)
    for _ in range(config.max_backtracks):
        candidate = x + step * direction
        value = oracle.value(candidate)
        if value <= f + config.c1 * step * slope:
            return candidate
        step *= 0.5
    return None


def minimize(
    oracle: Oracle,
    x0: np.ndarray,
    config: Optional[LbfgsConfig] = None,
    stop: Optional[Callable[[np.ndarray], bool]] = None,
) -> tuple[np.ndarray, LbfgsReport]:
    """Minimize a smooth convex function given a ``x -> (value, gradient)`` oracle.

    ``stop`` is consulted at the start point and after every accepted step;
    when it returns True the current point is returned at once.
    """
    config = config or LbfgsConfig()
    cached = _CachedOracle(oracle)
    x = np.array(x0, dtype=float, copy=True)
    f, g = cached(x)

    if stop is not None and stop(x):
        return x, LbfgsReport(0, f, float(np.linalg.norm(g)), StopReason.CALLBACK)

    pairs: deque = deque(maxlen=config.memory)
    reason = StopReason.MAX_ITERS
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= config.gtol:
            reason = StopReason.GRADIENT
            iterations -= 1
            break

        direction = _two_loop(g, pairs) if pairs else -g
        if float(g @ direction) >= 0.0:
            pairs.clear()
            direction = -g
        # first step of a fresh memory starts near unit length, as scipy's BFGS does
        old_old = f + gnorm / 2.0 if not pairs else None

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            step = line_search(
                cached.value,
                cached.gradient,
                x,
                direction,
                gfk=g,
                old_fval=f,
                old_old_fval=old_old,
                c1=config.c1,
                c2=config.c2,
            )[0]

        if step is not None:
            x_new = x + step * direction
        else:
            logger.debug("line_search_failed", extra={"iteration": iterations})
            pairs.clear()
            x_new = _backtrack(cached, x, f, g, config)
            if x_new is None:
                reason = StopReason.LINE_SEARCH
                iterations -= 1
                break

        f_new, g_new = cached(x_new)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)) and sy > 0.0:
            pairs.append((s, y, 1.0 / sy))
        x, f, g = x_new, f_new, g_new

        if stop is not None and stop(x):
            reason = StopReason.CALLBACK
            break

    report = LbfgsReport(iterations, f, float(np.linalg.norm(g)), reason)
    logger.debug(
        "lbfgs_finished",
        extra={"iterations": report.iterations, "reason": report.reason.value, "evaluations": cached.evaluations},
    )
    return x, report
