"""Shared contract of the majorized restoration models.

A model exposes its objective, the convex surrogate built at an anchor and
the dual of that surrogate.  ``dual`` returns the value and gradient of the
function minimized by the dual solver; its negative is a lower bound on the
surrogate.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Any, Union

import numpy as np

from imrestore.optim.linops import DeblurOperator, FactorJacobian, StackedField
from imrestore.optim.prox import TVKind, prox_stacked_f, tv_norm


@dataclass(frozen=True)
class SubproblemContext:
    """Frozen data of one inner subproblem at the anchor ``x^k``."""

    anchor: Any
    gamma: float
    alpha: float
    constant: float
    weights: np.ndarray
    shift: StackedField
    offset: StackedField
    operator: Union[DeblurOperator, FactorJacobian]
    tv: TVKind
    objective_value: float

    def __post_init__(self):
        if not self.gamma > 0 or not self.alpha > 0:
            raise ValueError("gamma and alpha must be positive.")

    def with_gamma(self, gamma: float) -> "SubproblemContext":
        return replace(self, gamma=gamma)


def stacked_f_value(weights: np.ndarray, z: StackedField, tv: TVKind) -> float:
    """``||weights o y||_1 + psi(w)`` of a stacked residual."""
    return float(np.sum(weights * np.abs(z.y))) + tv_norm(z.wh, z.wv, tv)


def fidelity_dual_part(ctx: SubproblemContext, xi: StackedField) -> tuple[float, StackedField]:
    """Value of ``||xi||^2 / (2 alpha) - e f(c + xi / alpha)`` and the prox point of ``f`` there."""
    shifted = ctx.shift + xi * (1.0 / ctx.alpha)
    prox = prox_stacked_f(shifted, ctx.weights, ctx.tv, 1.0 / ctx.alpha)
    return xi.norm_sq() / (2.0 * ctx.alpha) - prox.envelope_value, prox.point


class MajorizedProblem(ABC):
    """A composite model ``vartheta(|F(x)|) + nu psi(T(x)) + lambda h(x)`` with its surrogates."""

    @abstractmethod
    def objective(self, x) -> float:
        ...

    @abstractmethod
    def build_context(self, anchor, gamma: float, alpha: float) -> SubproblemContext:
        ...

    @abstractmethod
    def majorant(self, ctx: SubproblemContext, x) -> float:
        ...

    @abstractmethod
    def dual(self, ctx: SubproblemContext, xi: StackedField) -> tuple[float, StackedField]:
        ...

    @abstractmethod
    def primal_from_dual(self, ctx: SubproblemContext, xi: StackedField):
        ...

    @abstractmethod
    def distance(self, x, y) -> float:
        ...

    @property
    @abstractmethod
    def scale(self) -> float:
        """Frobenius norm of the observation, used to normalize step lengths."""

    @property
    @abstractmethod
    def dual_shape(self) -> tuple[int, int]:
        ...

    def lower_bound(self, ctx: SubproblemContext, xi: StackedField) -> float:
        return -self.dual(ctx, xi)[0]
