"""Box-constrained TV deblurring under impulse noise.

    Theta(x) = vartheta(|A x - b|) + nu psi(D x) + indicator of the box

The data map is affine, so the surrogate keeps it exactly and only the
penalty is linearized.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from imrestore.core.errors import ShapeError
from imrestore.optim.linops import DeblurOperator, Kernel, StackedField, conv, diff
from imrestore.optim.penalty import Penalty
from imrestore.optim.prox import BoxSet, TVKind, proj_box, tv_norm
from imrestore.problems.base import MajorizedProblem, SubproblemContext, fidelity_dual_part, stacked_f_value

logger = logging.getLogger("imrestore.problems")


class DeblurProblem(MajorizedProblem):
    def __init__(
        self,
        observed: np.ndarray,
        kernel: Kernel,
        penalty: Optional[Penalty] = None,
        nu: float = 0.15,
        box: Optional[BoxSet] = None,
        tv: TVKind = TVKind.ISOTROPIC,
        use_fft: bool = False,
    ):
        observed = np.asarray(observed, dtype=float)
        if observed.ndim != 2:
            raise ShapeError("the deblurring model works on a single 2-D channel.")
        if nu < 0:
            raise ValueError("nu must be nonnegative.")
        self.observed = observed
        self.kernel = kernel
        self.penalty = penalty or Penalty()
        self.nu = float(nu)
        self.box = box or BoxSet.unit()
        self.tv = TVKind(tv)
        self.operator = DeblurOperator(kernel, self.nu, use_fft)

    def residual(self, x: np.ndarray) -> np.ndarray:
        """``F(x) = A x - b``."""
        return conv(self.kernel, x, use_fft=self.operator.use_fft) - self.observed

    def objective(self, x: np.ndarray) -> float:
        if x.shape != self.observed.shape:
            raise ShapeError("iterate and observation shapes differ.")
        if not self.box.contains(x):
            return float("inf")
        gh, gv = diff(x)
        return self.penalty.vartheta(np.abs(self.residual(x))) + self.nu * tv_norm(gh, gv, self.tv)

    def build_context(self, anchor: np.ndarray, gamma: float, alpha: float) -> SubproblemContext:
        value = self.objective(anchor)
        if not np.isfinite(value):
            raise ValueError("the anchor must lie inside the box.")
        magnitude = np.abs(self.residual(anchor))
        weights = self.penalty.grad_vartheta(magnitude)
        zeros = np.zeros_like(self.observed)
        return SubproblemContext(
            anchor=anchor,
            gamma=gamma,
            alpha=alpha,
            constant=self.penalty.linearization_gap(magnitude),
            weights=weights,
            shift=self.operator.apply(anchor) - StackedField(self.observed, zeros, zeros),
            offset=StackedField(self.observed, zeros, zeros),
            operator=self.operator,
            tv=self.tv,
            objective_value=value,
        )

    def majorant(self, ctx: SubproblemContext, x: np.ndarray) -> float:
        if not self.box.contains(x):
            return float("inf")
        step = x - ctx.anchor
        z = self.operator.apply(x) - ctx.offset
        return (
            stacked_f_value(ctx.weights, z, ctx.tv)
            + 0.5 * ctx.gamma * float(np.sum(step**2))
            + 0.5 * ctx.alpha * self.operator.apply(step).norm_sq()
            + ctx.constant
        )

    def _dual_shifted_anchor(self, ctx: SubproblemContext, xi: StackedField) -> tuple[np.ndarray, np.ndarray]:
        pulled = self.operator.adjoint(xi)
        return pulled, ctx.anchor - pulled / ctx.gamma

    def dual(self, ctx: SubproblemContext, xi: StackedField) -> tuple[float, StackedField]:
        if xi.shape != self.observed.shape:
            raise ShapeError("dual point shape must match the image.")
        fidelity, prox_point = fidelity_dual_part(ctx, xi)
        pulled, shifted = self._dual_shifted_anchor(ctx, xi)
        projected = proj_box(shifted, self.box)
        value = (
            fidelity
            + float(np.sum(pulled**2)) / (2.0 * ctx.gamma)
            - ctx.gamma * projected.envelope_value
            - ctx.constant
        )
        gradient = prox_point + ctx.offset - self.operator.apply(projected.point)
        return value, gradient

    def primal_from_dual(self, ctx: SubproblemContext, xi: StackedField) -> np.ndarray:
        _, shifted = self._dual_shifted_anchor(ctx, xi)
        return proj_box(shifted, self.box).point

    def distance(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.linalg.norm(x - y))

    @property
    def scale(self) -> float:
        return float(np.linalg.norm(self.observed))

    @property
    def dual_shape(self) -> tuple[int, int]:
        return self.observed.shape
