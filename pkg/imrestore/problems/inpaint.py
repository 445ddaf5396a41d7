"""Factorized low-rank plus TV inpainting of one image channel.

    Theta(U, V) = vartheta(|P(U V^T) - b|) + nu psi(D(U V^T)) + lam (||U||_{2,1} + ||V||_{2,1})

``P`` keeps the observed pixels.  Both data maps are linearized at the
anchor through the factor Jacobian.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from imrestore.core.errors import ShapeError, SolverError
from imrestore.optim.linops import FactorJacobian, FactorPair, MaskSet, StackedField, diff
from imrestore.optim.penalty import Penalty, PenaltyKind
from imrestore.optim.prox import TVKind, l21_norm, prox_l21_columns, tv_norm
from imrestore.problems.base import MajorizedProblem, SubproblemContext, fidelity_dual_part, stacked_f_value

logger = logging.getLogger("imrestore.problems")


def default_inpaint_penalty() -> Penalty:
    return Penalty(kind=PenaltyKind.POWER, eps=1e-5, q=0.5)


class InpaintProblem(MajorizedProblem):
    def __init__(
        self,
        observed: np.ndarray,
        mask: MaskSet,
        penalty: Optional[Penalty] = None,
        nu: float = 0.6,
        lam: float = 0.5,
        rank: Optional[int] = None,
        tv: TVKind = TVKind.ANISOTROPIC,
    ):
        observed = np.asarray(observed, dtype=float)
        if observed.ndim != 2 or observed.shape != mask.shape:
            raise ShapeError("observation and mask must be matching 2-D grids.")
        if nu < 0 or lam < 0:
            raise ValueError("nu and lam must be nonnegative.")
        m, n = observed.shape
        rank = min(m, n) if rank is None else rank
        if not 1 <= rank <= min(m, n):
            raise ValueError(f"rank must lie in [1, {min(m, n)}].")
        self.mask = mask
        self.observed = mask.project(observed)
        self.penalty = penalty or default_inpaint_penalty()
        self.nu = float(nu)
        self.lam = float(lam)
        self.rank = rank
        self.tv = TVKind(tv)

    def _check(self, x: FactorPair) -> None:
        if x.image_shape != self.observed.shape or x.rank != self.rank:
            raise ShapeError("factor pair does not match the problem's image shape and rank.")

    def residual(self, x: FactorPair) -> np.ndarray:
        """``F(x) = P(U V^T) - b``."""
        return self.mask.project(x.image()) - self.observed

    def regularizer(self, x: FactorPair) -> float:
        return l21_norm(x.U) + l21_norm(x.V)

    def objective(self, x: FactorPair) -> float:
        self._check(x)
        gh, gv = diff(x.image())
        return (
            self.penalty.vartheta(np.abs(self.residual(x)))
            + self.nu * tv_norm(gh, gv, self.tv)
            + self.lam * self.regularizer(x)
        )

    def build_context(self, anchor: FactorPair, gamma: float, alpha: float) -> SubproblemContext:
        self._check(anchor)
        image = anchor.image()
        residual = self.mask.project(image) - self.observed
        magnitude = np.abs(residual)
        gh, gv = diff(image)
        shift = StackedField(residual, self.nu * gh, self.nu * gv)
        operator = FactorJacobian(anchor, self.mask, self.nu)
        return SubproblemContext(
            anchor=anchor,
            gamma=gamma,
            alpha=alpha,
            constant=self.penalty.linearization_gap(magnitude),
            weights=self.penalty.grad_vartheta(magnitude),
            shift=shift,
            offset=operator.apply(anchor) - shift,
            operator=operator,
            tv=self.tv,
            objective_value=self.objective(anchor),
        )

    def majorant(self, ctx: SubproblemContext, x: FactorPair) -> float:
        self._check(x)
        step = x - ctx.anchor
        moved = ctx.operator.apply(step)
        return (
            stacked_f_value(ctx.weights, ctx.shift + moved, ctx.tv)
            + self.lam * self.regularizer(x)
            + 0.5 * ctx.gamma * step.norm_sq()
            + 0.5 * ctx.alpha * moved.norm_sq()
            + ctx.constant
        )

    def _shrink(self, ctx: SubproblemContext, xi: StackedField) -> tuple[FactorPair, FactorPair, float]:
        pulled = ctx.operator.adjoint(xi)
        shifted = ctx.anchor - pulled * (1.0 / ctx.gamma)
        if self.lam == 0.0:
            return pulled, shifted, 0.0
        t = self.lam / ctx.gamma
        left = prox_l21_columns(shifted.U, t)
        right = prox_l21_columns(shifted.V, t)
        # lam * e_{lam/gamma} h = lam h(p) + gamma/2 ||p - shifted||^2
        envelope = self.lam * (left.envelope_value + right.envelope_value)
        return pulled, FactorPair(left.point, right.point), envelope

    def dual(self, ctx: SubproblemContext, xi: StackedField) -> tuple[float, StackedField]:
        if xi.shape != self.observed.shape:
            raise ShapeError("dual point shape must match the image.")
        fidelity, prox_point = fidelity_dual_part(ctx, xi)
        pulled, shrunk, envelope = self._shrink(ctx, xi)
        value = fidelity + pulled.norm_sq() / (2.0 * ctx.gamma) - envelope - ctx.constant
        gradient = prox_point + ctx.offset - ctx.operator.apply(shrunk)
        return value, gradient

    def primal_from_dual(self, ctx: SubproblemContext, xi: StackedField) -> FactorPair:
        return self._shrink(ctx, xi)[1]

    def distance(self, x: FactorPair, y: FactorPair) -> float:
        return float(np.sqrt((x - y).norm_sq()))

    @property
    def scale(self) -> float:
        return float(np.linalg.norm(self.observed))

    @property
    def dual_shape(self) -> tuple[int, int]:
        return self.observed.shape


def inpaint_init(observed: np.ndarray, mask: MaskSet, rank: int) -> FactorPair:
    """Split the top ``rank`` singular triplets of the zero-filled observation evenly between the factors."""
    m, n = mask.shape
    if not 1 <= rank <= min(m, n):
        raise ValueError(f"rank must lie in [1, {min(m, n)}].")
    try:
        left, sigma, right_t = np.linalg.svd(mask.project(np.asarray(observed, dtype=float)), full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"SVD of the masked observation failed: {exc}") from exc
    root = np.sqrt(sigma[:rank])
    return FactorPair(left[:, :rank] * root, right_t[:rank].T * root)
