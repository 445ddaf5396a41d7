"""Linear operators of the restoration models, each with an exact adjoint.

Blur is a circular (periodic) convolution.  Finite differences are forward
differences with a zero difference on the last column/row.  A stacked field
holds the three residual blocks ``(y; wh; wv)`` of shape ``m x n`` each.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np
from scipy import fft

from imrestore.core.errors import ShapeError

logger = logging.getLogger("imrestore.linops")


@dataclass(frozen=True)
class Kernel:
    weights: np.ndarray
    normalized: bool = True

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    @classmethod
    def identity(cls) -> "Kernel":
        return cls(np.ones((1, 1)), True)


def make_kernel(kind: Literal["average", "gaussian"], size: int, sigma: Optional[float] = None) -> Kernel:
    """Build an odd ``size x size`` average or Gaussian blur kernel normalized to sum 1."""
    if size < 1 or size % 2 == 0:
        raise ValueError("kernel size must be a positive odd integer.")
    if kind == "average":
        return Kernel(np.full((size, size), 1.0 / size**2), True)
    if kind == "gaussian":
        if sigma is None or not sigma > 0:
            raise ValueError("a gaussian kernel needs a positive sigma.")
        half = size // 2
        grid = np.arange(-half, half + 1, dtype=float)
        weights = np.exp(-(grid[:, None] ** 2 + grid[None, :] ** 2) / (2.0 * sigma**2))
        return Kernel(weights / weights.sum(), True)
    raise ValueError(f"unknown kernel kind {kind!r}.")


def _taps(kernel: Kernel):
    kh, kw = kernel.shape
    ch, cw = kh // 2, kw // 2
    for a in range(kh):
        for b in range(kw):
            weight = kernel.weights[a, b]
            if weight != 0.0:
                yield a - ch, b - cw, weight


def _otf(kernel: Kernel, shape: tuple[int, int]) -> np.ndarray:
    psf = np.zeros(shape)
    m, n = shape
    for da, db, weight in _taps(kernel):
        psf[da % m, db % n] += weight
    return fft.rfft2(psf)


def conv(kernel: Kernel, x: np.ndarray, adjoint: bool = False, use_fft: bool = False) -> np.ndarray:
    """Circular 2-D convolution; the adjoint correlates with the same kernel."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ShapeError("conv expects a 2-D image.")
    if use_fft:
        otf = _otf(kernel, x.shape)
        if adjoint:
            otf = np.conj(otf)
        return fft.irfft2(otf * fft.rfft2(x), s=x.shape)
    out = np.zeros_like(x)
    sign = -1 if adjoint else 1
    for da, db, weight in _taps(kernel):
        out += weight * np.roll(x, (sign * da, sign * db), axis=(0, 1))
    return out


def diff(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical forward differences."""
    x = np.asarray(x, dtype=float)
    gh = np.zeros_like(x)
    gv = np.zeros_like(x)
    gh[:, :-1] = x[:, 1:] - x[:, :-1]
    gv[:-1, :] = x[1:, :] - x[:-1, :]
    return gh, gv


def diff_adjoint(gh: np.ndarray, gv: np.ndarray) -> np.ndarray:
    """Exact transpose of :func:`diff` (a negative divergence)."""
    if gh.shape != gv.shape:
        raise ShapeError("difference blocks must share a shape.")
    out = np.zeros_like(gh, dtype=float)
    out[:, 1:] += gh[:, :-1]
    out[:, :-1] -= gh[:, :-1]
    out[1:, :] += gv[:-1, :]
    out[:-1, :] -= gv[:-1, :]
    return out


@dataclass(frozen=True)
class StackedField:
    """Element of the composite residual space: fidelity block and two difference blocks."""

    y: np.ndarray
    wh: np.ndarray
    wv: np.ndarray

    def __post_init__(self):
        if not (self.y.shape == self.wh.shape == self.wv.shape):
            raise ShapeError("stacked field blocks must share a shape.")

    @property
    def shape(self) -> tuple[int, int]:
        return self.y.shape

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "StackedField":
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape))

    @classmethod
    def from_vector(cls, v: np.ndarray, shape: tuple[int, int]) -> "StackedField":
        blocks = np.asarray(v, dtype=float).reshape((3,) + tuple(shape))
        return cls(blocks[0].copy(), blocks[1].copy(), blocks[2].copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.y.ravel(), self.wh.ravel(), self.wv.ravel()])

    def __add__(self, other: "StackedField") -> "StackedField":
        return StackedField(self.y + other.y, self.wh + other.wh, self.wv + other.wv)

    def __sub__(self, other: "StackedField") -> "StackedField":
        return StackedField(self.y - other.y, self.wh - other.wh, self.wv - other.wv)

    def __mul__(self, scalar: float) -> "StackedField":
        return StackedField(scalar * self.y, scalar * self.wh, scalar * self.wv)

    __rmul__ = __mul__

    def dot(self, other: "StackedField") -> float:
        return float(np.vdot(self.y, other.y) + np.vdot(self.wh, other.wh) + np.vdot(self.wv, other.wv))

    def norm_sq(self) -> float:
        return self.dot(self)


@dataclass(frozen=True)
class MaskSet:
    """Observed-pixel indicator; ``project`` zeroes unobserved entries."""

    observed: np.ndarray

    @classmethod
    def full(cls, shape: tuple[int, int]) -> "MaskSet":
        return cls(np.ones(shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.observed.shape

    @property
    def missing_count(self) -> int:
        return int(self.observed.size - np.count_nonzero(self.observed))

    def project(self, x: np.ndarray) -> np.ndarray:
        if x.shape != self.observed.shape:
            raise ShapeError("mask and image shapes differ.")
        return np.where(self.observed, x, 0.0)


@dataclass(frozen=True)
class FactorPair:
    """Factored image ``U @ V.T`` with ``U`` of shape ``m x r`` and ``V`` of shape ``n x r``."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[1] != self.V.shape[1]:
            raise ShapeError("factor pair needs U (m x r) and V (n x r).")

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    def image(self) -> np.ndarray:
        return self.U @ self.V.T

    def __add__(self, other: "FactorPair") -> "FactorPair":
        return FactorPair(self.U + other.U, self.V + other.V)

    def __sub__(self, other: "FactorPair") -> "FactorPair":
        return FactorPair(self.U - other.U, self.V - other.V)

    def __mul__(self, scalar: float) -> "FactorPair":
        return FactorPair(scalar * self.U, scalar * self.V)

    __rmul__ = __mul__

    def dot(self, other: "FactorPair") -> float:
        return float(np.vdot(self.U, other.U) + np.vdot(self.V, other.V))

    def norm_sq(self) -> float:
        return self.dot(self)


@dataclass(frozen=True)
class DeblurOperator:
    """``C x = (A x; nu Dh x; nu Dv x)`` for a blur ``A``."""

    kernel: Kernel
    nu: float
    use_fft: bool = False

    def apply(self, x: np.ndarray) -> StackedField:
        gh, gv = diff(x)
        return StackedField(conv(self.kernel, x, use_fft=self.use_fft), self.nu * gh, self.nu * gv)

    def adjoint(self, z: StackedField) -> np.ndarray:
        return conv(self.kernel, z.y, adjoint=True, use_fft=self.use_fft) + self.nu * diff_adjoint(z.wh, z.wv)


@dataclass(frozen=True)
class FactorJacobian:
    """Linearization of ``(U, V) -> (P(U V^T); nu D(U V^T))`` at an anchor pair."""

    anchor: FactorPair
    mask: MaskSet
    nu: float

    def apply(self, x: FactorPair) -> StackedField:
        return factor_jacobian(self.anchor, self.mask, self.nu, x.U, x.V)

    def adjoint(self, z: StackedField) -> FactorPair:
        G, H = factor_jacobian_adjoint(self.anchor, self.mask, self.nu, z)
        return FactorPair(G, H)


def stacked_apply(bundle, x) -> StackedField:
    return bundle.apply(x)


def stacked_adjoint(bundle, z: StackedField):
    return bundle.adjoint(z)


def factor_jacobian(anchor: FactorPair, mask: MaskSet, nu: float, G: np.ndarray, H: np.ndarray) -> StackedField:
    if G.shape != anchor.U.shape or H.shape != anchor.V.shape:
        raise ShapeError("direction shapes must match the anchor factors.")
    M = G @ anchor.V.T + anchor.U @ H.T
    gh, gv = diff(M)
    return StackedField(mask.project(M), nu * gh, nu * gv)


def factor_jacobian_adjoint(anchor: FactorPair, mask: MaskSet, nu: float, z: StackedField) -> tuple[np.ndarray, np.ndarray]:
    if z.shape != anchor.image_shape:
        raise ShapeError("stacked field shape must match the anchor image.")
    W = mask.project(z.y) + nu * diff_adjoint(z.wh, z.wv)
    return W @ anchor.V, W.T @ anchor.U


def op_norm_estimate(
    apply: Callable[[np.ndarray], np.ndarray],
    adjoint: Callable[[np.ndarray], np.ndarray],
    shape: tuple[int, ...],
    iters: int = 50,
    seed: int = 0,
) -> float:
    """Largest singular value by power iteration on ``L* L``."""
    if iters < 1:
        raise ValueError("iters must be at least 1.")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iters):
        w = adjoint(apply(v))
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        estimate = float(np.linalg.norm(apply(v)))
    logger.debug("op_norm_estimate", extra={"iters": iters, "estimate": estimate})
    return estimate
