"""Proximal mappings and Moreau envelopes of the nonsmooth model terms.

Every envelope value is computed from the prox point through the defining
identity ``e_t g(x) = g(p) + ||p - x||^2 / (2 t)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

from imrestore.core.errors import ShapeError
from imrestore.optim.linops import StackedField


class TVKind(str, Enum):
    ISOTROPIC = "iso"
    ANISOTROPIC = "aniso"


@dataclass(frozen=True)
class BoxSet:
    lower: Union[float, np.ndarray]
    upper: Union[float, np.ndarray]

    def __post_init__(self):
        if np.any(np.asarray(self.lower) > np.asarray(self.upper)):
            raise ValueError("box lower bound exceeds upper bound.")

    @classmethod
    def unit(cls) -> "BoxSet":
        return cls(0.0, 1.0)

    @classmethod
    def unbounded(cls) -> "BoxSet":
        return cls(-np.inf, np.inf)

    def contains(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass(frozen=True)
class ProxResult:
    point: np.ndarray
    envelope_value: float


@dataclass(frozen=True)
class StackedProxResult:
    point: StackedField
    envelope_value: float


def tv_norm(wh: np.ndarray, wv: np.ndarray, kind: TVKind) -> float:
    """Isotropic (pair Euclidean) or anisotropic (pair l1) total variation of difference blocks."""
    if kind is TVKind.ISOTROPIC:
        return float(np.sum(np.hypot(wh, wv)))
    return float(np.sum(np.abs(wh)) + np.sum(np.abs(wv)))


def l21_norm(M: np.ndarray) -> float:
    """Sum of the Euclidean norms of the columns."""
    return float(np.sum(np.linalg.norm(M, axis=0)))


def proj_box(x: np.ndarray, box: BoxSet) -> ProxResult:
    point = np.clip(x, box.lower, box.upper)
    return ProxResult(point, 0.5 * float(np.sum((point - x) ** 2)))


def prox_weighted_l1(v: np.ndarray, w: Union[float, np.ndarray], t: float) -> ProxResult:
    """Soft thresholding of ``v`` at level ``t * w``; envelope of ``||w o .||_1``."""
    if t <= 0:
        raise ValueError("prox parameter must be positive.")
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("l1 weights must be nonnegative.")
    point = np.sign(v) * np.maximum(np.abs(v) - t * w, 0.0)
    envelope = float(np.sum(w * np.abs(point)) + np.sum((point - v) ** 2) / (2.0 * t))
    return ProxResult(point, envelope)


def prox_iso_pair(a, b, t: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Group shrinkage of the pairs ``(a, b)``; a pair whose norm equals ``t`` maps to zero."""
    if t <= 0:
        raise ValueError("prox parameter must be positive.")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    norm = np.hypot(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norm > t, 1.0 - t / norm, 0.0)
    pa, pb = scale * a, scale * b
    envelope = float(np.sum(np.hypot(pa, pb)) + (np.sum((pa - a) ** 2) + np.sum((pb - b) ** 2)) / (2.0 * t))
    return pa, pb, envelope


def prox_l21_columns(M: np.ndarray, t: float) -> ProxResult:
    """Column-wise group shrinkage; envelope of the column l2,1 norm."""
    if t <= 0:
        raise ValueError("prox parameter must be positive.")
    M = np.asarray(M, dtype=float)
    norms = np.linalg.norm(M, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > t, 1.0 - t / norms, 0.0)
    point = M * scale[None, :]
    envelope = l21_norm(point) + float(np.sum((point - M) ** 2)) / (2.0 * t)
    return ProxResult(point, envelope)


def prox_stacked_f(z: StackedField, weights: np.ndarray, tv: TVKind, t: float) -> StackedProxResult:
    """Prox of ``f(y, w) = ||weights o y||_1 + psi(w)`` with parameter ``t``."""
    if weights.shape != z.shape:
        raise ShapeError("fidelity weights must match the stacked field.")
    fidelity = prox_weighted_l1(z.y, weights, t)
    if tv is TVKind.ISOTROPIC:
        ph, pv, tv_envelope = prox_iso_pair(z.wh, z.wv, t)
    else:
        horizontal = prox_weighted_l1(z.wh, 1.0, t)
        vertical = prox_weighted_l1(z.wv, 1.0, t)
        ph, pv = horizontal.point, vertical.point
        tv_envelope = horizontal.envelope_value + vertical.envelope_value
    return StackedProxResult(StackedField(fidelity.point, ph, pv), fidelity.envelope_value + tv_envelope)
