"""Concave sparsity penalties used as the data-fidelity surrogate.

Every penalty is a concave, nondecreasing function on ``[0, inf)`` with
``theta(0) == 0``.  The matrix lift ``vartheta`` sums ``theta`` entrywise.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

_PROBE_POINTS = (0.01, 0.1, 1.0, 10.0)
_SQRT3 = math.sqrt(3.0)


class PenaltyKind(str, Enum):
    ABS = "abs"
    LOG = "log"
    RATIONAL = "rational"
    EXP = "exp"
    POWER = "power"
    ATAN = "atan"


class Penalty(BaseModel):
    """A member of the concave penalty family, selected by ``kind`` and ``eps``."""

    model_config = ConfigDict(frozen=True)

    kind: PenaltyKind = PenaltyKind.EXP
    eps: float = Field(default=90.0)
    q: float = Field(default=0.5)

    @model_validator(mode="after")
    def validate_parameters(self) -> "Penalty":
        if not self.eps > 0:
            raise ValueError("eps must be positive.")
        if self.kind is PenaltyKind.POWER and not 0.0 < self.q < 1.0:
            raise ValueError("q must lie in (0, 1) for the power penalty.")
        if abs(float(self.theta(0.0))) > 1e-12:
            raise ValueError(f"{self.kind.value} penalty does not vanish at zero.")
        if __debug__:
            self._check_derivative()
        return self

    def _check_derivative(self) -> None:
        for t in _PROBE_POINTS:
            h = 1e-6 * max(1.0, t)
            numeric = (float(self.theta(t + h)) - float(self.theta(t - h))) / (2.0 * h)
            exact = float(self.theta_prime(t))
            if abs(numeric - exact) > 1e-6 * max(abs(exact), 1e-6):
                raise ValueError(f"{self.kind.value} derivative disagrees with finite differences at t={t}.")

    def theta(self, t):
        """Scalar penalty, evaluated entrywise on arrays."""
        t = np.asarray(t, dtype=float)
        eps = self.eps
        if self.kind is PenaltyKind.ABS:
            return t.copy()
        if self.kind is PenaltyKind.LOG:
            return np.log1p(t / eps)
        if self.kind is PenaltyKind.RATIONAL:
            return t / (t + eps)
        if self.kind is PenaltyKind.EXP:
            return np.expm1(-eps * t) / np.expm1(-eps)
        if self.kind is PenaltyKind.POWER:
            # shifted by eps**q so that theta(0) == 0
            return (t + eps) ** self.q - eps**self.q
        return (2.0 / _SQRT3) * np.arctan((1.0 + 2.0 * eps * t) / _SQRT3) - math.pi / (3.0 * _SQRT3)

    def theta_prime(self, t):
        """Derivative of :meth:`theta`, evaluated entrywise on arrays."""
        t = np.asarray(t, dtype=float)
        eps = self.eps
        if self.kind is PenaltyKind.ABS:
            return np.ones_like(t)
        if self.kind is PenaltyKind.LOG:
            return 1.0 / (t + eps)
        if self.kind is PenaltyKind.RATIONAL:
            return eps / (t + eps) ** 2
        if self.kind is PenaltyKind.EXP:
            return eps * np.exp(-eps * t) / -np.expm1(-eps)
        if self.kind is PenaltyKind.POWER:
            return self.q * (t + eps) ** (self.q - 1.0)
        return 4.0 * eps / (3.0 + (1.0 + 2.0 * eps * t) ** 2)

    def vartheta(self, Z: np.ndarray) -> float:
        """Sum of ``theta`` over the entries of a nonnegative matrix."""
        Z = _nonnegative(Z)
        return float(np.sum(self.theta(Z)))

    def grad_vartheta(self, Z: np.ndarray) -> np.ndarray:
        """Entrywise derivative of :meth:`vartheta`."""
        Z = _nonnegative(Z)
        return self.theta_prime(Z)

    def linearization_gap(self, Z: np.ndarray) -> float:
        """``vartheta(Z) - <grad vartheta(Z), Z>``, nonnegative by concavity."""
        Z = _nonnegative(Z)
        return self.vartheta(Z) - float(np.sum(self.grad_vartheta(Z) * Z))


def _nonnegative(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if np.any(Z < 0):
        raise ValueError("penalty arguments must be nonnegative.")
    return Z


def theta(p: Penalty, t):
    return p.theta(t)


def theta_prime(p: Penalty, t):
    return p.theta_prime(t)


def vartheta(p: Penalty, Z: np.ndarray) -> float:
    return p.vartheta(Z)


def grad_vartheta(p: Penalty, Z: np.ndarray) -> np.ndarray:
    return p.grad_vartheta(Z)
