"""Per-iteration record of an iPMM run, its CSV/JSON forms and an invariant replay."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

CSV_COLUMNS = ("k", "theta", "jk", "gamma", "alpha", "mu", "tau", "lbfgs_iters", "gap", "step_norm")

MAX_INNER_STEPS = 40
_REL_TOL = 1e-10


@dataclass
class TraceRow:
    k: int
    theta: float
    jk: int
    gamma: float
    alpha: float
    mu: float
    tau: float
    lbfgs_iters: int
    gap: float
    step_norm: float
    theta_next: float
    majorant: float
    status: str
    forced: bool


@dataclass
class IterationTrace:
    scale: float = 0.0
    rows: list[TraceRow] = field(default_factory=list)
    termination: Optional[str] = None
    config: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, row: TraceRow) -> None:
        self.rows.append(row)

    @property
    def last(self) -> TraceRow:
        return self.rows[-1]

    def thetas(self) -> list[float]:
        return [row.theta for row in self.rows]

    def total_lbfgs_iters(self) -> int:
        return sum(row.lbfgs_iters for row in self.rows)

    def to_csv(self, path: Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                writer.writerow([getattr(row, name) for name in CSV_COLUMNS])

    def to_dict(self) -> dict[str, Any]:
        return {
            "scale": self.scale,
            "termination": self.termination,
            "config": self.config,
            "rows": [asdict(row) for row in self.rows],
        }

    def to_json(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "IterationTrace":
        names = {item.name for item in fields(TraceRow)}
        rows = [TraceRow(**{key: value for key, value in row.items() if key in names}) for row in payload.get("rows", [])]
        return cls(
            scale=float(payload.get("scale", 0.0)),
            rows=rows,
            termination=payload.get("termination"),
            config=dict(payload.get("config", {})),
        )

    @classmethod
    def from_json(cls, path: Path) -> "IterationTrace":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def verify(self) -> list[str]:
        """Replay the run invariants; returns one message per violated row."""
        problems: list[str] = []
        gamma_cap = None
        if "gamma_hi" in self.config and "varrho" in self.config:
            gamma_cap = float(self.config["gamma_hi"]) * float(self.config["varrho"])

        previous: Optional[TraceRow] = None
        for row in self.rows:
            slack = _REL_TOL * max(1.0, abs(row.theta))
            if row.theta_next > row.theta + slack:
                problems.append(f"k={row.k}: objective increased from {row.theta} to {row.theta_next}")
            if previous is not None and row.theta > previous.theta + slack:
                problems.append(f"k={row.k}: objective column is not nonincreasing")
            if row.jk > MAX_INNER_STEPS:
                problems.append(f"k={row.k}: inner loop ran {row.jk} steps")
            if gamma_cap is not None and row.gamma > gamma_cap * (1.0 + _REL_TOL):
                problems.append(f"k={row.k}: gamma {row.gamma} exceeds {gamma_cap}")
            if not row.forced:
                decrease = row.theta - row.majorant
                if not decrease > 0:
                    problems.append(f"k={row.k}: certified step without surrogate decrease")
                elif row.gap > 0.5 * row.mu * decrease + slack:
                    problems.append(f"k={row.k}: gap {row.gap} exceeds the inexactness bound")
            previous = row
        return problems
