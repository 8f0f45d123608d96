"""Fixed-schema per-step time series and its CSV/JSON serialization."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .tensor_core import (
    ComponentModel,
    GroundTruth,
    frobenius,
    per_direction_residuals,
    residual_frobenius,
    sum_sq_norms,
)

BASE_COLUMNS = ("step", "continuous_time", "epoch", "phase", "loss", "residual_frobenius",
                "norm_bound_margin")


def fmt(x: Any) -> str:
    """Stable text form: 17 significant digits for floats."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def standard_columns(r: int, m: int, extra: Sequence[str] = ()) -> list[str]:
    cols = list(BASE_COLUMNS)
    cols += [f"dir_residual_{i}" for i in range(r)]
    for j in range(m):
        cols += [f"sq_norm_{j}", f"top_index_{j}", f"top_corr_{j}"]
    cols += list(extra)
    return cols


@dataclass
class TrajectoryRecord:
    columns: list[str]
    rows: list[list[Any]] = field(default_factory=list)
    markers: list[dict] = field(default_factory=list)

    def append(self, row: dict):
        missing = set(self.columns) - set(row)
        if missing:
            raise KeyError(f"row is missing columns {sorted(missing)[:5]}")
        if self.rows and row["step"] <= self.rows[-1][0]:
            raise ValueError("steps must be strictly increasing")
        self.rows.append([row[c] for c in self.columns])

    def mark(self, step: int, event: str, **info):
        self.markers.append({"step": step, "event": event, **info})

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([row[i] for row in self.rows])

    def __len__(self) -> int:
        return len(self.rows)

    def extend(self, other: "TrajectoryRecord"):
        if other.columns != self.columns:
            raise ValueError("column schemas differ")
        for row in other.rows:
            self.append(dict(zip(other.columns, row)))
        self.markers.extend(other.markers)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([fmt(x) for x in row])
        return buf.getvalue()

    def to_json(self) -> str:
        def conv(x):
            if isinstance(x, (np.integer,)):
                return int(x)
            if isinstance(x, (np.floating, float)):
                x = float(x)
                return x if np.isfinite(x) else fmt(x)
            return x

        payload = {
            "columns": self.columns,
            "rows": [{c: conv(v) for c, v in zip(self.columns, row)} for row in self.rows],
            "markers": self.markers,
        }
        return json.dumps(payload, indent=1, default=conv)


def snapshot(truth: GroundTruth, model: ComponentModel, lam: float = 0.0,
             slots: int | None = None) -> dict:
    """Model-level quantities shared by every trajectory schema.

    ``slots`` pads the per-component columns with NaN (index -1) for models
    that grow during a run.
    """
    res = residual_frobenius(truth, model)
    row = {
        "loss": 0.5 * res * res + 0.5 * lam * sum_sq_norms(model),
        "residual_frobenius": res,
        "norm_bound_margin": model.dim * frobenius(model) - sum_sq_norms(model),
    }
    for i, v in enumerate(per_direction_residuals(truth, model)):
        row[f"dir_residual_{i}"] = v
    if model.m:
        corr = (model.directions @ truth.directions.T) ** 2
        top = np.argmax(corr, axis=1)
        for j in range(model.m):
            row[f"sq_norm_{j}"] = model.sq_norms[j]
            row[f"top_index_{j}"] = int(top[j])
            row[f"top_corr_{j}"] = corr[j, top[j]]
    for j in range(model.m, slots or 0):
        row[f"sq_norm_{j}"] = float("nan")
        row[f"top_index_{j}"] = -1
        row[f"top_corr_{j}"] = float("nan")
    return row
