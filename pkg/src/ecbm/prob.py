"""Normalized probability tables over small enumerated supports.

A table names its variables, enumerates each variable's values, and holds
one probability per cell of the cartesian product.  Construction checks
non-negativity and normalization (within 1e-9), so anything that arrives
as a ProbTable is a valid distribution.

The text form is one row per support point (variable values then the
probability), which generic plotting tools can consume directly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

NORM_TOL = 1e-9


class TableError(ValueError):
    """Malformed table or text encoding."""


@dataclass(frozen=True)
class ProbTable:
    variables: tuple
    levels: tuple  # one tuple of string values per variable
    probs: np.ndarray  # shape (len(levels[0]), ..., len(levels[-1]))

    def __post_init__(self):
        if len(self.variables) != len(self.levels) or not self.variables:
            raise TableError("variables and levels must align and be non-empty")
        shape = tuple(len(lv) for lv in self.levels)
        if self.probs.shape != shape:
            raise TableError(f"probs shape {self.probs.shape}, support {shape}")
        if (self.probs < -NORM_TOL).any():
            raise TableError("negative probability")
        if abs(float(self.probs.sum()) - 1.0) > NORM_TOL:
            raise TableError(f"probabilities sum to {self.probs.sum()!r}, not 1")

    @staticmethod
    def from_weights(variables, levels, weights) -> "ProbTable":
        """Normalize non-negative weights into a table."""
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise TableError("weights must have a positive finite sum")
        return ProbTable(tuple(variables),
                         tuple(tuple(str(v) for v in lv) for lv in levels),
                         w / total)

    @staticmethod
    def binary_split(name, p_one: float) -> "ProbTable":
        """Two-point table over {0, 1} for one variable."""
        return ProbTable.from_weights((name,), (("0", "1"),),
                                      np.array([1.0 - p_one, p_one]))

    def marginal(self, keep) -> "ProbTable":
        """Sum out every variable not in ``keep``; result follows ``keep`` order."""
        keep = tuple(keep)
        missing = [v for v in keep if v not in self.variables]
        if missing:
            raise TableError(f"unknown variables {missing}")
        drop_axes = tuple(i for i, v in enumerate(self.variables) if v not in keep)
        probs = self.probs.sum(axis=drop_axes) if drop_axes else self.probs
        kept = [(v, lv) for v, lv in zip(self.variables, self.levels) if v in keep]
        axes = [[v for v, _ in kept].index(v) for v in keep]
        probs = np.transpose(probs, axes)
        return ProbTable(tuple(keep), tuple(kept[i][1] for i in axes), probs)

    def lookup(self, assignment: dict) -> float:
        idx = []
        for v, lv in zip(self.variables, self.levels):
            if v not in assignment:
                raise TableError(f"assignment missing variable {v!r}")
            val = str(assignment[v])
            if val not in lv:
                raise TableError(f"{val!r} is not a value of {v!r}")
            idx.append(lv.index(val))
        return float(self.probs[tuple(idx)])

    def rows(self):
        """Yield (value tuple, probability) over the cartesian support."""
        flat = self.probs.reshape(-1)
        for i, combo in enumerate(itertools.product(*self.levels)):
            yield combo, float(flat[i])

    def to_text(self) -> str:
        lines = ["\t".join([*self.variables, "probability"])]
        for combo, p in self.rows():
            lines.append("\t".join([*combo, f"{p:.17g}"]))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "ProbTable":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if len(lines) < 2:
            raise TableError("table text needs a header and at least one row")
        header = lines[0].split("\t")
        if header[-1] != "probability" or len(header) < 2:
            raise TableError("last header column must be 'probability'")
        variables = tuple(header[:-1])
        values: list[list[str]] = [[] for _ in variables]
        cells = []
        for n, ln in enumerate(lines[1:], start=2):
            parts = ln.split("\t")
            if len(parts) != len(header):
                raise TableError(f"row {n}: expected {len(header)} columns")
            for col, v in enumerate(parts[:-1]):
                if v not in values[col]:
                    values[col].append(v)
            try:
                cells.append((tuple(parts[:-1]), float(parts[-1])))
            except ValueError as exc:
                raise TableError(f"row {n}: bad probability: {exc}") from exc
        levels = tuple(tuple(v) for v in values)
        shape = tuple(len(lv) for lv in levels)
        probs = np.zeros(shape)
        for combo, p in cells:
            idx = tuple(lv.index(c) for lv, c in zip(levels, combo))
            probs[idx] = p
        return ProbTable(variables, levels, probs)
