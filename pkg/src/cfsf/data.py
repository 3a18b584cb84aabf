"""Observation tables and coefficient paths."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cfsf.errors import InvalidInput


def _matrix(a, n, name):
    if a is None:
        return np.empty((n, 0))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] != n:
        raise InvalidInput(f"{name} has {a.shape[0]} rows, expected {n}")
    return a


@dataclass(frozen=True)
class ObservationTable:
    """n observations of outcome ``y``, treatment ``x``, excluded instruments
    ``z2`` (n × d2) and included covariates ``z1`` (n × d1, possibly d1 = 0)."""

    y: np.ndarray
    x: np.ndarray
    z2: np.ndarray
    z1: np.ndarray = None
    weights: np.ndarray | None = None
    names: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        n = y.shape[0]
        x = np.asarray(self.x, dtype=float).reshape(-1)
        if x.shape[0] != n:
            raise InvalidInput("y and x lengths differ")
        z2 = _matrix(self.z2, n, "z2")
        z1 = _matrix(self.z1, n, "z1")
        if z2.shape[1] == 0:
            raise InvalidInput("at least one excluded instrument is required")
        for name, a in (("y", y), ("x", x), ("z2", z2), ("z1", z1)):
            if not np.all(np.isfinite(a)):
                raise InvalidInput(f"column role {name} contains missing or non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z2", z2)
        object.__setattr__(self, "z1", z1)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape[0] != n or np.any(w < 0) or not np.all(np.isfinite(w)):
                raise InvalidInput("weights must be n finite nonnegative values")
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def z(self) -> np.ndarray:
        """All first-stage instruments: covariates first, then excluded instruments."""
        return np.hstack([self.z1, self.z2])

    @classmethod
    def from_csv(cls, path, y="y", x="x", z2=("z2",), z1=()):
        """Read a headered UTF-8 CSV; every named column must exist and be complete."""
        path = Path(path)
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise InvalidInput(f"{path} is empty")
            rows = [r for r in reader if r]
        wanted = {"y": [y], "x": [x], "z2": list(z2), "z1": list(z1)}
        if not wanted["z2"]:
            raise InvalidInput("no excluded instrument column given (role z2)")
        index = {h: i for i, h in enumerate(header)}
        for role, names in wanted.items():
            for name in names:
                if name not in index:
                    raise InvalidInput(f"column {name!r} (role {role}) not found in {path}")
        data = {}
        for name in {c for names in wanted.values() for c in names}:
            j = index[name]
            vals = []
            for lineno, r in enumerate(rows, start=2):
                cell = r[j].strip() if j < len(r) else ""
                if cell == "" or cell.lower() in ("na", "nan"):
                    raise InvalidInput(f"missing value in column {name!r} at line {lineno}")
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise InvalidInput(f"non-numeric value {cell!r} in column {name!r} at line {lineno}")
            data[name] = np.array(vals)
        if not rows:
            raise InvalidInput(f"{path} has no data rows")
        cols = {role: np.column_stack([data[c] for c in names]) if names else None
                for role, names in wanted.items()}
        return cls(y=cols["y"][:, 0], x=cols["x"][:, 0], z2=cols["z2"], z1=cols["z1"],
                   names={k: v for k, v in wanted.items()})

    def column_names(self):
        z1 = self.names.get("z1") or _default_names("z1", self.z1.shape[1])
        z2 = self.names.get("z2") or _default_names("z2", self.z2.shape[1])
        return ["y", "x", *z1, *z2]

    def to_csv(self, path):
        header = self.column_names()
        mat = np.column_stack([self.y, self.x, self.z1, self.z2])
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in mat:
                w.writerow([repr(float(v)) for v in row])


def _default_names(prefix, d):
    if d == 1:
        return [prefix]
    return [f"{prefix}_{j + 1}" for j in range(d)]


@dataclass(frozen=True)
class CoefficientPath:
    """Coefficient vectors ``coef[m]`` at increasing index values ``grid[m]``
    (quantile levels for QR, thresholds for DR)."""

    grid: np.ndarray
    coef: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        c = np.asarray(self.coef, dtype=float)
        if c.ndim != 2 or c.shape[0] != g.shape[0]:
            raise InvalidInput("coefficient path shape does not match its grid")
        if np.any(np.diff(g) <= 0):
            raise InvalidInput("coefficient path grid must be strictly increasing")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "coef", np.ascontiguousarray(c))

    def __len__(self):
        return self.grid.shape[0]

    @property
    def dim(self) -> int:
        return self.coef.shape[1]
