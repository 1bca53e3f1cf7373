"""Periodic 1D grids, solution fields and the L1/BV functionals."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class GridMismatchError(ValueError):
    """Raised when two fields live on different grids."""


@dataclass(frozen=True)
class Grid1D:
    """Uniform cell-centered grid on the torus ``[0, length)``."""

    n_cells: int
    length: float = 1.0

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 4:
            raise ValueError(f"n_cells must be an integer >= 4, got {self.n_cells}")
        if not self.length > 0:
            raise ValueError(f"length must be positive, got {self.length}")
        object.__setattr__(self, "n_cells", int(self.n_cells))
        object.__setattr__(self, "length", float(self.length))

    @property
    def spacing(self) -> float:
        return self.length / self.n_cells

    @property
    def x(self) -> np.ndarray:
        """Cell centers."""
        return (np.arange(self.n_cells) + 0.5) * self.spacing

    def field(self, values, time: float = 0.0) -> "Field":
        return Field(self, values, time)

    def sample(self, func, time: float = 0.0) -> "Field":
        return Field(self, func(self.x), time)


@dataclass(frozen=True, eq=False)
class Field:
    """Point values of u(t, .) at the cell centers of ``grid``."""

    grid: Grid1D
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.n_cells,):
            raise ValueError(
                f"expected {self.grid.n_cells} values, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        if self.time < 0:
            raise ValueError("field time must be nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def with_values(self, values, time: float | None = None) -> "Field":
        return Field(self.grid, values, self.time if time is None else time)

    def shifted(self, offset: int) -> "Field":
        """Cyclic shift: result[i] = values[i + offset]."""
        return self.with_values(np.roll(self.values, -offset))

    def to_csv(self, path) -> None:
        write_field_csv(self, path)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time history of a solution on a fixed grid."""

    grid: Grid1D
    times: np.ndarray
    snapshots: tuple[Field, ...]
    dt_used: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or len(times) != len(self.snapshots) or len(times) == 0:
            raise ValueError("times and snapshots must be non-empty and aligned")
        if times[0] != 0.0:
            raise ValueError("trajectory must start at t = 0")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        for snap in self.snapshots:
            if snap.grid != self.grid:
                raise GridMismatchError("all snapshots must share the trajectory grid")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "snapshots", tuple(self.snapshots))

    @property
    def initial(self) -> Field:
        return self.snapshots[0]

    @property
    def final(self) -> Field:
        return self.snapshots[-1]

    def values(self) -> np.ndarray:
        """Stacked snapshot values, shape (n_times, n_cells)."""
        return np.stack([s.values for s in self.snapshots])

    def at(self, t: float) -> Field:
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12 * max(1.0, t)))
        if len(idx) == 0:
            raise KeyError(f"no snapshot at t={t}")
        return self.snapshots[idx[0]]

    def __len__(self):
        return len(self.snapshots)


def _check_same_grid(f: Field, g: Field) -> None:
    if f.grid != g.grid:
        raise GridMismatchError(f"fields live on different grids: {f.grid} vs {g.grid}")


def l1_distance(f: Field, g: Field) -> float:
    _check_same_grid(f, g)
    return float(f.grid.spacing * np.sum(np.abs(f.values - g.values)))


def positive_part_mass(f: Field, g: Field) -> float:
    """Integral of (f - g)^+ over the torus."""
    _check_same_grid(f, g)
    return float(f.grid.spacing * np.sum(np.maximum(f.values - g.values, 0.0)))


def bv_seminorm(f: Field) -> float:
    """Total variation with periodic wraparound."""
    v = f.values
    return float(np.sum(np.abs(np.roll(v, -1) - v)))


def mass(f: Field) -> float:
    return float(f.grid.spacing * np.sum(f.values))


# CSV snapshots: header "x,u", repr() round-trips doubles exactly.

def write_field_csv(f: Field, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "u"])
        for xi, ui in zip(f.grid.x, f.values):
            w.writerow([f"{xi:.17g}", f"{ui:.17g}"])


def read_field_csv(path, grid: Grid1D | None = None, time: float = 0.0) -> Field:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["x", "u"]:
        raise ValueError(f"{path}: expected header 'x,u'")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    if grid is None:
        n = len(data)
        h = data[1, 0] - data[0, 0]
        grid = Grid1D(n, n * h)
    return Field(grid, data[:, 1], time)


def stack_fields(fields: Sequence[Field]) -> np.ndarray:
    return np.stack([f.values for f in fields])


# Trajectory directories: snap_00000.csv, ... plus meta.csv.

META_COLUMNS = ("time", "mass", "min", "max", "bv", "dt_used")


def write_trajectory(traj: Trajectory, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dts = traj.dt_used if len(traj.dt_used) == len(traj) else np.zeros(len(traj))
    with (out / "meta.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(META_COLUMNS)
        for k, (snap, dt) in enumerate(zip(traj.snapshots, dts)):
            write_field_csv(snap, out / f"snap_{k:05d}.csv")
            w.writerow([f"{v:.17g}" for v in (snap.time, mass(snap), snap.values.min(),
                                               snap.values.max(), bv_seminorm(snap), dt)])
    return out


def read_trajectory(in_dir, grid: Grid1D | None = None) -> Trajectory:
    src = Path(in_dir)
    with (src / "meta.csv").open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{src}/meta.csv is empty")
    times = [float(r["time"]) for r in rows]
    snaps = []
    for k, t in enumerate(times):
        f = read_field_csv(src / f"snap_{k:05d}.csv", grid, t)
        grid = f.grid
        snaps.append(f)
    return Trajectory(grid, np.array(times), tuple(snaps), np.array([float(r["dt_used"]) for r in rows]))
