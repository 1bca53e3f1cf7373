"""Initial data: sine, square pulse, seeded band-limited random, CSV."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import Field, Grid1D, read_field_csv


def sine(grid: Grid1D, amplitude: float = 1.0, offset: float = 0.0, mode: int = 1) -> Field:
    k = 2.0 * np.pi * mode / grid.length
    return grid.sample(lambda x: offset + amplitude * np.sin(k * x))


def square(grid: Grid1D, low: float = 0.0, high: float = 1.0, start: float | None = None,
           stop: float | None = None) -> Field:
    """``high`` on [start, stop), ``low`` elsewhere (default: middle half)."""
    start = 0.25 * grid.length if start is None else start
    stop = 0.75 * grid.length if stop is None else stop
    return grid.sample(lambda x: np.where((x >= start) & (x < stop), high, low))


def random_bandlimited(grid: Grid1D, rng: np.random.Generator, modes: int = 8,
                       amplitude: float = 0.5, offset: float = 0.0,
                       clip: tuple[float, float] = (-1.0, 1.0)) -> Field:
    """Fourier series with ``modes`` modes, coefficients N(0, (amplitude/k)^2), clipped."""
    if not 1 <= modes <= 8:
        raise ValueError("modes must lie in 1..8")
    x = grid.x
    u = np.full(grid.n_cells, float(offset))
    for k in range(1, modes + 1):
        a, b = rng.normal(0.0, amplitude / k, 2)
        w = 2.0 * np.pi * k / grid.length
        u += a * np.cos(w * x) + b * np.sin(w * x)
    return grid.field(np.clip(u, *clip))


def from_spec(grid: Grid1D, spec: dict | None, rng: np.random.Generator | None = None,
              base_dir: Path | None = None) -> Field:
    spec = dict(spec or {"kind": "sine"})
    kind = spec.pop("kind")
    if kind == "sine":
        return sine(grid, **spec)
    if kind == "square":
        return square(grid, **spec)
    if kind == "random":
        if rng is None:
            raise ValueError("random initial data needs a generator")
        if "clip" in spec:
            spec["clip"] = tuple(spec["clip"])
        return random_bandlimited(grid, rng, **spec)
    if kind == "csv":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return read_field_csv(path, grid)
    raise ValueError(f"unknown initial kind {kind!r}")


def pair_rng(seed: int, index: int, role: int = 0) -> np.random.Generator:
    """Independent stream per (seed, pair index, role)."""
    return np.random.default_rng([int(seed), int(index), int(role)])
