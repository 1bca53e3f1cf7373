"""Discrete Lévy operator on the periodic grid.

``(L u)_i = (s/2) (u_{i+1} - 2 u_i + u_{i-1}) / h^2
          + sum_j w_j (u_{i+j} - u_i)
          - b (u_{i+1} - u_{i-1}) / (2 h)``

with ``s`` the surrogate small-jump moment, ``w_j`` the large-jump weights
and ``b`` the drift compensator.  Indices wrap around.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid1D, GridMismatchError
from .levy import LevyMeasure, LevyQuadrature, levy_symbol


class SpacingMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class OperatorSplit:
    small_part: Field
    large_part: Field
    drift_part: Field

    def total(self) -> Field:
        # documented summation order: small, then large, then drift
        vals = self.small_part.values + self.large_part.values + self.drift_part.values
        return self.small_part.with_values(vals)


def _check_spacing(grid: Grid1D, quad: LevyQuadrature) -> None:
    if not math.isclose(grid.spacing, quad.spacing, rel_tol=1e-12):
        raise SpacingMismatchError(
            f"quadrature built for spacing {quad.spacing}, field has spacing {grid.spacing}"
        )


def _split_arrays(u: np.ndarray, quad: LevyQuadrature):
    h = quad.spacing
    up, um = np.roll(u, -1), np.roll(u, 1)
    small = (0.5 * quad.surrogate_moment / h**2) * ((up - u) + (um - u))
    if len(quad.node_offsets):
        n = len(u)
        idx = (np.arange(n)[:, None] + quad.node_offsets[None, :]) % n
        large = (u[idx] - u[:, None]) @ quad.weights
    else:
        large = np.zeros_like(u)
    drift = (-quad.drift / (2.0 * h)) * (up - um)
    return small, large, drift


def apply_levy_split(u: Field, quad: LevyQuadrature) -> OperatorSplit:
    _check_spacing(u.grid, quad)
    small, large, drift = _split_arrays(u.values, quad)
    return OperatorSplit(u.with_values(small), u.with_values(large), u.with_values(drift))


def apply_levy(u: Field, quad: LevyQuadrature) -> Field:
    return apply_levy_split(u, quad).total()


def apply_levy_array(values: np.ndarray, quad: LevyQuadrature) -> np.ndarray:
    """Same arithmetic as :func:`apply_levy` on a bare array (or a stack of
    arrays along the first axis)."""
    values = np.asarray(values, float)
    if values.ndim == 1:
        small, large, drift = _split_arrays(values, quad)
        return small + large + drift
    return np.stack([apply_levy_array(v, quad) for v in values])


def operator_matrix(grid: Grid1D, quad: LevyQuadrature) -> np.ndarray:
    """Dense circulant matrix of the discrete operator, assembled entry by
    entry from the stencil (independent of :func:`apply_levy`)."""
    _check_spacing(grid, quad)
    n, h = grid.n_cells, grid.spacing
    row = np.zeros(n)
    s = 0.5 * quad.surrogate_moment / h**2
    b = quad.drift / (2.0 * h)
    row[1 % n] += s - b
    row[-1 % n] += s + b
    row[0] -= 2 * s
    for j, w in zip(quad.node_offsets, quad.weights):
        row[j % n] += w
        row[0] -= w
    mat = np.empty((n, n))
    for i in range(n):
        mat[i] = np.roll(row, i)
    return mat


class LevyOperator:
    """Precomputed circulant matrix for the solver hot loop."""

    def __init__(self, grid: Grid1D, quad: LevyQuadrature):
        _check_spacing(grid, quad)
        self.grid, self.quad = grid, quad
        self.active = not quad.is_empty
        self.matrix = operator_matrix(grid, quad) if self.active else None

    def __call__(self, values: np.ndarray) -> np.ndarray:
        if not self.active:
            return np.zeros_like(values)
        return values @ self.matrix.T


def inner(f: Field, g: Field) -> float:
    if f.grid != g.grid:
        raise GridMismatchError("inner product of fields on different grids")
    return float(f.grid.spacing * np.dot(f.values, g.values))


def operator_norm_bound(quad: LevyQuadrature) -> float:
    """Upper bound on the max-norm of the discrete operator."""
    h = quad.spacing
    return 2.0 * quad.surrogate_moment / h**2 + 2.0 * quad.jump_rate + abs(quad.drift) / h


def adjoint_residual(phi: Field, psi: Field, quad: LevyQuadrature) -> float:
    """|<L phi, psi> - <phi, L psi>|."""
    return abs(inner(apply_levy(phi, quad), psi) - inner(phi, apply_levy(psi, quad)))


def discrete_symbol(quad: LevyQuadrature, omega: float) -> float:
    """Real eigenvalue of the discrete operator on the mode exp(i omega x)."""
    h = quad.spacing
    lap = (2.0 * math.cos(omega * h) - 2.0) / h**2
    jumps = float(np.sum(quad.weights * (np.cos(omega * quad.nodes) - 1.0)))
    return 0.5 * quad.surrogate_moment * lap + jumps


def measured_symbol(grid: Grid1D, quad: LevyQuadrature, mode_index: int) -> float:
    """Eigenvalue extracted by applying the operator to the cos/sin pair."""
    omega = 2.0 * math.pi * mode_index / grid.length
    c = grid.sample(lambda x: np.cos(omega * x))
    s = grid.sample(lambda x: np.sin(omega * x))
    num = inner(apply_levy(c, quad), c) + inner(apply_levy(s, quad), s)
    return num / (inner(c, c) + inner(s, s))


def symbol_residual(quad: LevyQuadrature, measure: LevyMeasure, mode_index: int,
                    grid: Grid1D) -> float:
    if not 1 <= mode_index <= grid.n_cells // 2:
        raise ValueError(f"mode_index must lie in [1, {grid.n_cells // 2}], got {mode_index}")
    omega = 2.0 * math.pi * mode_index / grid.length
    return abs(measured_symbol(grid, quad, mode_index) - levy_symbol(measure, omega))
