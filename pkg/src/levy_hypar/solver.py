"""Explicit monotone scheme for

    u_t + f(u)_x = (a(u) u_x)_x + L[u] + rho u_xx

on the periodic grid.  Convection uses the Engquist-Osher flux, the
degenerate diffusion is discretized in conservative form through
A(u) = int_0^u a, and L is the grid-aligned Lévy operator.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid1D, Trajectory
from .levy import LevyQuadrature
from .models import DiffusionModel, EngquistOsher, FluxModel
from .nonlocal_op import LevyOperator

INTERVAL_MARGIN = 1e-6
DT_FLOOR = 1e-12


class InstabilityError(RuntimeError):
    pass


class StepBudgetError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SolverConfig:
    grid: Grid1D
    flux: FluxModel
    diffusion: DiffusionModel
    quad: LevyQuadrature | None = None
    rho: float = 0.0
    t_end: float = 1.0
    cfl_safety: float = 0.9
    snapshot_times: tuple[float, ...] = ()
    state_interval: tuple[float, float] | None = None
    record_all_steps: bool = False
    max_steps: int = 100_000

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        times = tuple(sorted(float(t) for t in self.snapshot_times))
        if any(t < 0 or t > self.t_end * (1 + 1e-12) for t in times):
            raise ValueError("snapshot times must lie in [0, t_end]")
        object.__setattr__(self, "snapshot_times", times)
        if self.quad is None:
            object.__setattr__(self, "quad", LevyQuadrature.empty(self.grid.spacing))

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)

    def with_interval_for(self, *fields: Field) -> "SolverConfig":
        lo = min(float(f.values.min()) for f in fields)
        hi = max(float(f.values.max()) for f in fields)
        return self.replace(state_interval=(lo - INTERVAL_MARGIN, hi + INTERVAL_MARGIN))


@dataclass(frozen=True)
class StepBudget:
    dt: float
    n_steps: int


def numeric_flux(flux: FluxModel, a, b, interval: tuple[float, float] | None = None):
    """Engquist-Osher flux F(a, b)."""
    return EngquistOsher(flux, interval)(a, b)


def cfl_dt(config: SolverConfig) -> float:
    """Largest dt keeping the update order-preserving, times cfl_safety."""
    if config.state_interval is None:
        raise ValueError("state_interval is unset; use solve() or SolverConfig.with_interval_for")
    h = config.grid.spacing
    q = config.quad
    rate = (2.0 * config.flux.lipschitz(config.state_interval) / h
            + 2.0 * (config.diffusion.max_a(config.state_interval) + config.rho
                     + q.surrogate_moment) / h**2
            + q.jump_rate
            + abs(q.drift) / h)
    if rate == 0.0:
        return max(config.t_end, DT_FLOOR) if config.t_end > 0 else math.inf
    dt = config.cfl_safety / rate
    if dt < DT_FLOOR:
        raise StepBudgetError(
            f"dt={dt:.3e} underflows; coarsen the Lévy operator or shorten t_end"
        )
    return min(dt, config.t_end) if config.t_end > 0 else dt


def step_budget(config: SolverConfig) -> StepBudget:
    dt = cfl_dt(config)
    return StepBudget(dt, max(1, math.ceil(config.t_end / dt - 1e-12)))


class Stepper:
    """Precomputed pieces of one explicit step."""

    def __init__(self, config: SolverConfig):
        if config.state_interval is None:
            raise ValueError("state_interval is unset")
        self.config = config
        self.h = config.grid.spacing
        self.eo = None if config.flux.is_zero() else EngquistOsher(config.flux, config.state_interval)
        diff = config.diffusion
        self.diffusive = not diff.degenerate_everywhere
        self.tables = diff.tables(config.state_interval) if (
            self.diffusive and diff.A_closed is None) else None
        self.levy = LevyOperator(config.grid, config.quad)

    def __call__(self, u: np.ndarray, dt: float) -> np.ndarray:
        h = self.h
        up, um = np.roll(u, -1), np.roll(u, 1)
        new = u
        if self.eo is not None:
            right = self.eo(u, up)
            left = np.roll(right, 1)
            new = new - (dt / h) * (right - left)
        if self.diffusive:
            A = self.config.diffusion.A_values(u, self.tables)
            new = new + (dt / h**2) * (np.roll(A, -1) - 2.0 * A + np.roll(A, 1))
        if self.levy.active:
            new = new + dt * self.levy(u)
        if self.config.rho > 0:
            new = new + (self.config.rho * dt / h**2) * (up - 2.0 * u + um)
        bad = ~np.isfinite(new)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise InstabilityError(f"non-finite value in cell {i} (x={self.config.grid.x[i]:.6g})")
        return new


def step(u: Field, config: SolverConfig, dt: float) -> Field:
    if config.state_interval is None:
        config = config.with_interval_for(u)
    return u.with_values(Stepper(config)(u.values, dt), u.time + dt)


def solve(config: SolverConfig, u0: Field) -> Trajectory:
    if u0.grid != config.grid:
        raise ValueError("initial datum is not on the configured grid")
    if config.state_interval is None:
        config = config.with_interval_for(u0)
    start = u0.with_values(u0.values, 0.0)
    if config.t_end == 0:
        return Trajectory(config.grid, np.array([0.0]), (start,), np.array([0.0]))

    dt = cfl_dt(config)
    stepper = Stepper(config)
    targets = sorted({t for t in config.snapshot_times if t > 0} | {config.t_end})
    times, snaps, dts = [0.0], [start], [0.0]
    u, t, n_steps = start.values, 0.0, 0
    for target in targets:
        while t < target:
            remaining = target - t
            hit = remaining <= dt * (1 + 1e-12)
            k = remaining if hit else dt
            u = stepper(u, k)
            t = target if hit else t + k
            n_steps += 1
            if n_steps > config.max_steps:
                raise StepBudgetError(f"exceeded {config.max_steps} steps before t={target}")
            if hit or config.record_all_steps:
                times.append(t)
                snaps.append(Field(config.grid, u, t))
                dts.append(k)
    return Trajectory(config.grid, np.array(times), tuple(snaps), np.array(dts))
