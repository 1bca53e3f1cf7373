"""Space-time Riemann-sum audit of the entropy inequality on trajectories.

Time sums are left Riemann sums over consecutive snapshots, so the audit is
only as accurate as the snapshot spacing; solver runs meant for auditing
should record every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid1D, Trajectory, bv_seminorm
from .levy import LevyMeasure, LevyQuadrature, total_first_moment, total_second_moment
from .models import (DiffusionModel, Entropy, FluxModel, PrimitiveTable, build_triple,
                     eta_bar_closed, eta_bar_gauss)
from .nonlocal_op import apply_levy_array, operator_matrix

_MARGIN = 1e-6


class AuditPreconditionError(ValueError):
    pass


def _smoothstep(y):
    y = np.clip(y, 0.0, 1.0)
    return y**3 * (10.0 - 15.0 * y + 6.0 * y**2)


@dataclass(frozen=True)
class TestFunction:
    """phi(t, x) = bump(x) * ramp(t).

    The bump is the periodic von Mises profile exp((cos(2 pi d / L) - 1) / s^2),
    s = 2 pi width / L, which is Gaussian-like with standard deviation
    ``width`` near its center; ``width=None`` gives bump = 1.  The ramp is 1
    up to ``ramp_start`` and falls smoothly to 0 at ``ramp_end``;
    ``ramp_end=None`` gives ramp = 1.
    """

    __test__ = False  # not a pytest class

    center: float = 0.0
    width: float | None = None
    ramp_start: float = 0.0
    ramp_end: float | None = None
    name: str = "phi"

    def __post_init__(self):
        if self.ramp_end is not None and not self.ramp_end > self.ramp_start:
            raise ValueError("ramp_end must exceed ramp_start")
        if self.width is not None and not self.width > 0:
            raise ValueError("width must be positive")

    def ramp(self, t):
        t = np.asarray(t, float)
        if self.ramp_end is None:
            return np.ones_like(t)
        return 1.0 - _smoothstep((t - self.ramp_start) / (self.ramp_end - self.ramp_start))

    def ramp_dt(self, t):
        t = np.asarray(t, float)
        if self.ramp_end is None:
            return np.zeros_like(t)
        span = self.ramp_end - self.ramp_start
        y = np.clip((t - self.ramp_start) / span, 0.0, 1.0)
        return -30.0 * y**2 * (1.0 - y) ** 2 / span

    def _theta(self, grid: Grid1D, x=None):
        x = grid.x if x is None else np.asarray(x, float)
        k = 2.0 * math.pi / grid.length
        s = k * self.width
        return k, s, k * (x - self.center)

    def bump(self, grid: Grid1D, x=None):
        if self.width is None:
            return np.ones_like(grid.x if x is None else np.asarray(x, float))
        _, s, th = self._theta(grid, x)
        return np.exp((np.cos(th) - 1.0) / s**2)

    def bump_dx(self, grid: Grid1D, x=None):
        if self.width is None:
            return np.zeros_like(grid.x if x is None else np.asarray(x, float))
        k, s, th = self._theta(grid, x)
        return self.bump(grid, x) * (-np.sin(th)) * k / s**2

    def bump_dxx(self, grid: Grid1D, x=None):
        if self.width is None:
            return np.zeros_like(grid.x if x is None else np.asarray(x, float))
        k, s, th = self._theta(grid, x)
        return self.bump(grid, x) * k**2 * (np.sin(th) ** 2 / s**4 - np.cos(th) / s**2)

    def phi(self, t, grid: Grid1D):
        return np.multiply.outer(self.ramp(t), self.bump(grid))

    def levy_phi(self, t, grid: Grid1D, quad: LevyQuadrature):
        return np.multiply.outer(self.ramp(t), apply_levy_array(self.bump(grid), quad))


@dataclass(frozen=True)
class DissipationReport:
    n_u: float
    m_u: float
    lhs: float
    residual: float
    mode: str
    residual_simpler: float = math.nan
    residual_full: float = math.nan


# ---------------------------------------------------------------------------
# helpers

def _time_slices(traj: Trajectory):
    """Values at left endpoints, the step lengths and the left times."""
    vals = traj.values()
    if len(traj) < 2:
        return vals[:0], np.zeros(0), np.zeros(0)
    return vals[:-1], np.diff(traj.times), traj.times[:-1]


def _dx_central(v, h):
    return (np.roll(v, -1, axis=-1) - np.roll(v, 1, axis=-1)) / (2.0 * h)


def _interval_of(traj: Trajectory) -> tuple[float, float]:
    vals = traj.values()
    return float(vals.min()) - _MARGIN, float(vals.max()) + _MARGIN


def jump_matrix(grid: Grid1D, quad: LevyQuadrature) -> np.ndarray:
    """Circulant matrix of the large-jump sum alone."""
    only_jumps = LevyQuadrature(quad.node_offsets, quad.weights, quad.spacing, quad.split_radius,
                                0.0, 0.0, 0.0, quad.tail_cut, 0.0)
    return operator_matrix(grid, only_jumps)


def _space_time_sum(density, dts, h) -> float:
    if density.size == 0:
        return 0.0
    return float(h * np.sum(dts[:, None] * density))


# ---------------------------------------------------------------------------
# dissipation functionals
#
# Each functional is a space-time density contracted with phi; the densities
# do not depend on phi, so the battery evaluates them once per entropy.

def _contract(density, phi: TestFunction, grid: Grid1D, dts, ts) -> float:
    """h sum_n dt_n ramp(t_n) sum_i density_ni bump_i."""
    if density.size == 0:
        return 0.0
    return float(grid.spacing * np.dot(dts * phi.ramp(ts), density @ phi.bump(grid)))


def _stencil_d2(eta_spec: Entropy, U):
    """Divided difference of eta' across the central stencil (eta'' where flat)."""
    up, um = np.roll(U, -1, axis=-1), np.roll(U, 1, axis=-1)
    du = up - um
    flat = np.abs(du) <= 1e-12 * (1.0 + np.abs(U))
    quot = (eta_spec.d1(up) - eta_spec.d1(um)) / np.where(flat, 1.0, du)
    return np.where(flat, eta_spec.d2(U), np.maximum(quot, 0.0))


def _parabolic_density(U, eta_spec: Entropy, diff: DiffusionModel, h: float,
                       tables: dict | None, d2=None, grad2=None):
    if diff.degenerate_everywhere or eta_spec.linear or U.size == 0:
        return np.zeros_like(U)
    if grad2 is None:
        grad2 = np.sum(_dx_central(diff.zeta_values(U, tables), h) ** 2, axis=0)
    return (_stencil_d2(eta_spec, U) if d2 is None else d2) * grad2


def parabolic_dissipation(traj: Trajectory, eta_spec: Entropy, diff: DiffusionModel,
                          phi: TestFunction, tables: dict | None = None) -> float:
    """n^u: Riemann sum of eta''(u) sum_k (D_x zeta_k(u))^2 phi.

    eta''(u_i) is taken as the divided difference of eta' over the central
    stencil, (eta'(u_{i+1}) - eta'(u_{i-1})) / (u_{i+1} - u_{i-1}), i.e. the
    mean of eta'' over the values the difference D_x actually spans.  Point
    samples of a sharply peaked eta'' (Kruzkov entropies with small eps)
    make the sum erratic under refinement; the average does not, and it is
    still nonnegative for convex eta.
    """
    U, dts, ts = _time_slices(traj)
    if tables is None and diff.zeta_closed is None and not diff.degenerate_everywhere:
        tables = diff.tables(_interval_of(traj))
    dens = _parabolic_density(U, eta_spec, diff, traj.grid.spacing, tables)
    return max(0.0, _contract(dens, phi, traj.grid, dts, ts))


def _fractional_density(U, eta_spec: Entropy, quad: LevyQuadrature, grid: Grid1D,
                        method: str = "commutator", jumps=None, d2=None):
    if U.size == 0 or eta_spec.linear:
        return np.zeros_like(U)
    h = grid.spacing
    if quad.surrogate_moment == 0:
        dens = np.zeros_like(U)
    else:
        d2 = _stencil_d2(eta_spec, U) if d2 is None else d2
        dens = d2 * (0.5 * quad.surrogate_moment) * _dx_central(U, h) ** 2
    if not len(quad.node_offsets):
        return dens
    if method == "commutator":
        J = jump_matrix(grid, quad) if jumps is None else jumps
        per_cell = eta_spec.eta(U) @ J.T - eta_spec.d1(U) * (U @ J.T)
        # each cell is a sum of nonnegative terms; drop round-off negatives
        return dens + np.maximum(per_cell, 0.0)
    if method not in ("quadrature", "closed"):
        raise ValueError(f"unknown method {method!r}")
    eta_bar = eta_bar_gauss if method == "quadrature" else eta_bar_closed
    n = grid.n_cells
    idx = (np.arange(n)[:, None] + quad.node_offsets[None, :]) % n
    pairs = np.empty_like(U)
    for k, u in enumerate(U):
        there = u[idx]
        here = np.broadcast_to(u[:, None], there.shape)
        pairs[k] = (eta_bar(eta_spec, here, there) * (there - here) ** 2) @ quad.weights
    return dens + pairs


def fractional_dissipation(traj: Trajectory, eta_spec: Entropy, quad: LevyQuadrature,
                           phi: TestFunction, *, method: str = "commutator",
                           jumps: np.ndarray | None = None) -> float:
    """m^u: jump increments weighted by the averaged second derivative.

    ``method="commutator"`` evaluates sum_j w_j eta_bar (u_{i+j} - u_i)^2 as
    L_J[eta(u)] - eta'(u) L_J[u] (Taylor remainder identity, two matrix
    products); ``"quadrature"`` evaluates eta_bar pairwise by Gauss-Legendre
    in tau and ``"closed"`` by its closed form.  All add the small-jump
    surrogate eta''(u) (s/2) (D_x u)^2, with eta'' averaged over the stencil
    as in ``parabolic_dissipation``.
    """
    U, dts, ts = _time_slices(traj)
    dens = _fractional_density(U, eta_spec, quad, traj.grid, method, jumps)
    return max(0.0, _contract(dens, phi, traj.grid, dts, ts))


def square_increment_functional(traj: Trajectory, quad: LevyQuadrature,
                                jumps: np.ndarray | None = None) -> float:
    """Riemann sum of sum_j w_j (u(x+z_j) - u(x))^2 plus s (D_x u)^2."""
    U, dts, _ = _time_slices(traj)
    if U.size == 0:
        return 0.0
    h = traj.grid.spacing
    dens = quad.surrogate_moment * _dx_central(U, h) ** 2
    if len(quad.node_offsets):
        J = jump_matrix(traj.grid, quad) if jumps is None else jumps
        dens = dens + np.maximum((U * U) @ J.T - 2.0 * U * (U @ J.T), 0.0)
    return _space_time_sum(dens, dts, h)


def chain_rule_residual(traj: Trajectory, diff: DiffusionModel, psi) -> float:
    """L2(Q_T) distance between D_x zeta^{a,psi}(u) and psi(u) D_x zeta^a(u)."""
    if diff.degenerate_everywhere:
        return 0.0
    U, dts, _ = _time_slices(traj)
    if U.size == 0:
        return 0.0
    h = traj.grid.spacing
    lo, hi = _interval_of(traj)
    total = np.zeros_like(U)
    for s in diff.sigma:
        plain = PrimitiveTable(lambda v, s=s: np.asarray(s(v), float) * 1.0, lo, hi,
                               breakpoints=diff.kinks)
        weighted = PrimitiveTable(lambda v, s=s: np.asarray(s(v), float) * np.asarray(psi(v), float),
                                  lo, hi, breakpoints=diff.kinks)
        total += (_dx_central(weighted(U), h) - np.asarray(psi(U), float) * _dx_central(plain(U), h)) ** 2
    return math.sqrt(max(0.0, _space_time_sum(total, dts, h)))


# ---------------------------------------------------------------------------
# the entropy inequality

def check_simpler_precondition(traj: Trajectory, measure: LevyMeasure | None) -> str:
    """Which alternative of the extra integrability condition holds.

    Returns "first_moment" or "second_moment_bv"; raises otherwise.
    """
    if measure is None:
        raise AuditPreconditionError("simpler mode needs the Lévy measure to check its moments")
    if math.isfinite(total_first_moment(measure)):
        return "first_moment"
    if not math.isfinite(total_second_moment(measure)):
        raise AuditPreconditionError(
            "neither branch holds: int |z| pi(dz) = inf and int |z|^2 pi(dz) = inf"
        )
    bv0 = bv_seminorm(traj.initial)
    bv_max = max(bv_seminorm(s) for s in traj.snapshots)
    if bv_max > bv0 * (1 + 1e-9) + 1e-12:
        raise AuditPreconditionError(
            f"int |z| pi(dz) = inf and the BV branch fails: sup_t TV = {bv_max:.6g} > TV(u0) = {bv0:.6g}"
        )
    return "second_moment_bv"


@dataclass
class _EntropyTerms:
    """phi-independent space-time fields of one entropy on one trajectory."""

    eta0: np.ndarray         # eta(u_0)
    E: np.ndarray            # eta(u) at the left snapshots
    Q: np.ndarray            # q(u)
    R: np.ndarray            # r(u)
    n_dens: np.ndarray       # density of n^u
    m_dens: np.ndarray       # density of m^u


def _entropy_terms(traj: Trajectory, eta_spec: Entropy, triple, diff: DiffusionModel,
                   quad: LevyQuadrature, jumps=None, tables=None, grad2=None) -> _EntropyTerms:
    U, _, _ = _time_slices(traj)
    d2 = None if (eta_spec.linear or U.size == 0) else _stencil_d2(eta_spec, U)
    return _EntropyTerms(
        eta0=eta_spec.eta(traj.initial.values), E=eta_spec.eta(U), Q=triple.q(U), R=triple.r(U),
        n_dens=_parabolic_density(U, eta_spec, diff, traj.grid.spacing, tables, d2, grad2),
        m_dens=_fractional_density(U, eta_spec, quad, traj.grid, jumps=jumps, d2=d2),
    )


def _report(traj: Trajectory, terms: _EntropyTerms, quad: LevyQuadrature, phi: TestFunction,
            mode: str) -> DissipationReport:
    grid = traj.grid
    h = grid.spacing
    _, dts, ts = _time_slices(traj)
    b = phi.bump(grid)
    lhs = float(h * np.dot(terms.eta0, b) * phi.ramp(0.0))
    if len(dts):
        r_now = phi.ramp(ts)
        ramp_step = phi.ramp(traj.times[1:]) - r_now  # = dt * (average of ramp')
        Lb = apply_levy_array(b, quad) if not quad.is_empty else np.zeros_like(b)
        space = terms.Q @ phi.bump_dx(grid) + terms.R @ phi.bump_dxx(grid) + terms.E @ Lb
        lhs += float(h * np.dot(ramp_step, terms.E @ b))
        lhs += float(h * np.dot(dts * r_now, space))
    n_u = max(0.0, _contract(terms.n_dens, phi, grid, dts, ts))
    m_u = max(0.0, _contract(terms.m_dens, phi, grid, dts, ts))
    simpler = lhs - n_u
    full = simpler - m_u
    return DissipationReport(n_u, m_u, lhs, full if mode == "full" else simpler, mode,
                             simpler, full)


def entropy_residual(traj: Trajectory, eta_spec: Entropy, flux: FluxModel, diff: DiffusionModel,
                     quad: LevyQuadrature, phi: TestFunction, mode: str = "full", *,
                     measure: LevyMeasure | None = None, triple=None,
                     jumps: np.ndarray | None = None, diff_tables: dict | None = None
                     ) -> DissipationReport:
    """Left-hand side of the entropy inequality minus the dissipation terms.

    The time derivative of phi enters through its exact average over each
    step, (phi(t_{n+1}) - phi(t_n)) / dt_n.
    """
    if mode not in ("full", "simpler"):
        raise ValueError("mode must be 'full' or 'simpler'")
    if mode == "simpler":
        check_simpler_precondition(traj, measure)
    interval = _interval_of(traj)
    if triple is None:
        triple = build_triple(eta_spec, flux, diff, interval)
    if diff_tables is None and diff.zeta_closed is None and not diff.degenerate_everywhere:
        diff_tables = diff.tables(interval)
    terms = _entropy_terms(traj, eta_spec, triple, diff, quad, jumps, diff_tables)
    return _report(traj, terms, quad, phi, mode)


# ---------------------------------------------------------------------------
# battery over entropies and two refinement levels

def default_battery(interval: tuple[float, float], n_thresholds: int = 9,
                    epsilons=(1e-1, 1e-2)) -> list[tuple[Entropy, float]]:
    """(entropy, threshold c) pairs; c is nan for the translation-free ones."""
    lo, hi = interval
    out = [(Entropy.quadratic(), math.nan), (Entropy.exponential(), math.nan)]
    for eps in epsilons:
        for variant in ("plus", "minus"):
            for c in np.linspace(lo, hi, n_thresholds):
                out.append((Entropy.kruzkov(eps, variant, float(c)), float(c)))
    return out


@dataclass(frozen=True)
class AuditRow:
    entropy: str
    c: float
    phi_id: str
    mode: str
    n_u: float
    m_u: float
    lhs: float
    residual: float
    residual_coarse: float = math.nan
    tol_audit: float = math.nan

    @property
    def passed(self) -> bool:
        if math.isnan(self.tol_audit):
            return True
        return self.residual >= -self.tol_audit and self.n_u >= 0 and self.m_u >= 0


def audit_trajectory(traj: Trajectory, flux: FluxModel, diff: DiffusionModel, quad: LevyQuadrature,
                     battery, phis, mode: str = "full", measure=None,
                     interval: tuple[float, float] | None = None, triples=None) -> list[AuditRow]:
    """Audit rows for every (entropy, test function) pair.

    ``triples`` may carry prebuilt entropy triples aligned with ``battery``
    (they only depend on the models and the state interval).
    """
    if mode not in ("full", "simpler"):
        raise ValueError("mode must be 'full' or 'simpler'")
    if mode == "simpler":
        check_simpler_precondition(traj, measure)
    interval = interval or _interval_of(traj)
    jumps = jump_matrix(traj.grid, quad) if len(quad.node_offsets) else None
    grad2 = None
    if not diff.degenerate_everywhere:
        tables = diff.tables(interval) if diff.zeta_closed is None else None
        U, _, _ = _time_slices(traj)
        grad2 = np.sum(_dx_central(diff.zeta_values(U, tables), traj.grid.spacing) ** 2, axis=0)
    if triples is None:
        triples = [build_triple(ent, flux, diff, interval) for ent, _ in battery]
    rows = []
    for (ent, c), triple in zip(battery, triples):
        terms = _entropy_terms(traj, ent, triple, diff, quad, jumps, grad2=grad2)
        for phi in phis:
            rep = _report(traj, terms, quad, phi, mode)
            rows.append(AuditRow(ent.name, c, phi.name, mode, rep.n_u, rep.m_u, rep.lhs, rep.residual))
    return rows


def refinement_audit(fine: list[AuditRow], coarse: list[AuditRow], floor: float = 1e-12,
                     per_row: bool = False) -> list[AuditRow]:
    """Attach tol_audit, twice the residual drift between the two levels.

    The drift is an estimate of C (h + dt).  By default C is estimated once
    per entropy family (same entropy name, i.e. every threshold c and every
    test function of that family): on trajectories without shocks the
    residual is a sum of competing first-order errors, and a single row's
    drift can vanish by cancellation although its error does not.
    ``per_row=True`` uses each row's own drift instead.  A round-off floor
    relative to the row's scale is added either way.
    """
    drift = []
    for a, b in zip(fine, coarse, strict=True):
        if (a.entropy, a.phi_id, a.mode) != (b.entropy, b.phi_id, b.mode) or not (
                a.c == b.c or (math.isnan(a.c) and math.isnan(b.c))):
            raise ValueError("audit rows of the two levels do not line up")
        drift.append(abs(a.residual - b.residual))
    family: dict[str, float] = {}
    for a, d in zip(fine, drift):
        family[a.entropy] = max(family.get(a.entropy, 0.0), d)
    out = []
    for a, b, d in zip(fine, coarse, drift):
        scale = max(abs(a.lhs), abs(a.n_u), abs(a.m_u), 1.0)
        tol = 2.0 * (d if per_row else family[a.entropy]) + floor * scale
        out.append(AuditRow(a.entropy, a.c, a.phi_id, a.mode, a.n_u, a.m_u, a.lhs, a.residual,
                            b.residual, tol))
    return out
