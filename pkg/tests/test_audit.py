"""Entropy audit: test functions, dissipation functionals, residuals."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from levy_hypar.audit import (AuditPreconditionError, AuditRow, TestFunction, audit_trajectory,
                              chain_rule_residual, check_simpler_precondition, default_battery,
                              entropy_residual, fractional_dissipation, parabolic_dissipation,
                              refinement_audit, square_increment_functional)
from levy_hypar.grid import Grid1D, Trajectory
from levy_hypar.initial import sine
from levy_hypar.levy import FractionalFull, FractionalTruncated, LevyQuadrature, build_quadrature
from levy_hypar.models import DiffusionModel, Entropy, FluxModel
from levy_hypar.solver import SolverConfig, solve

G = Grid1D(32, 2.0)
Q = build_quadrature(FractionalTruncated(0.8, 0.5), G.spacing, G.spacing, 1.0)
ONE = TestFunction()
BUMP = TestFunction(center=0.7, width=0.3, ramp_start=0.01, ramp_end=0.05, name="bump")


def synthetic(values, dt=0.01, grid=G):
    values = np.atleast_2d(values)
    times = dt * np.arange(len(values))
    return Trajectory(grid, times, tuple(grid.field(v, t) for v, t in zip(values, times)))


def constant_traj(c, k=5):
    return synthetic(np.full((k, G.n_cells), c))


def solved(n=64, t=0.05, diff=None, levy=True, amp=1.0, length=2.0, rho=0.0):
    g = Grid1D(n, length)
    q = build_quadrature(FractionalTruncated(0.8, 0.5), g.spacing, g.spacing, 1.0) if levy else None
    cfg = SolverConfig(g, FluxModel.burgers(), diff or DiffusionModel.none(), q, rho=rho,
                       t_end=t, record_all_steps=True)
    return solve(cfg, sine(g, amp)), cfg


traj_values = arrays(np.float64, (3, 32), elements=st.floats(-1, 1))
kruzkov = st.builds(Entropy.kruzkov, st.sampled_from([0.5, 0.1, 0.01]),
                    st.sampled_from(["plus", "minus", "signed"]), st.floats(-1, 1))


# -- test functions ---------------------------------------------------------------

def test_test_function_shape_and_support():
    t = np.linspace(0, 0.06, 61)
    phi = BUMP.phi(t, G)
    assert np.all(phi >= 0)
    assert np.all(phi[t >= 0.05] == 0)
    assert BUMP.bump(G, [0.7])[0] == 1.0
    with pytest.raises(ValueError):
        TestFunction(ramp_start=0.1, ramp_end=0.1)
    with pytest.raises(ValueError):
        TestFunction(width=0.0)


def test_test_function_derivatives_match_finite_differences():
    x = np.linspace(0.05, 1.95, 17)
    d = 1e-5
    f = lambda y: BUMP.bump(G, y)
    assert np.allclose(BUMP.bump_dx(G, x), (f(x + d) - f(x - d)) / (2 * d), atol=1e-6)
    assert np.allclose(BUMP.bump_dxx(G, x), (f(x + d) - 2 * f(x) + f(x - d)) / d**2, atol=1e-3)
    t = np.linspace(0.0, 0.06, 13)
    assert np.allclose(BUMP.ramp_dt(t), (BUMP.ramp(t + 1e-7) - BUMP.ramp(t - 1e-7)) / 2e-7, atol=1e-3)


# -- parabolic dissipation ------------------------------------------------------------

def test_parabolic_trivial_cases(rng):
    tr = synthetic(rng.uniform(-1, 1, (4, 32)))
    assert parabolic_dissipation(tr, Entropy.quadratic(), DiffusionModel.none(), ONE) == 0.0
    assert parabolic_dissipation(tr, Entropy.affine(2.0), DiffusionModel.constant(1.0), ONE) == 0.0


def test_parabolic_gradient_energy(rng):
    vals = rng.uniform(-1, 1, (4, 32))
    tr = synthetic(vals)
    h = G.spacing
    energy = sum(0.01 * h * np.sum(((np.roll(v, -1) - np.roll(v, 1)) / (2 * h)) ** 2) for v in vals[:-1])
    got = parabolic_dissipation(tr, Entropy.quadratic(), DiffusionModel.constant(1.0), ONE)
    assert got == pytest.approx(energy, rel=1e-12)


# -- fractional dissipation ------------------------------------------------------------

def test_fractional_constant_is_zero():
    for ent in (Entropy.quadratic(), Entropy.exponential(), Entropy.kruzkov(0.1, "plus", 0.3)):
        assert fractional_dissipation(constant_traj(0.3), ent, Q, ONE) == pytest.approx(0, abs=1e-13)


def test_fractional_quadratic_closed_weight(rng):
    vals = rng.uniform(-1, 1, (3, 32))
    tr = synthetic(vals)
    h, n = G.spacing, G.n_cells
    expect = 0.0
    for v in vals[:-1]:
        jumps = sum(w * (np.roll(v, -j) - v) ** 2 for j, w in zip(Q.node_offsets, Q.weights))
        surr = Q.surrogate_moment / 2 * ((np.roll(v, -1) - np.roll(v, 1)) / (2 * h)) ** 2
        expect += 0.01 * h * np.sum(0.5 * jumps + surr)
    for method in ("commutator", "quadrature", "closed"):
        got = fractional_dissipation(tr, Entropy.quadratic(), Q, ONE, method=method)
        assert got == pytest.approx(expect, rel=1e-10), method


@pytest.mark.parametrize("ent", [Entropy.exponential(), Entropy.kruzkov(0.1, "minus", 0.2)])
def test_fractional_code_paths_agree(ent, rng):
    tr = synthetic(rng.uniform(-1, 1, (3, 32)))
    a = fractional_dissipation(tr, ent, Q, BUMP, method="commutator")
    b = fractional_dissipation(tr, ent, Q, BUMP, method="quadrature")
    assert a == pytest.approx(b, rel=0.05)
    with pytest.raises(ValueError):
        fractional_dissipation(tr, ent, Q, BUMP, method="other")


@given(traj_values, kruzkov)
def test_dissipation_nonnegative(vals, ent):
    tr = synthetic(vals)
    assert parabolic_dissipation(tr, ent, DiffusionModel.threshold(0.2), BUMP) >= 0
    assert fractional_dissipation(tr, ent, Q, BUMP) >= 0


@given(traj_values)
def test_square_increment_is_twice_quadratic_dissipation(vals):
    tr = synthetic(vals)
    sq = square_increment_functional(tr, Q)
    m = fractional_dissipation(tr, Entropy.quadratic(), Q, ONE)
    assert sq == pytest.approx(2 * m, rel=1e-10, abs=1e-12)


def test_square_increment_stable_under_refinement():
    vals = []
    for n in (128, 256, 512):
        g = Grid1D(n, 2.0)
        q = build_quadrature(FractionalTruncated(0.8, 0.5), g.spacing, g.spacing, 1.0)
        cfg = SolverConfig(g, FluxModel.zero(), DiffusionModel.none(), q, t_end=0.1,
                           record_all_steps=True)
        vals.append(square_increment_functional(solve(cfg, sine(g)), q))
    assert max(vals) / min(vals) < 1.1, vals
    assert square_increment_functional(constant_traj(2.0), Q) == 0.0


# -- chain rule -------------------------------------------------------------------------

def test_chain_rule_trivial(rng):
    tr = synthetic(rng.uniform(-1, 1, (3, 32)))
    d = DiffusionModel.power(2.0)
    assert chain_rule_residual(tr, d, lambda u: np.ones_like(u)) == 0.0
    assert chain_rule_residual(constant_traj(0.4), d, lambda u: u) == 0.0


def test_chain_rule_converges():
    res = []
    for n in (128, 256):
        tr, _ = solved(n, t=0.05, diff=DiffusionModel.power(2.0), levy=False, amp=0.5)
        res.append(chain_rule_residual(tr, DiffusionModel.power(2.0), lambda u: u))
    assert res[0] / res[1] > 1.8, res


# -- entropy residual ---------------------------------------------------------------------

@pytest.mark.parametrize("ent", [Entropy.quadratic(), Entropy.exponential(),
                                 Entropy.kruzkov(0.1, "plus", 0.1)])
def test_constant_trajectory_residual_vanishes(ent):
    phi = TestFunction(center=0.3, width=0.2, ramp_end=0.04)
    rep = entropy_residual(constant_traj(0.5), ent, FluxModel.burgers(), DiffusionModel.constant(1.0),
                           Q, phi)
    assert abs(rep.residual) < 1e-12 and rep.n_u == 0 and rep.m_u == pytest.approx(0, abs=1e-14)


def test_full_equals_simpler_minus_m(rng):
    tr, cfg = solved(64, t=0.03)
    phi = TestFunction(center=1.0, width=0.3, ramp_end=0.03)
    for ent in (Entropy.quadratic(), Entropy.kruzkov(0.01, "minus", 0.2)):
        full = entropy_residual(tr, ent, cfg.flux, cfg.diffusion, cfg.quad, phi)
        simp = entropy_residual(tr, ent, cfg.flux, cfg.diffusion, cfg.quad, phi, "simpler",
                                measure=FractionalTruncated(0.8, 0.5))
        assert full.residual == simp.residual - full.m_u
        assert full.residual_simpler == simp.residual


@given(traj_values)
def test_linear_entropy_has_no_dissipation(vals):
    rep = entropy_residual(synthetic(vals), Entropy.affine(1.5, 0.2), FluxModel.burgers(),
                           DiffusionModel.constant(1.0), Q, BUMP)
    assert rep.n_u == 0 and rep.m_u == 0


def test_kruzkov_below_minimum_is_an_equality():
    phi = TestFunction(center=1.0, width=0.3, ramp_end=0.05)
    out = []
    for n in (64, 128):
        tr, cfg = solved(n, t=0.05, diff=DiffusionModel.power(2.0))
        ent = Entropy.kruzkov(0.01, "plus", -1.5)  # c + eps below min u
        out.append(entropy_residual(tr, ent, cfg.flux, cfg.diffusion, cfg.quad, phi))
    assert out[1].n_u == 0 and out[1].m_u == pytest.approx(0, abs=1e-14)  # commutator round-off
    tol = 2 * abs(out[1].residual - out[0].residual) + 1e-12 * abs(out[1].lhs)
    assert abs(out[1].residual) <= tol
    assert abs(out[1].residual) < 1e-10


def test_shock_dissipates_quadratic_entropy():
    phi = TestFunction(center=1.0, width=0.4, ramp_end=1.0)
    res = []
    for amp in (0.5, 1.0, 2.0):
        tr, cfg = solved(128, t=1.0, levy=False, amp=amp)
        res.append(entropy_residual(tr, Entropy.quadratic(), cfg.flux, cfg.diffusion, cfg.quad,
                                    phi).residual)
    assert 0 < res[0] < res[1] < res[2], res


def test_simpler_precondition_branches():
    tr, _ = solved(32, t=0.02, levy=False)
    assert check_simpler_precondition(tr, FractionalTruncated(0.5)) == "first_moment"
    assert check_simpler_precondition(tr, FractionalTruncated(1.5)) == "second_moment_bv"
    with pytest.raises(AuditPreconditionError, match="neither"):
        check_simpler_precondition(tr, FractionalFull(1.5))
    growing = synthetic(np.stack([np.zeros(32), np.sin(G.x)]))
    with pytest.raises(AuditPreconditionError, match="BV"):
        check_simpler_precondition(growing, FractionalTruncated(1.5))
    with pytest.raises(AuditPreconditionError):
        check_simpler_precondition(tr, None)
    with pytest.raises(ValueError):
        entropy_residual(tr, Entropy.quadratic(), FluxModel.burgers(), DiffusionModel.none(),
                         LevyQuadrature.empty(tr.grid.spacing), ONE, mode="half")


# -- battery and refinement --------------------------------------------------------------

def test_default_battery():
    bat = default_battery((-1, 1))
    assert len(bat) == 2 + 2 * 2 * 9
    cs = sorted({c for _, c in bat if not math.isnan(c)})
    assert cs[0] == -1 and cs[-1] == 1 and len(cs) == 9


def test_audit_rows_match_single_residuals():
    tr, cfg = solved(32, t=0.02)
    bat = default_battery((-1, 1), n_thresholds=3, epsilons=(0.1,))
    rows = audit_trajectory(tr, cfg.flux, cfg.diffusion, cfg.quad, bat, [ONE, BUMP])
    assert len(rows) == len(bat) * 2
    for row, ((ent, _), phi) in zip(rows, [(b, p) for b in bat for p in (ONE, BUMP)]):
        rep = entropy_residual(tr, ent, cfg.flux, cfg.diffusion, cfg.quad, phi)
        assert row.residual == pytest.approx(rep.residual, rel=1e-9, abs=1e-13)


def row(ent, c, res, phi="p"):
    return AuditRow(ent, c, phi, "full", 0.0, 0.0, 1.0, res)


def test_refinement_tolerance():
    fine = [row("a", 0.0, -0.01), row("a", 1.0, 0.5), row("b", math.nan, 0.2)]
    coarse = [row("a", 0.0, -0.01), row("a", 1.0, 0.4), row("b", math.nan, 0.25)]
    out = refinement_audit(fine, coarse, floor=0.0)
    assert [r.tol_audit for r in out] == pytest.approx([0.2, 0.2, 0.1])
    assert all(r.passed for r in out)
    strict = refinement_audit(fine, coarse, floor=0.0, per_row=True)
    assert not strict[0].passed and strict[0].tol_audit == 0.0
    with pytest.raises(ValueError):
        refinement_audit(fine, coarse[::-1])
    with pytest.raises(ValueError):
        refinement_audit(fine, coarse[:2])
