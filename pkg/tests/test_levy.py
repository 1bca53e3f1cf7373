"""Lévy measures: moments, symbol and the grid-aligned quadrature.

Oracles are independent of the package: closed-form antiderivatives and
mpmath quadrature of the raw density.
"""

import math
import warnings

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

mp.mp.dps = 30

from levy_hypar.levy import (CustomDensity, DegenerateMeasureWarning, FractionalFull,
                             FractionalTruncated, MeasureInvalidError, SelfInteractionWarning,
                             TabulatedDensity, ZeroMeasure, build_quadrature, check_integrability,
                             drift_correction, levy_symbol, small_jump_moment, total_first_moment,
                             total_second_moment)


def mp_integral(m, lo, hi, power=0):
    """2 * int_lo^hi r^power m(r) dr by mpmath (even density)."""
    return 2 * float(mp.quad(lambda r: r**power * m(r), [lo, hi]))


def mp_symbol(m, omega, hi):
    return 2 * float(mp.quad(lambda r: (mp.cos(omega * r) - 1) * m(r), mp.linspace(0, hi, 9)))


# -- integrability ------------------------------------------------------------

def test_truncated_moments():
    rep = check_integrability(FractionalTruncated(0.5, 1.0))
    assert rep.first_moment_outer == 0.0
    oracle = mp_integral(lambda r: r ** -1.5, 0, 1, power=2)
    assert rep.second_moment_inner == pytest.approx(4 / 3, rel=1e-12)
    assert oracle == pytest.approx(4 / 3, rel=1e-10)


def test_full_outer_first_moment():
    rep = check_integrability(FractionalFull(1.5, 1.0))
    assert rep.first_moment_outer == pytest.approx(4.0, rel=1e-12)
    assert mp_integral(lambda r: r ** -2.5, 1, mp.inf, power=1) == pytest.approx(4.0, rel=1e-10)


def test_non_integrable_custom_measure_rejected():
    m = CustomDensity(lambda z: abs(z) ** -3.0, 1.0)
    with pytest.raises(MeasureInvalidError):
        check_integrability(m)


@pytest.mark.parametrize("bad", [lambda: FractionalTruncated(2.0), lambda: FractionalTruncated(0.0),
                                 lambda: FractionalFull(1.0), lambda: FractionalFull(0.5),
                                 lambda: FractionalTruncated(0.5, -1.0)])
def test_parameter_validation(bad):
    with pytest.raises(MeasureInvalidError):
        bad()


def test_custom_density_must_be_even():
    with pytest.raises(MeasureInvalidError):
        CustomDensity(lambda z: 1.0 if z > 0 else 2.0, 1.0)
    with pytest.raises(MeasureInvalidError):
        CustomDensity(lambda z: -1.0, 1.0)


def test_total_moments():
    assert total_first_moment(FractionalTruncated(0.5)) == pytest.approx(2 / 0.5, rel=1e-12)
    assert math.isinf(total_first_moment(FractionalTruncated(1.5)))
    assert total_second_moment(FractionalTruncated(1.5)) == pytest.approx(2 / 0.5, rel=1e-12)
    assert math.isinf(total_second_moment(FractionalFull(1.5)))


# -- small-jump moment --------------------------------------------------------

def test_small_jump_moment_closed_form():
    val = small_jump_moment(FractionalTruncated(0.5, 1.0), 0.5)
    assert val == pytest.approx((4 / 3) * 0.5**1.5, rel=1e-12)
    assert val == pytest.approx(0.4714, abs=1e-4)
    assert val == pytest.approx(mp_integral(lambda r: r ** -1.5, 0, 0.5, power=2), rel=1e-10)


@given(st.floats(0.05, 1.95), st.floats(1e-4, 0.99), st.floats(1e-4, 0.99))
def test_small_jump_moment_monotone(alpha, k1, k2):
    m = FractionalTruncated(alpha, 1.0)
    lo, hi = sorted((k1, k2))
    assert 0 <= small_jump_moment(m, lo) <= small_jump_moment(m, hi)


def test_small_jump_moment_vanishes():
    m = FractionalTruncated(1.5, 1.0)
    vals = [small_jump_moment(m, k) for k in (1e-2, 1e-4, 1e-8)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-3


def test_small_jump_moment_custom_matches_oracle():
    m = CustomDensity(lambda z: math.exp(-abs(z)) / abs(z) ** 0.7, 3.0)
    assert small_jump_moment(m, 0.8) == pytest.approx(
        mp_integral(lambda r: mp.exp(-r) / r**0.7, 0, 0.8, power=2), rel=1e-9)


# -- drift --------------------------------------------------------------------

def test_drift_symmetric_zero():
    assert drift_correction(FractionalTruncated(0.5), 0.1) == 0.0
    assert drift_correction(CustomDensity(lambda z: 1.0, 1.0), 0.3) == 0.0


@pytest.mark.parametrize("kappa", [0.1, 0.25, 0.6])
def test_drift_one_sided_oracle(kappa):
    m = CustomDensity(lambda z: 1.0 if kappa < z < 1 else 0.0, 1.0, symmetric=False,
                      breakpoints=(kappa,))
    assert drift_correction(m, kappa) == pytest.approx((1 - kappa**2) / 2, rel=1e-9)


def test_drift_kappa_beyond_one():
    m = CustomDensity(lambda z: 1.0 if z > 0 else 0.0, 2.0, symmetric=False)
    assert drift_correction(m, 1.0) == 0.0 and drift_correction(m, 1.5) == 0.0


# -- symbol -------------------------------------------------------------------

def test_symbol_zero_frequency():
    assert levy_symbol(FractionalTruncated(0.5), 0.0) == 0.0


def test_symbol_small_frequency_taylor():
    m = FractionalTruncated(0.5, 1.0)
    for w in (1e-1, 1e-2):
        assert levy_symbol(m, w) == pytest.approx(-w**2 * (2 / 3), rel=w**2)


@pytest.mark.parametrize("alpha,omega", [(0.5, 3.0), (1.0, 10.0), (1.5, 40.0)])
def test_symbol_truncated_matches_mpmath(alpha, omega):
    m = FractionalTruncated(alpha, 1.0)
    oracle = mp_symbol(lambda r: r ** (-1 - alpha), omega, 1)
    assert levy_symbol(m, omega) == pytest.approx(oracle, rel=1e-9)


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
def test_full_kernel_unit_symbol(alpha):
    m = FractionalFull(alpha, FractionalFull.unit_symbol_strength(alpha))
    p1, p2 = levy_symbol(m, 1.0), levy_symbol(m, 2.0)
    assert p1 == pytest.approx(-1.0, rel=1e-8)
    assert p2 / p1 == pytest.approx(2**alpha, rel=1e-8)


@given(st.floats(0.1, 1.9), st.floats(0.01, 60))
def test_symbol_even_nonpositive(alpha, omega):
    m = FractionalTruncated(alpha, 1.0)
    a, b = levy_symbol(m, omega), levy_symbol(m, -omega)
    assert a <= 0 and a == b


# -- quadrature -----------------------------------------------------------------

def test_support_inside_kappa_gives_empty_node_set():
    h = 0.01
    m = CustomDensity(lambda z: 1.0 / abs(z), 0.02)
    q = build_quadrature(m, h, 0.03, 1.0)
    assert len(q.node_offsets) == 0
    assert q.small_moment == pytest.approx(mp_integral(lambda r: 1 / r, 0, 0.02, power=2), rel=1e-10)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_total_jump_mass_matches_oracle(alpha):
    h = 1 / 128
    m = FractionalTruncated(alpha, 1.0)
    # kappa on a cell face: the cells tile (kappa, 1] exactly
    q = build_quadrature(m, h, 1.5 * h, 1.0)
    oracle = mp_integral(lambda r: r ** (-1 - alpha), 1.5 * h, 1)
    assert q.jump_rate == pytest.approx(oracle, rel=1e-10)
    # kappa = h: the band (h, 1.5h) carries no node
    q1 = build_quadrature(m, h, h, 1.0)
    gap = mp_integral(lambda r: r ** (-1 - alpha), h, 1.5 * h)
    assert q1.jump_rate + gap == pytest.approx(mp_integral(lambda r: r ** (-1 - alpha), h, 1), rel=1e-10)


def test_quadrature_invariants():
    q = build_quadrature(FractionalTruncated(0.7, 2.0), 0.01, 0.035, 1.0)
    assert np.all(q.weights >= 0)
    assert np.all(np.abs(q.nodes) > q.split_radius)
    pos = dict(zip(q.node_offsets, q.weights))
    assert all(pos[-j] == w for j, w in pos.items())
    assert q.drift == 0
    assert q.tail_mass_dropped == 0


@given(st.floats(0.1, 1.9), st.sampled_from([32, 64, 100, 256]), st.integers(1, 4))
def test_weight_symmetry_exact(alpha, n, kc):
    h = 2.0 / n
    q = build_quadrature(FractionalTruncated(alpha, 1.0), h, kc * h, 1.0)
    w = dict(zip(q.node_offsets.tolist(), q.weights.tolist()))
    assert sorted(w) == sorted(-j for j in w)
    assert all(w[j] == w[-j] for j in w)


def test_full_kernel_tail_diagnostic():
    m = FractionalFull(1.5, 1.0)
    q = build_quadrature(m, 1 / 64, tail_cut=2.0, length=8.0)
    assert q.tail_mass_dropped == pytest.approx(mp_integral(lambda r: r ** -2.5, 2, mp.inf, power=1),
                                                rel=1e-10)


@pytest.mark.parametrize("alpha", [0.5, 1.5])
def test_second_moment_refinement_consistency(alpha):
    m = FractionalTruncated(alpha, 1.0)
    target = check_integrability(m).second_moment_inner
    errs = []
    for n in (64, 128, 256, 512):
        h = 1.0 / n
        q = build_quadrature(m, h, h, 1.0, moment_matching=False)
        errs.append(abs(q.small_moment + np.sum(q.weights * q.nodes**2) - target) / target)
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-2
    # moment matching closes the gap exactly
    q = build_quadrature(m, 1 / 256, 1 / 256, 1.0)
    assert q.surrogate_moment + np.sum(q.weights * q.nodes**2) == pytest.approx(target, rel=1e-12)


def test_quadrature_errors_and_warnings():
    m = FractionalTruncated(0.5)
    with pytest.raises(ValueError):
        build_quadrature(m, 0.01, 0.005, 1.0)
    with pytest.raises(ValueError):
        build_quadrature(m, 0.01, 0.01, 0.5)
    with pytest.raises(ValueError):
        build_quadrature(FractionalFull(1.5), 0.01)  # unbounded support, no tail_cut
    with pytest.warns(DegenerateMeasureWarning):
        build_quadrature(ZeroMeasure(), 0.01, 0.01, 1.0)
    with pytest.warns(SelfInteractionWarning):
        build_quadrature(FractionalFull(1.5), 0.01, 0.01, 3.0, length=4.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_quadrature(FractionalFull(1.5), 0.01, 0.01, 2.0, length=4.0)


def test_tabulated_density_from_csv(tmp_path):
    p = tmp_path / "m.csv"
    z = np.linspace(0.05, 1.0, 40)
    p.write_text("z,m\n" + "\n".join(f"{float(a)!r},{float(b)!r}" for a, b in zip(z, 2.0 * z)))
    m = TabulatedDensity.from_csv(p)
    assert m.density(-0.5) == pytest.approx(1.0)
    assert m.density(2.0) == 0.0
    # piecewise-linear table of 2z on [0.05, 1]: int z^2 * 2z dz, both sides
    assert check_integrability(m).second_moment_inner == pytest.approx(2 * (1 - 0.05**4) / 2, rel=1e-9)
