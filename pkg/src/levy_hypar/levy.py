r"""Pure-jump Lévy measures :math:`\pi(dz) = m(z)\,dz` on the line.

Every measure exposes half-line integrals

.. math::

    I_p^\pm(a, b) = \int_a^b r^p\, m(\pm r)\, dr, \qquad 0 \le a < b \le \infty,

from which the moment report, the small-jump moment, the drift correction
and the grid-aligned quadrature weights are all assembled.  The fractional
kernels use closed-form antiderivatives; everything else goes through
adaptive quadrature.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, special

OVERFLOW_GUARD = 1e300
_SIDES = (1, -1)


class MeasureInvalidError(ValueError):
    """The measure violates the integrability condition."""


class QuadratureError(RuntimeError):
    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved abs error {achieved:.3e})")
        self.achieved = achieved


class DegenerateMeasureWarning(UserWarning):
    pass


class SelfInteractionWarning(UserWarning):
    """Jumps longer than half the period alias onto shorter ones."""


def _quad(func, a, b, *, what: str, epsabs=1e-13, epsrel=1e-11, **kw) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(func, a, b, epsabs=epsabs, epsrel=epsrel, limit=400, **kw)
        except (ArithmeticError, ValueError) as exc:
            raise QuadratureError(f"{what}: integrand not finite ({exc})", float("inf")) from exc
    if not np.isfinite(val) or abs(val) > OVERFLOW_GUARD:
        raise QuadratureError(f"{what}: integral diverged", float("inf"))
    if err > max(1e-9, 1e-7 * abs(val)):
        raise QuadratureError(f"{what}: quadrature did not converge", err)
    return float(val)


class LevyMeasure:
    """Base class.  Subclasses provide ``density`` and may override the
    half-line integrals with closed forms."""

    kind = "abstract"
    symmetric = True
    support_radius = math.inf

    def density(self, z):
        raise NotImplementedError

    def _breakpoints(self) -> tuple[float, ...]:
        return ()

    def half_moment(self, power: float, lo, hi, side: int = 1):
        """``int_lo^hi r**power * m(side*r) dr``; accepts arrays for lo/hi."""
        lo_arr, hi_arr = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
        out = np.empty(lo_arr.shape)
        for idx in np.ndindex(lo_arr.shape):
            out[idx] = self._half_moment_scalar(power, float(lo_arr[idx]), float(hi_arr[idx]), side)
        return out if out.ndim else float(out)

    def _half_moment_scalar(self, power, lo, hi, side):
        hi = min(hi, self.support_radius)
        if hi <= lo:
            return 0.0
        func = lambda r: r**power * self.density(side * r)
        pts = [p for p in self._breakpoints() if lo < p < hi]
        if math.isinf(hi):
            return _quad(func, lo, hi, what="moment")
        return _quad(func, lo, hi, what="moment", points=pts or None)

    def half_symbol(self, omega: float, lo: float, hi: float, side: int = 1) -> float:
        """``int_lo^hi (cos(omega r) - 1) m(side*r) dr``."""
        hi = min(hi, self.support_radius)
        if hi <= lo or omega == 0.0:
            return 0.0
        if math.isinf(hi):
            raise NotImplementedError(f"{self.kind}: no tail rule for infinite support")
        return _oscillatory(lambda r: self.density(side * r), omega, lo, hi, self._breakpoints())

    def symbol_pieces(self):
        """Pieces (weight, measure, r_lo, r_hi) this measure is a sum of."""
        return ((1.0, self, 0.0, math.inf),)

    def restricted(self, r_lo: float, r_hi: float, weight: float = 1.0) -> "LevyMeasure":
        return CombinedMeasure(((weight, self, r_lo, r_hi),))

    def __add__(self, other: "LevyMeasure") -> "LevyMeasure":
        return CombinedMeasure(tuple(self.symbol_pieces()) + tuple(other.symbol_pieces()))


def _oscillatory(m, omega, lo, hi, breakpoints=()):
    # -2 sin^2(wr/2) is cos(wr) - 1 without cancellation near r = 0
    w = abs(omega)
    f = lambda r: -2.0 * math.sin(0.5 * w * r) ** 2 * m(r)
    cuts = sorted({lo, hi, *[p for p in breakpoints if lo < p < hi]})
    r0 = 1.0 / w
    if lo < r0 < hi:
        cuts = sorted(set(cuts) | {r0})
    # one sub-interval per half period keeps quad well inside its limit
    period = math.pi / w
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a > period:
            edges = np.append(np.arange(a, b, period), b)
            for c, d in zip(edges[:-1], edges[1:]):
                if d > c:
                    total += _quad(f, c, d, what="symbol")
        else:
            total += _quad(f, a, b, what="symbol")
    return total


@dataclass(frozen=True)
class FractionalTruncated(LevyMeasure):
    """``strength * |z|**(-1-alpha)`` on ``|z| < 1``."""

    alpha: float
    strength: float = 1.0

    kind = "fractional_truncated"
    support_radius = 1.0

    def __post_init__(self):
        if not 0 < self.alpha < 2:
            raise MeasureInvalidError(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.strength < 0:
            raise MeasureInvalidError("strength must be nonnegative")

    def density(self, z):
        z = np.abs(np.asarray(z, float))
        with np.errstate(divide="ignore"):
            out = np.where((z > 0) & (z < 1), self.strength * z ** (-1.0 - self.alpha), 0.0)
        return out if out.ndim else float(out)

    def half_moment(self, power, lo, hi, side=1):
        return _power_law_moment(self.strength, self.alpha, power, lo, np.minimum(hi, 1.0))

    def half_symbol(self, omega, lo, hi, side=1):
        hi = min(hi, 1.0)
        if hi <= lo or omega == 0.0:
            return 0.0
        return _oscillatory(lambda r: self.strength * r ** (-1.0 - self.alpha), omega, lo, hi)


@dataclass(frozen=True)
class FractionalFull(LevyMeasure):
    """``strength * |z|**(-1-alpha)`` on the whole line, ``1 < alpha < 2``."""

    alpha: float
    strength: float = 1.0

    kind = "fractional_full"

    def __post_init__(self):
        if not 1 < self.alpha < 2:
            raise MeasureInvalidError(
                f"fractional_full needs alpha in (1, 2) for a finite outer first moment, got {self.alpha}"
            )
        if self.strength < 0:
            raise MeasureInvalidError("strength must be nonnegative")

    def density(self, z):
        z = np.abs(np.asarray(z, float))
        with np.errstate(divide="ignore"):
            out = np.where(z > 0, self.strength * z ** (-1.0 - self.alpha), 0.0)
        return out if out.ndim else float(out)

    def half_moment(self, power, lo, hi, side=1):
        return _power_law_moment(self.strength, self.alpha, power, lo, hi)

    def half_symbol(self, omega, lo, hi, side=1):
        if hi <= lo or omega == 0.0:
            return 0.0
        m = lambda r: self.strength * r ** (-1.0 - self.alpha)
        if math.isfinite(hi):
            return _oscillatory(m, omega, lo, hi)
        w = abs(omega)
        split = max(lo, 2.0 * math.pi / w, 1.0)
        head = _oscillatory(m, omega, lo, split) if split > lo else 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            cos_tail, err = integrate.quad(m, split, np.inf, weight="cos", wvar=w,
                                           limlst=200, epsabs=1e-14)
        if err > max(1e-8, 1e-7 * abs(cos_tail)):
            raise QuadratureError("symbol tail did not converge", err)
        return head + cos_tail - self.strength * split ** (-self.alpha) / self.alpha

    @staticmethod
    def unit_symbol_strength(alpha: float) -> float:
        """Strength for which the symbol is exactly ``-|omega|**alpha``."""
        # int_0^inf (1 - cos r) r^(-1-alpha) dr = -Gamma(-alpha) cos(pi alpha / 2)
        half = -special.gamma(-alpha) * math.cos(0.5 * math.pi * alpha)
        return 1.0 / (2.0 * half)


def _power_law_moment(strength, alpha, power, lo, hi):
    lo_a, hi_a = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
    e = power - alpha
    out = np.zeros(lo_a.shape)
    ok = hi_a > lo_a
    if np.any(ok):
        a, b = lo_a[ok], hi_a[ok]
        if e == 0:
            with np.errstate(divide="ignore"):
                vals = np.log(b) - np.log(a)
        else:
            with np.errstate(divide="ignore"):
                vals = (b**e - a**e) / e
        out[ok] = strength * vals
    out = np.where(np.isnan(out), np.inf, out)
    return out if out.ndim else float(out)


class CustomDensity(LevyMeasure):
    """Arbitrary density ``func(z)`` on ``0 < |z| <= support_radius``.

    ``symmetric=False`` skips the evenness check and integrates the two
    half-lines separately.
    """

    kind = "custom"

    def __init__(self, func: Callable, support_radius: float, *, symmetric: bool = True,
                 breakpoints: tuple[float, ...] = (), check_symmetry: bool = True):
        if not support_radius > 0:
            raise MeasureInvalidError("support_radius must be positive")
        self.func = func
        self.support_radius = float(support_radius)
        self.symmetric = symmetric
        self._bp = tuple(breakpoints)
        if symmetric and check_symmetry:
            r = np.linspace(0, self.support_radius, 257)[1:]
            pos = np.array([func(v) for v in r], float)
            neg = np.array([func(-v) for v in r], float)
            if np.any(pos < 0) or np.any(neg < 0):
                raise MeasureInvalidError("density must be nonnegative")
            if not np.allclose(pos, neg, rtol=1e-12, atol=0):
                raise MeasureInvalidError("density is not even; pass symmetric=False")

    def density(self, z):
        z = np.asarray(z, float)
        if z.ndim == 0:
            zf = float(z)
            return float(self.func(zf)) if 0 < abs(zf) <= self.support_radius else 0.0
        return np.array([self.density(v) for v in z])

    def _breakpoints(self):
        return self._bp

    def __repr__(self):
        return f"CustomDensity(support_radius={self.support_radius}, symmetric={self.symmetric})"


class TabulatedDensity(CustomDensity):
    """Density sampled on z > 0 (columns ``z,m``) and mirrored to z < 0."""

    kind = "custom"

    def __init__(self, z, m, source: str | None = None):
        z = np.asarray(z, float)
        m = np.asarray(m, float)
        order = np.argsort(z)
        z, m = z[order], m[order]
        if len(z) < 2 or z[0] <= 0:
            raise MeasureInvalidError("table needs >= 2 rows with z > 0")
        if np.any(m < 0):
            raise MeasureInvalidError("table density must be nonnegative")
        self.z_table, self.m_table, self.source = z, m, source
        super().__init__(
            lambda v: float(np.interp(abs(v), z, m, left=0.0, right=0.0)),
            float(z[-1]), breakpoints=tuple(z[1:-1]) if len(z) < 64 else (),
            check_symmetry=False,
        )

    @classmethod
    def from_csv(cls, path) -> "TabulatedDensity":
        path = Path(path)
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or set(rows[0]) != {"z", "m"}:
            raise ValueError(f"{path}: expected columns z,m")
        return cls([float(r["z"]) for r in rows], [float(r["m"]) for r in rows], str(path))


@dataclass(frozen=True)
class ZeroMeasure(LevyMeasure):
    kind = "none"
    support_radius = 0.0

    def density(self, z):
        out = np.zeros_like(np.asarray(z, float))
        return out if out.ndim else 0.0

    def half_moment(self, power, lo, hi, side=1):
        out = np.zeros(np.broadcast(np.asarray(lo), np.asarray(hi)).shape)
        return out if out.ndim else 0.0

    def half_symbol(self, omega, lo, hi, side=1):
        return 0.0

    def symbol_pieces(self):
        return ()


@dataclass(frozen=True)
class CombinedMeasure(LevyMeasure):
    """Weighted sum of measures, each restricted to ``r_lo <= |z| < r_hi``."""

    pieces: tuple

    kind = "combined"

    def __post_init__(self):
        for weight, *_ in self.pieces:
            if weight < 0:
                raise MeasureInvalidError("combined measure weights must be nonnegative")

    @property
    def symmetric(self):
        return all(m.symmetric for _, m, _, _ in self.pieces)

    @property
    def support_radius(self):
        radii = [min(m.support_radius, hi) for _, m, lo, hi in self.pieces]
        return max(radii, default=0.0)

    def density(self, z):
        z = np.asarray(z, float)
        out = np.zeros(z.shape)
        for w, m, lo, hi in self.pieces:
            r = np.abs(z)
            out = out + np.where((r >= lo) & (r < hi), w * np.asarray(m.density(z)), 0.0)
        return out if out.ndim else float(out)

    def _breakpoints(self):
        bps = set()
        for _, m, lo, hi in self.pieces:
            bps.update(m._breakpoints())
            bps.update(v for v in (lo, hi) if 0 < v < math.inf)
        return tuple(sorted(bps))

    def half_moment(self, power, lo, hi, side=1):
        lo_a, hi_a = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
        out = np.zeros(lo_a.shape)
        for w, m, r_lo, r_hi in self.pieces:
            if w == 0:
                continue
            a = np.maximum(lo_a, r_lo)
            b = np.minimum(hi_a, r_hi)
            ok = b > a
            if np.any(ok):
                vals = np.zeros(lo_a.shape)
                vals[ok] = m.half_moment(power, a[ok], b[ok], side)
                out = out + w * vals
        return out if out.ndim else float(out)

    def half_symbol(self, omega, lo, hi, side=1):
        total = 0.0
        for w, m, r_lo, r_hi in self.pieces:
            a, b = max(lo, r_lo), min(hi, r_hi)
            if b > a and w != 0:
                total += w * m.half_symbol(omega, a, b, side)
        return total

    def symbol_pieces(self):
        return self.pieces


# ---------------------------------------------------------------------------
# moment functionals

@dataclass(frozen=True)
class MomentReport:
    second_moment_inner: float
    first_moment_outer: float


def _both_sides(measure: LevyMeasure, power, lo, hi) -> float:
    return float(sum(np.sum(measure.half_moment(power, lo, hi, s)) for s in _SIDES))


def check_integrability(measure: LevyMeasure) -> MomentReport:
    """Values of int_{|z|<1} z^2 pi(dz) and int_{|z|>=1} |z| pi(dz)."""
    try:
        inner = _both_sides(measure, 2.0, 0.0, 1.0)
        outer = _both_sides(measure, 1.0, 1.0, math.inf)
    except QuadratureError as exc:
        raise MeasureInvalidError(f"integrability check failed: {exc}") from exc
    for name, val in (("second_moment_inner", inner), ("first_moment_outer", outer)):
        if not np.isfinite(val) or val > OVERFLOW_GUARD:
            raise MeasureInvalidError(f"{name} is infinite for {measure!r}")
    return MomentReport(inner, outer)


def small_jump_moment(measure: LevyMeasure, kappa: float) -> float:
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    return _both_sides(measure, 2.0, 0.0, kappa)


def drift_correction(measure: LevyMeasure, kappa: float) -> float:
    """Compensator int_{kappa<|z|<1} z pi(dz); zero for even densities."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if kappa >= 1.0:
        return 0.0
    if measure.symmetric:
        return 0.0
    pos = float(measure.half_moment(1.0, kappa, 1.0, 1))
    neg = float(measure.half_moment(1.0, kappa, 1.0, -1))
    return pos - neg


def total_first_moment(measure: LevyMeasure) -> float:
    try:
        return _both_sides(measure, 1.0, 0.0, math.inf)
    except QuadratureError:
        return math.inf


def total_second_moment(measure: LevyMeasure) -> float:
    try:
        return _both_sides(measure, 2.0, 0.0, math.inf)
    except QuadratureError:
        return math.inf


def levy_symbol(measure: LevyMeasure, omega: float) -> float:
    """psi(omega) = int (cos(omega z) - 1) pi(dz) <= 0."""
    omega = float(omega)
    if omega == 0.0:
        return 0.0
    return float(sum(measure.half_symbol(omega, 0.0, math.inf, s) for s in _SIDES))


# ---------------------------------------------------------------------------
# grid-aligned quadrature

@dataclass(frozen=True, eq=False)
class LevyQuadrature:
    """Discretization of pi on the nodes z_j = j * spacing, |z_j| > kappa.

    ``small_moment`` is the exact small-jump moment; ``surrogate_moment`` is
    the coefficient actually placed on the discrete Laplacian (see
    :func:`build_quadrature`).
    """

    node_offsets: np.ndarray
    weights: np.ndarray
    spacing: float
    split_radius: float
    small_moment: float
    surrogate_moment: float
    drift: float
    tail_cut: float
    tail_mass_dropped: float

    def __post_init__(self):
        for name in ("node_offsets", "weights"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def nodes(self) -> np.ndarray:
        return self.node_offsets * self.spacing

    @property
    def jump_rate(self) -> float:
        return float(np.sum(self.weights))

    @property
    def is_empty(self) -> bool:
        return len(self.node_offsets) == 0 and self.surrogate_moment == 0 and self.drift == 0

    @classmethod
    def empty(cls, spacing: float) -> "LevyQuadrature":
        return cls(np.zeros(0, int), np.zeros(0), spacing, spacing, 0.0, 0.0, 0.0, spacing, 0.0)

    @classmethod
    def from_nodes(cls, spacing, offsets, weights, *, small_moment=0.0, drift=0.0):
        """Hand-built quadrature (atomic measures, tests)."""
        offsets = np.asarray(offsets, int)
        order = np.argsort(offsets)
        return cls(offsets[order], np.asarray(weights, float)[order], spacing, spacing,
                   small_moment, small_moment, drift,
                   float(np.max(np.abs(offsets), initial=1)) * spacing, 0.0)


def build_quadrature(measure: LevyMeasure, spacing: float, kappa: float | None = None,
                     tail_cut: float | None = None, *, length: float | None = None,
                     moment_matching: bool = True) -> LevyQuadrature:
    """Grid-aligned discretization of ``measure``.

    The weight of node j is the measure of its cell ``[z_j - h/2, z_j + h/2]``
    clipped to ``(kappa, tail_cut]``.  Unless ``kappa`` is a half-integer
    multiple of ``h`` the band between ``kappa`` and the first cell carries
    no node.  With ``moment_matching`` the surrogate coefficient is raised or
    lowered (never below zero) so that surrogate + sum_j w_j z_j^2 reproduces
    the second moment on ``|z| <= tail_cut``, which hands that band's
    second moment to the surrogate.
    """
    h = float(spacing)
    if kappa is None:
        kappa = h
    if tail_cut is None:
        if math.isfinite(measure.support_radius):
            tail_cut = max(1.0, measure.support_radius)
        elif length is not None:
            tail_cut = max(1.0, 0.5 * length)
        else:
            raise ValueError("measure has unbounded support: pass tail_cut or length")
    if kappa < h * (1 - 1e-12):
        raise ValueError(f"kappa={kappa} < spacing={h}: small jumps must be sub-grid")
    if tail_cut < 1.0:
        raise ValueError("tail_cut must be >= 1")
    if not kappa < tail_cut:
        raise ValueError("kappa must be smaller than tail_cut")
    if length is not None and tail_cut > 0.5 * length * (1 + 1e-12) and measure.support_radius > 0.5 * length:
        warnings.warn(f"tail_cut={tail_cut} exceeds half the period {0.5 * length}; long jumps wrap",
                      SelfInteractionWarning, stacklevel=2)

    j_min = int(math.floor(kappa / h + 1e-9)) + 1
    j_max = int(math.floor(tail_cut / h + 1e-9))
    small = small_jump_moment(measure, kappa)
    drift = drift_correction(measure, kappa)
    tail = _both_sides(measure, 1.0, tail_cut, math.inf)

    if j_max >= j_min and measure.support_radius > kappa:
        j = np.arange(j_min, j_max + 1)
        lo = np.maximum((j - 0.5) * h, kappa)
        hi = np.minimum((j + 0.5) * h, tail_cut)
        hi[-1] = tail_cut
        w_pos = np.asarray(measure.half_moment(0.0, lo, hi, 1), float)
        w_neg = w_pos if measure.symmetric else np.asarray(measure.half_moment(0.0, lo, hi, -1), float)
        keep_p, keep_n = w_pos > 0, w_neg > 0
        offsets = np.concatenate([-j[keep_n][::-1], j[keep_p]])
        weights = np.concatenate([w_neg[keep_n][::-1], w_pos[keep_p]])
    else:
        offsets, weights = np.zeros(0, int), np.zeros(0)

    surrogate = small
    if moment_matching:
        target = small + _both_sides(measure, 2.0, kappa, tail_cut)
        discrete = float(np.sum(weights * (offsets * h) ** 2))
        surrogate = max(0.0, target - discrete)

    if len(offsets) == 0 and small == 0.0:
        warnings.warn("quadrature has no nodes and zero small-jump moment", DegenerateMeasureWarning,
                      stacklevel=2)
    return LevyQuadrature(offsets, weights, h, float(kappa), small, surrogate, drift,
                          float(tail_cut), tail)
