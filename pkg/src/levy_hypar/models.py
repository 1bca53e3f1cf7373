"""Local nonlinearities: convective flux, diffusion, entropies.

Scalar operations (``zeta``, ``A_primitive``, ``entropy_fluxes``,
``eta_bar_double_prime``) use adaptive quadrature.  The solver and the
audit work on whole arrays and go through closed forms when a model has
them, otherwise through :class:`PrimitiveTable` lookups.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

QUAD_TOL = 1e-12
TABLE_POINTS = 4096
_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


def _quad(func, a, b, points=()) -> float:
    if a == b:
        return 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    pts = sorted(p for p in points if a < p < b)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(func, a, b, epsabs=QUAD_TOL, epsrel=1e-13, limit=200,
                                points=pts or None)
    return sign * val


def _one(_):
    return 1.0


class PrimitiveTable:
    """Tabulated ``x -> integral_anchor^x g`` on ``[lo, hi]`` with linear
    interpolation.  Pieces between breakpoints use 10-point Gauss-Legendre,
    exact to rounding for the piecewise smooth integrands used here."""

    def __init__(self, g: Callable, lo: float, hi: float, *, anchor: float = 0.0,
                 breakpoints: Sequence[float] = (), n_points: int = TABLE_POINTS):
        if not hi > lo:
            raise ValueError("table interval must have positive length")
        self.lo, self.hi = float(lo), float(hi)
        # anchor and breakpoints are nodes: exact zero at the anchor, kinks resolved
        bps = np.array([b for b in (*breakpoints, anchor) if lo < b < hi], float)
        pts = np.unique(np.concatenate([np.linspace(lo, hi, n_points), bps]))
        self.x = pts
        a, b = pts[:-1], pts[1:]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        nodes = mid[:, None] + half[:, None] * _GL_X[None, :]
        piece = half * (np.asarray(g(nodes), float).reshape(nodes.shape) @ _GL_W)
        cum = np.concatenate([[0.0], np.cumsum(piece)])
        base = _quad(lambda s: float(g(np.array(s))), anchor, lo, breakpoints)
        self.values = base + cum

    def __call__(self, u):
        u = np.asarray(u, float)
        if u.size and (u.min() < self.lo - 1e-9 or u.max() > self.hi + 1e-9):
            raise ValueError(f"state {u.min()}..{u.max()} left table range [{self.lo}, {self.hi}]")
        return np.interp(u, self.x, self.values)


# ---------------------------------------------------------------------------
# flux

@dataclass(frozen=True, eq=False)
class FluxModel:
    """Flux f with derivative f'.  ``quadratic`` = (a2, a1) for
    f(u) = a2 u^2 / 2 + a1 u, which admits a closed-form Engquist-Osher flux."""

    f: Callable
    f_prime: Callable
    name: str = "custom"
    quadratic: tuple[float, float] | None = None
    lipschitz_bound: float | None = None

    @classmethod
    def quadratic_flux(cls, a2: float, a1: float, name: str | None = None) -> "FluxModel":
        return cls(lambda u: 0.5 * a2 * np.square(u) + a1 * np.asarray(u),
                   lambda u: a2 * np.asarray(u) + a1,
                   name or f"quadratic({a2},{a1})", (float(a2), float(a1)))

    @classmethod
    def burgers(cls):
        return cls.quadratic_flux(1.0, 0.0, "burgers")

    @classmethod
    def linear(cls, speed: float):
        return cls.quadratic_flux(0.0, speed, f"linear({speed})")

    @classmethod
    def zero(cls):
        return cls.quadratic_flux(0.0, 0.0, "zero")

    def plus_linear(self, delta: float) -> "FluxModel":
        """f + delta * u."""
        if self.quadratic is not None:
            a2, a1 = self.quadratic
            return FluxModel.quadratic_flux(a2, a1 + delta, f"{self.name}+{delta}u")
        f, fp = self.f, self.f_prime
        return FluxModel(lambda u: f(u) + delta * np.asarray(u), lambda u: fp(u) + delta,
                         f"{self.name}+{delta}u")

    def lipschitz(self, interval: tuple[float, float]) -> float:
        if self.lipschitz_bound is not None:
            return self.lipschitz_bound
        lo, hi = interval
        if self.quadratic is not None:
            a2, a1 = self.quadratic
            return float(max(abs(a2 * lo + a1), abs(a2 * hi + a1)))
        s = np.linspace(lo, hi, 4097)
        return float(np.max(np.abs(self.f_prime(s))))

    def is_zero(self) -> bool:
        return self.quadratic == (0.0, 0.0)


def _eo_quadratic(a2, a1, a, b):
    f = lambda u: 0.5 * a2 * u * u + a1 * u
    if a2 == 0.0:
        return a1 * a if a1 >= 0 else a1 * b
    s = -a1 / a2
    fs = f(s)
    if a2 > 0:
        return f(np.maximum(a, s)) + f(np.minimum(b, s)) - fs
    return f(np.minimum(a, s)) + f(np.maximum(b, s)) - fs


class EngquistOsher:
    """Two-point monotone flux F(a, b) = f(0) + int_0^a f'^+ + int_0^b f'^-."""

    def __init__(self, flux: FluxModel, interval: tuple[float, float] | None = None):
        self.flux = flux
        self._tables = None
        if flux.quadratic is None:
            if interval is None:
                raise ValueError("generic flux needs a state interval for its tables")
            lo, hi = interval
            fp = flux.f_prime
            self._f0 = float(flux.f(0.0))
            self._tables = (
                PrimitiveTable(lambda s: np.maximum(fp(s), 0.0), lo, hi),
                PrimitiveTable(lambda s: np.minimum(fp(s), 0.0), lo, hi),
            )

    def __call__(self, a, b):
        if self._tables is None:
            a2, a1 = self.flux.quadratic
            return _eo_quadratic(a2, a1, np.asarray(a, float), np.asarray(b, float))
        pos, neg = self._tables
        return self._f0 + pos(a) + neg(b)


# ---------------------------------------------------------------------------
# diffusion

@dataclass(frozen=True, eq=False)
class DiffusionModel:
    """sigma = (sigma_1, ..., sigma_K), a(u) = sum_k sigma_k(u)^2.

    ``zeta_closed`` / ``A_closed`` are optional closed-form primitives; ``kinks``
    lists states where sigma is not smooth (used as quadrature breakpoints).
    """

    sigma: tuple[Callable, ...]
    sigma_lipschitz: float
    name: str = "custom"
    zeta_closed: tuple[Callable, ...] | None = None
    A_closed: Callable | None = None
    kinks: tuple[float, ...] = ()
    degenerate_everywhere: bool = False

    @property
    def K(self) -> int:
        return len(self.sigma)

    def a(self, u):
        u = np.asarray(u, float)
        return sum(np.square(np.broadcast_to(s(u), u.shape)) for s in self.sigma)

    def max_a(self, interval) -> float:
        if self.degenerate_everywhere:
            return 0.0
        s = np.concatenate([np.linspace(*interval, 4097), list(interval)])
        return float(np.max(self.a(s)))

    def sigma_values(self, u) -> np.ndarray:
        """Array of shape (K, *u.shape)."""
        u = np.asarray(u, float)
        return np.stack([np.broadcast_to(s(u), u.shape) for s in self.sigma])

    def A_values(self, u, tables: dict | None = None):
        if self.degenerate_everywhere:
            return np.zeros_like(np.asarray(u, float))
        if self.A_closed is not None:
            return self.A_closed(np.asarray(u, float))
        return tables["A"](u)

    def zeta_values(self, u, tables: dict | None = None) -> np.ndarray:
        u = np.asarray(u, float)
        if self.degenerate_everywhere:
            return np.zeros((self.K, *u.shape))
        if self.zeta_closed is not None:
            return np.stack([np.broadcast_to(z(u), u.shape) for z in self.zeta_closed])
        return np.stack([t(u) for t in tables["zeta"]])

    def tables(self, interval) -> dict:
        lo, hi = interval
        return {
            "A": PrimitiveTable(self.a, lo, hi, breakpoints=self.kinks),
            "zeta": [PrimitiveTable(s, lo, hi, breakpoints=self.kinks) for s in self.sigma],
        }

    # -- registry -------------------------------------------------------
    @classmethod
    def none(cls):
        z = lambda u: np.zeros_like(np.asarray(u, float))
        return cls((z,), 0.0, "none", (z,), z, degenerate_everywhere=True)

    @classmethod
    def constant(cls, value: float):
        c = float(value)
        return cls((lambda u: np.full_like(np.asarray(u, float), c),), 0.0, f"constant({c})",
                   (lambda u: c * np.asarray(u, float),), lambda u: c * c * np.asarray(u, float))

    @classmethod
    def power(cls, exponent: float = 2.0, scale: float = 1.0):
        """a(u) = scale |u|^exponent, sigma = sqrt(scale) |u|^(exponent/2)."""
        p, s = float(exponent), float(scale)
        if p < 2:
            raise ValueError("power diffusion needs exponent >= 2 for a Lipschitz sigma")
        rs = math.sqrt(s)
        half = 0.5 * p
        return cls(
            (lambda u: rs * np.abs(u) ** half,),
            rs * half,  # on |u| <= 1
            f"power({p},{s})",
            (lambda u: rs * np.sign(u) * np.abs(u) ** (half + 1) / (half + 1),),
            lambda u: s * np.sign(u) * np.abs(u) ** (p + 1) / (p + 1),
            kinks=(0.0,),
        )

    @classmethod
    def threshold(cls, threshold: float = 0.5, scale: float = 1.0):
        """a(u) = scale * ((|u| - threshold)^+)^2: zero on a whole band."""
        th, s = float(threshold), float(scale)
        rs = math.sqrt(s)
        ramp = lambda u: np.maximum(np.abs(u) - th, 0.0)
        return cls(
            (lambda u: rs * ramp(u),),
            rs,
            f"threshold({th},{s})",
            (lambda u: rs * np.sign(u) * ramp(u) ** 2 / 2,),
            lambda u: s * np.sign(u) * ramp(u) ** 3 / 3,
            kinks=(-th, th),
        )

    def plus_constant(self, delta: float) -> "DiffusionModel":
        """sigma_k + delta for every k."""
        sig = tuple((lambda u, s=s: s(u) + delta) for s in self.sigma)
        zc = ac = None
        if self.zeta_closed is not None and self.A_closed is not None:
            zc = tuple((lambda u, z=z: z(u) + delta * np.asarray(u, float)) for z in self.zeta_closed)
            zeta_sum = lambda u: sum(z(u) for z in self.zeta_closed)
            A0, K = self.A_closed, self.K
            ac = lambda u: A0(u) + 2 * delta * zeta_sum(u) + K * delta**2 * np.asarray(u, float)
        return DiffusionModel(sig, self.sigma_lipschitz, f"{self.name}+{delta}", zc, ac,
                              self.kinks, degenerate_everywhere=False)


def zeta(model: DiffusionModel, z: float, psi: Callable | None = None) -> np.ndarray:
    """Components int_0^z psi(xi) sigma_k(xi) dxi."""
    psi = _one if psi is None else psi
    return np.array([
        _quad(lambda xi, s=s: psi(xi) * float(s(np.array(xi))), 0.0, z, model.kinks)
        for s in model.sigma
    ])


def A_primitive(model: DiffusionModel, z: float) -> float:
    return _quad(lambda xi: float(model.a(np.array(xi))), 0.0, z, model.kinks)


def eps_mismatch(diff_a: DiffusionModel, diff_b: DiffusionModel, xi: float) -> float:
    """sum_k (sigma^a_k - sigma^b_k)^2, the 1D form of the a-b mismatch."""
    if diff_a.K != diff_b.K:
        raise ValueError(f"K mismatch: {diff_a.K} vs {diff_b.K}")
    sa = diff_a.sigma_values(np.array(xi))
    sb = diff_b.sigma_values(np.array(xi))
    return float(np.sum((sa - sb) ** 2))


# ---------------------------------------------------------------------------
# Kruzkov regularizations

@dataclass(frozen=True)
class KruzkovRegularization:
    epsilon: float
    variant: str = "signed"  # plus | minus | signed

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.variant not in ("plus", "minus", "signed"):
            raise ValueError(f"unknown variant {self.variant!r}")

    def sgn(self, z):
        z = np.asarray(z, float)
        if self.variant == "plus":
            return _sgn_plus(z, self.epsilon)
        if self.variant == "minus":
            return -_sgn_plus(-z, self.epsilon)
        return _sgn_plus(z, self.epsilon) - _sgn_plus(-z, self.epsilon)

    def sgn_prime(self, z):
        z = np.asarray(z, float)
        if self.variant == "plus":
            return _dsgn_plus(z, self.epsilon)
        if self.variant == "minus":
            return _dsgn_plus(-z, self.epsilon)
        return _dsgn_plus(np.abs(z), self.epsilon)

    def eta(self, z):
        z = np.asarray(z, float)
        if self.variant == "plus":
            return _eta_plus(z, self.epsilon)
        if self.variant == "minus":
            return _eta_plus(-z, self.epsilon)
        return _eta_plus(z, self.epsilon) + _eta_plus(-z, self.epsilon)

    def kinks(self) -> tuple[float, ...]:
        e = self.epsilon
        return {"plus": (0.0, e), "minus": (-e, 0.0), "signed": (-e, e)}[self.variant]

    def limit_sgn(self, z):
        z = np.asarray(z, float)
        if self.variant == "plus":
            return (z > 0).astype(float)
        if self.variant == "minus":
            return -(z <= 0).astype(float)
        return np.sign(z)


def _sgn_plus(z, e):
    return np.where(z < 0, 0.0, np.where(z <= e, np.sin(0.5 * np.pi / e * z), 1.0))


def _dsgn_plus(z, e):
    return np.where((z >= 0) & (z <= e), 0.5 * np.pi / e * np.cos(0.5 * np.pi / e * z), 0.0)


def _eta_plus(z, e):
    band = (2 * e / np.pi) * (1.0 - np.cos(0.5 * np.pi / e * np.clip(z, 0.0, e)))
    return np.where(z <= 0, 0.0, np.where(z <= e, band, 2 * e / np.pi + z - e))


def kruzkov_sgn_eta(reg: KruzkovRegularization, z: float) -> tuple[float, float]:
    return float(reg.sgn(z)), float(reg.eta(z))


# ---------------------------------------------------------------------------
# entropies

@dataclass(frozen=True, eq=False)
class Entropy:
    """Convex C^2 entropy with vectorized derivatives."""

    eta: Callable
    d1: Callable
    d2: Callable
    name: str
    kinks: tuple[float, ...] = ()
    linear: bool = False
    threshold: float | None = None

    @classmethod
    def quadratic(cls):
        return cls(lambda u: 0.5 * np.square(u), lambda u: np.asarray(u, float),
                   lambda u: np.ones_like(np.asarray(u, float)), "quadratic")

    @classmethod
    def exponential(cls):
        return cls(np.exp, np.exp, np.exp, "exp")

    @classmethod
    def affine(cls, slope: float = 1.0, c: float = 0.0):
        return cls(lambda u: slope * (np.asarray(u, float) - c),
                   lambda u: np.full_like(np.asarray(u, float), slope),
                   lambda u: np.zeros_like(np.asarray(u, float)), f"affine({slope},{c})",
                   linear=True, threshold=c)

    @classmethod
    def kruzkov(cls, epsilon: float, variant: str, c: float):
        reg = KruzkovRegularization(epsilon, variant)
        return cls(lambda u: reg.eta(np.asarray(u) - c), lambda u: reg.sgn(np.asarray(u) - c),
                   lambda u: reg.sgn_prime(np.asarray(u) - c),
                   f"kruzkov_{variant}(eps={epsilon})", tuple(c + k for k in reg.kinks()),
                   threshold=c)


def eta_bar_double_prime(eta_spec: Entropy, u_here: float, u_there: float) -> float:
    """int_0^1 (1 - tau) eta''((1 - tau) a + tau b) dtau, by adaptive quadrature."""
    a, b = float(u_here), float(u_there)
    if a == b:
        return 0.5 * float(eta_spec.d2(np.array(a)))
    taus = [(k - a) / (b - a) for k in eta_spec.kinks]
    g = lambda t: (1.0 - t) * float(eta_spec.d2(np.array((1.0 - t) * a + t * b)))
    return _quad(g, 0.0, 1.0, [t for t in taus if 0 < t < 1])


def eta_bar_gauss(eta_spec: Entropy, a, b, order: int = 24) -> np.ndarray:
    """Vectorized Gauss-Legendre version of :func:`eta_bar_double_prime`."""
    x, w = np.polynomial.legendre.leggauss(order)
    tau = 0.5 * (x + 1.0)
    a = np.asarray(a, float)[..., None]
    b = np.asarray(b, float)[..., None]
    vals = (1.0 - tau) * eta_spec.d2((1.0 - tau) * a + tau * b)
    return 0.5 * vals @ w


def eta_bar_closed(eta_spec: Entropy, a, b) -> np.ndarray:
    """Remainder form (eta(b) - eta(a) - eta'(a)(b - a)) / (b - a)^2."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    d = b - a
    small = np.abs(d) < 1e-6 * (1.0 + np.abs(a))
    safe = np.where(small, 1.0, d)
    out = (eta_spec.eta(b) - eta_spec.eta(a) - eta_spec.d1(a) * d) / safe**2
    if np.any(small):
        out = np.where(small, eta_bar_gauss(eta_spec, a, b), out)
    return out


@dataclass(frozen=True, eq=False)
class EntropyTriple:
    """(eta, q, r) with q' = eta' f', r' = eta' a, anchored so q(c) = r(c) = 0."""

    entropy: Entropy
    q: Callable
    r: Callable
    anchor: float

    @property
    def eta(self):
        return self.entropy.eta

    @property
    def eta_prime(self):
        return self.entropy.d1

    @property
    def eta_double_prime(self):
        return self.entropy.d2


def build_triple(entropy: Entropy, flux: FluxModel, diff: DiffusionModel,
                 interval: tuple[float, float], anchor: float | None = None) -> EntropyTriple:
    """Tabulated fluxes q, r over ``interval``."""
    if anchor is None:
        anchor = entropy.threshold if entropy.threshold is not None else 0.0
    lo, hi = interval
    bps = tuple(entropy.kinks) + tuple(diff.kinks)
    q = PrimitiveTable(lambda s: entropy.d1(s) * flux.f_prime(s), lo, hi, anchor=anchor,
                       breakpoints=bps)
    if diff.degenerate_everywhere:
        r = lambda u: np.zeros_like(np.asarray(u, float))
    else:
        r = PrimitiveTable(lambda s: entropy.d1(s) * diff.a(s), lo, hi, anchor=anchor,
                           breakpoints=bps)
    return EntropyTriple(entropy, q, r, float(anchor))


def entropy_fluxes(triple_spec, flux: FluxModel, diff: DiffusionModel, z: float, c: float):
    """(q, r) at state z for threshold/anchor c.

    ``triple_spec`` is an :class:`Entropy` used as eta(. - c) when it is
    translation-free (quadratic, exp), a :class:`KruzkovRegularization`, or
    the string ``"kruzkov_plus"`` / ``"kruzkov_minus"`` / ``"kruzkov"`` for the
    eps -> 0 limits.
    """
    if isinstance(triple_spec, str):
        variant = {"kruzkov_plus": "plus", "kruzkov_minus": "minus", "kruzkov": "signed"}[triple_spec]
        s = float(KruzkovRegularization(1.0, variant).limit_sgn(z - c))
        fz, fc = float(flux.f(np.array(z))), float(flux.f(np.array(c)))
        return s * (fz - fc), s * (A_primitive(diff, z) - A_primitive(diff, c))
    if isinstance(triple_spec, KruzkovRegularization):
        d1 = lambda xi: float(triple_spec.sgn(xi - c))
        kinks = tuple(c + k for k in triple_spec.kinks())
    else:
        d1 = lambda xi: float(triple_spec.d1(np.array(xi - c)))
        kinks = tuple(c + k for k in triple_spec.kinks)
    kinks = kinks + tuple(diff.kinks)
    q = _quad(lambda xi: d1(xi) * float(flux.f_prime(np.array(xi))), c, z, kinks)
    r = _quad(lambda xi: d1(xi) * float(diff.a(np.array(xi))), c, z, kinks)
    return q, r
