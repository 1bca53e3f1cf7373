"""TOML run configuration.

Sections ``[grid] [flux] [diffusion] [levy] [solver] [experiment]``; every
key is checked against the schema below and unknown keys are rejected::

    [grid]       n_cells = 256, length = 2.0
    [flux]       kind = "burgers" | "linear" (speed) | "quadratic" (a2, a1) | "zero"
    [diffusion]  kind = "none" | "constant" (value) | "power" (exponent, scale)
                 | "threshold" (threshold, scale)
    [levy]       kind = "none" | "fractional_truncated" | "fractional_full" | "custom"
                 alpha, strength (number or "unit"), table (custom CSV z,m),
                 kappa_cells (split radius in cells, default 1), tail_cut,
                 moment_matching (default true)
    [solver]     rho, t_end, cfl_safety, snapshot_times, max_steps, record_all_steps
    [experiment] kind plus kind-specific keys (see ``EXPERIMENT_KEYS``)

``flux = "burgers"`` and ``diffusion = { kind = "none" }`` at top level are
accepted as shorthands for the corresponding sections.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .grid import Grid1D
from .levy import (FractionalFull, FractionalTruncated, LevyMeasure, LevyQuadrature,
                   TabulatedDensity, ZeroMeasure, build_quadrature)
from .models import DiffusionModel, FluxModel
from .solver import SolverConfig


class ConfigError(ValueError):
    pass


SECTION_KEYS = {
    "grid": {"n_cells", "length"},
    "flux": {"kind", "speed", "a2", "a1"},
    "diffusion": {"kind", "value", "exponent", "scale", "threshold"},
    "levy": {"kind", "alpha", "strength", "table", "kappa_cells", "tail_cut", "moment_matching"},
    "solver": {"rho", "t_end", "cfl_safety", "snapshot_times", "max_steps", "record_all_steps"},
    "experiment": None,  # depends on kind
}

_COMMON = {"kind", "seed", "initial", "workers"}
EXPERIMENT_KEYS = {
    "solve": _COMMON,
    "contraction": _COMMON | {"n_pairs", "tolerance"},
    "comparison": _COMMON | {"n_pairs", "tolerance"},
    "contdep": _COMMON | {"ingredients", "deltas", "times", "perturbation", "combined",
                          "r2_min", "rate_tolerance"},
    "regularity": _COMMON | {"resolutions", "times", "transient", "expect"},
    "opcheck": _COMMON | {"n_pairs", "pair_cells", "modes", "resolutions", "kappa_factors",
                          "symbol_factor", "smooth_modes"},
    "audit": _COMMON | {"n_pairs", "resolutions", "phis", "n_thresholds", "epsilons", "mode", "psi"},
}

INITIAL_KEYS = {
    "sine": {"kind", "amplitude", "offset", "mode"},
    "square": {"kind", "low", "high", "start", "stop"},
    "random": {"kind", "modes", "amplitude", "offset", "clip"},
    "csv": {"kind", "path"},
}

PERTURBATION_KEYS = {"kind", "alpha", "strength", "r_lo", "r_hi"}
PHI_KEYS = {"name", "center", "width", "ramp_start", "ramp_end"}


def _check_keys(where: str, table: dict, allowed) -> None:
    extra = set(table) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(extra))}")


@dataclass
class RunConfig:
    """Validated configuration; ``raw`` keeps the parsed TOML tables."""

    raw: dict
    source: str = "<dict>"
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        raw = copy.deepcopy(self.raw)
        for short in ("flux", "diffusion", "levy"):
            if isinstance(raw.get(short), str):
                raw[short] = {"kind": raw[short]}
        unknown = set(raw) - set(SECTION_KEYS)
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
        for name, allowed in SECTION_KEYS.items():
            table = raw.setdefault(name, {})
            if not isinstance(table, dict):
                raise ConfigError(f"[{name}] must be a table")
            if allowed is not None:
                _check_keys(name, table, allowed)
        exp = raw["experiment"]
        kind = exp.setdefault("kind", "solve")
        if kind not in EXPERIMENT_KEYS:
            raise ConfigError(f"unknown experiment kind {kind!r}")
        _check_keys("experiment", exp, EXPERIMENT_KEYS[kind])
        init = exp.get("initial")
        if init is not None:
            ik = init.get("kind")
            if ik not in INITIAL_KEYS:
                raise ConfigError(f"unknown initial kind {ik!r}")
            _check_keys("experiment.initial", init, INITIAL_KEYS[ik])
        if "perturbation" in exp:
            _check_keys("experiment.perturbation", exp["perturbation"], PERTURBATION_KEYS)
        for phi in exp.get("phis", []):
            _check_keys("experiment.phis", phi, PHI_KEYS)
        self.raw = raw
        # build once so errors surface at load time
        self.grid()
        self.flux()
        self.diffusion()
        self.measure()

    # -- sections ---------------------------------------------------------
    @property
    def experiment(self) -> dict:
        return self.raw["experiment"]

    @property
    def kind(self) -> str:
        return self.experiment["kind"]

    def grid(self, n_cells: int | None = None) -> Grid1D:
        g = self.raw["grid"]
        return Grid1D(int(n_cells or g.get("n_cells", 256)), float(g.get("length", 2.0)))

    def flux(self) -> FluxModel:
        f = self.raw["flux"]
        kind = f.get("kind", "burgers")
        if kind == "burgers":
            return FluxModel.burgers()
        if kind == "linear":
            return FluxModel.linear(float(f.get("speed", 1.0)))
        if kind == "quadratic":
            return FluxModel.quadratic_flux(float(f.get("a2", 1.0)), float(f.get("a1", 0.0)))
        if kind == "zero":
            return FluxModel.zero()
        raise ConfigError(f"unknown flux kind {kind!r}")

    def diffusion(self) -> DiffusionModel:
        d = self.raw["diffusion"]
        kind = d.get("kind", "none")
        if kind == "none":
            return DiffusionModel.none()
        if kind == "constant":
            return DiffusionModel.constant(float(d.get("value", 1.0)))
        if kind == "power":
            return DiffusionModel.power(float(d.get("exponent", 2.0)), float(d.get("scale", 1.0)))
        if kind == "threshold":
            return DiffusionModel.threshold(float(d.get("threshold", 0.5)), float(d.get("scale", 1.0)))
        raise ConfigError(f"unknown diffusion kind {kind!r}")

    def measure(self) -> LevyMeasure:
        lv = self.raw["levy"]
        kind = lv.get("kind", "none")
        if kind == "none":
            return ZeroMeasure()
        alpha = float(lv.get("alpha", 0.5))
        strength = lv.get("strength", 1.0)
        if kind == "fractional_truncated":
            if strength == "unit":
                raise ConfigError('strength = "unit" is only defined for fractional_full')
            return FractionalTruncated(alpha, float(strength))
        if kind == "fractional_full":
            if strength == "unit":
                strength = FractionalFull.unit_symbol_strength(alpha)
            return FractionalFull(alpha, float(strength))
        if kind == "custom":
            if "table" not in lv:
                raise ConfigError("custom measure needs table = 'path.csv'")
            path = Path(lv["table"])
            return TabulatedDensity.from_csv(path if path.is_absolute() else self.base_dir / path)
        raise ConfigError(f"unknown levy kind {kind!r}")

    def quadrature(self, grid: Grid1D, measure: LevyMeasure | None = None) -> LevyQuadrature:
        measure = self.measure() if measure is None else measure
        if isinstance(measure, ZeroMeasure):
            return LevyQuadrature.empty(grid.spacing)
        lv = self.raw["levy"]
        return build_quadrature(measure, grid.spacing, float(lv.get("kappa_cells", 1)) * grid.spacing,
                                lv.get("tail_cut"), length=grid.length,
                                moment_matching=bool(lv.get("moment_matching", True)))

    def solver_config(self, n_cells: int | None = None, **overrides) -> SolverConfig:
        grid = self.grid(n_cells)
        s = self.raw["solver"]
        t_end = float(s.get("t_end", 0.1))
        kw = dict(
            grid=grid, flux=self.flux(), diffusion=self.diffusion(), quad=self.quadrature(grid),
            rho=float(s.get("rho", 0.0)), t_end=t_end, cfl_safety=float(s.get("cfl_safety", 0.9)),
            snapshot_times=tuple(float(t) for t in s.get("snapshot_times", ())),
            record_all_steps=bool(s.get("record_all_steps", False)),
            max_steps=int(s.get("max_steps", 100_000)),
        )
        kw.update(overrides)
        return SolverConfig(**kw)


def load_config(path) -> RunConfig:
    path = Path(path)
    with path.open("rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig(raw, str(path), path.parent)


def bundled_config(name: str) -> RunConfig:
    """One of the experiment configs shipped in ``levy_hypar/configs``."""
    ref = resources.files("levy_hypar") / "configs" / f"{name}.toml"
    with ref.open("rb") as fh:
        raw = tomllib.load(fh)
    return RunConfig(raw, f"configs/{name}.toml")


def bundled_names() -> list[str]:
    ref = resources.files("levy_hypar") / "configs"
    return sorted(p.name[:-5] for p in ref.iterdir() if p.name.endswith(".toml"))
