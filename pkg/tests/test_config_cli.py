"""TOML configuration and the command-line entry point."""

import csv
import json

import numpy as np
import pytest

from levy_hypar.cli import main
from levy_hypar.config import ConfigError, RunConfig, bundled_config, bundled_names, load_config
from levy_hypar.grid import read_trajectory
from levy_hypar.levy import FractionalFull, FractionalTruncated

SMALL = """
[grid]
n_cells = 32
length = 2.0

[flux]
kind = "burgers"

[diffusion]
kind = "power"
exponent = 2
scale = 0.1

[levy]
kind = "fractional_truncated"
alpha = 0.5
strength = 0.5

[solver]
t_end = 0.02
{solver_extra}

[experiment]
kind = "{kind}"
seed = 3
{extra}
"""


def write_cfg(tmp_path, kind, extra="", solver_extra="", name="run.toml"):
    p = tmp_path / name
    p.write_text(SMALL.format(kind=kind, extra=extra, solver_extra=solver_extra))
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- config -----------------------------------------------------------------------

def test_bundled_configs_load():
    names = bundled_names()
    assert {"opcheck", "contract_burgers", "contract_degenerate", "contract_fractal",
            "contract_mixed", "regularity_shock", "regularity_smooth"} <= set(names)
    for n in names:
        bundled_config(n)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        RunConfig({"grid": {"n_cells": 32, "cells": 3}})
    with pytest.raises(ConfigError, match="unknown section"):
        RunConfig({"mesh": {}})
    with pytest.raises(ConfigError, match="unknown key"):
        RunConfig({"experiment": {"kind": "solve", "deltas": [0.1]}})
    with pytest.raises(ConfigError, match="unknown experiment"):
        RunConfig({"experiment": {"kind": "plot"}})
    with pytest.raises(ConfigError, match="unknown key"):
        RunConfig({"experiment": {"kind": "solve", "initial": {"kind": "sine", "phase": 1}}})


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        RunConfig({"flux": {"kind": "cubic"}})
    with pytest.raises(ConfigError):
        RunConfig({"levy": {"kind": "fractional_truncated", "strength": "unit"}})
    with pytest.raises(ConfigError):
        RunConfig({"levy": {"kind": "custom"}})


def test_shorthands_and_measures(tmp_path):
    run = RunConfig({"flux": "burgers", "diffusion": "none"})
    assert run.flux().name == "burgers" and run.diffusion().degenerate_everywhere
    full = RunConfig({"levy": {"kind": "fractional_full", "alpha": 1.5, "strength": "unit"}}).measure()
    assert isinstance(full, FractionalFull)
    assert full.strength == pytest.approx(FractionalFull.unit_symbol_strength(1.5))
    (tmp_path / "m.csv").write_text("z,m\n0.1,1.0\n0.5,2.0\n1.0,0.5\n")
    (tmp_path / "c.toml").write_text('[levy]\nkind = "custom"\ntable = "m.csv"\n')
    m = load_config(tmp_path / "c.toml").measure()
    assert m.density(0.5) == pytest.approx(2.0)


def test_load_reports_syntax_errors(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[grid\n")
    with pytest.raises(ConfigError, match="bad.toml"):
        load_config(p)


def test_solver_config_from_toml(tmp_path):
    run = load_config(write_cfg(tmp_path, "solve", solver_extra="snapshot_times = [0.01]"))
    cfg = run.solver_config()
    assert cfg.grid.n_cells == 32 and cfg.t_end == 0.02 and cfg.snapshot_times == (0.01,)
    assert cfg.quad.spacing == cfg.grid.spacing
    assert isinstance(run.measure(), FractionalTruncated)
    assert run.solver_config(64).grid.n_cells == 64


# -- CLI ----------------------------------------------------------------------------

def test_cli_solve_writes_trajectory(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "solve", 'initial = { kind = "sine", amplitude = 0.5 }',
                    "snapshot_times = [0.01]")
    out = tmp_path / "traj"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    meta = read_csv(out / "meta.csv")
    assert list(meta[0]) == ["time", "mass", "min", "max", "bv", "dt_used"]
    assert [float(r["time"]) for r in meta] == [0.0, 0.01, 0.02]
    traj = read_trajectory(out)
    assert len(traj) == 3 and traj.grid.n_cells == 32
    assert json.loads((out / "summary.json").read_text())["status"] == "pass"
    assert "PASS" in capsys.readouterr().out


def test_cli_contract_and_compare(tmp_path):
    extra = 'n_pairs = 3\ninitial = { kind = "random", modes = 4, amplitude = 0.5 }'
    cfg = write_cfg(tmp_path, "contraction", extra)
    assert main(["contract", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 0
    # a contraction config is accepted by the compare subcommand
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 0
    s = json.loads((tmp_path / "p" / "summary.json").read_text())
    assert s["kind"] == "comparison" and s["status"] == "pass"


def test_cli_is_deterministic(tmp_path):
    extra = 'n_pairs = 2\ninitial = { kind = "random", modes = 4, amplitude = 0.5 }'
    cfg = write_cfg(tmp_path, "contraction", extra)
    for d in ("a", "b"):
        main(["contract", "--config", str(cfg), "--out", str(tmp_path / d), "--seed", "11"])
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    main(["contract", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "12"])
    assert (tmp_path / "a" / "contraction.csv").read_bytes() != (tmp_path / "c" / "contraction.csv").read_bytes()


def test_cli_config_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid]\nn_cells = 32\nwhatever = 1\n")
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "unknown key" in capsys.readouterr().err
    assert main(["solve", "--config", str(tmp_path / "missing.toml")]) == 1
    with pytest.raises(SystemExit):
        main(["frobnicate", "--config", str(bad)])


def test_cli_opcheck_outputs(tmp_path):
    cfg = tmp_path / "op.toml"
    cfg.write_text("""
[grid]
n_cells = 64
length = 2.0
[levy]
kind = "fractional_truncated"
alpha = 0.5
strength = 1.0
[experiment]
kind = "opcheck"
n_pairs = 5
pair_cells = 32
modes = 4
resolutions = [64, 128]
""")
    out = tmp_path / "op"
    assert main(["opcheck", "--config", str(cfg), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["checks"]) == {"adjoint", "constant_kernel", "mass", "dissipative",
                                      "offdiag_nonnegative", "symbol_refinement", "kappa_sweep"}
    assert list(read_csv(out / "opcheck_n64.csv")[0]) == ["mode", "psi_exact", "psi_discrete", "residual"]
    assert len(read_csv(out / "opcheck_n128.csv")) == 4
    sweep = read_csv(out / "kappa_sweep.csv")
    assert [int(r["kappa_cells"]) for r in sweep] == [1, 2, 4, 8]


def test_cli_audit_single_trajectory(tmp_path):
    solve_cfg = write_cfg(tmp_path, "solve", 'initial = { kind = "sine", amplitude = 0.5 }',
                          "record_all_steps = true")
    traj = tmp_path / "traj"
    assert main(["solve", "--config", str(solve_cfg), "--out", str(traj)]) == 0
    audit_cfg = write_cfg(tmp_path, "audit", "n_thresholds = 3\nepsilons = [0.1]", name="audit.toml")
    out = tmp_path / "audit.csv"
    code = main(["audit", "--traj", str(traj), "--config", str(audit_cfg), "--out", str(out)])
    assert code == 2  # one level cannot estimate tol_audit
    rows = read_csv(out)
    assert list(rows[0])[:8] == ["entropy", "c", "phi_id", "mode", "n_u", "m_u", "lhs", "residual"]
    assert len(rows) == (2 + 2 * 3) * 3
    assert all(float(r["n_u"]) >= 0 and float(r["m_u"]) >= 0 for r in rows)
    assert (tmp_path / "audit" / "summary.json").exists()


def test_cli_audit_two_levels(tmp_path):
    cfg = write_cfg(tmp_path, "audit",
                    'resolutions = [32, 64]\nn_thresholds = 3\nepsilons = [0.1]\n'
                    'initial = { kind = "sine", amplitude = 0.5 }')
    out = tmp_path / "a"
    code = main(["audit", "--config", str(cfg), "--out", str(out)])
    s = json.loads((out / "summary.json").read_text())
    assert code == 0, s
    rows = read_csv(out / "audit.csv")
    assert all(float(r["residual"]) >= -float(r["tol_audit"]) for r in rows)
    assert np.isfinite([float(r["tol_audit"]) for r in rows]).all()
