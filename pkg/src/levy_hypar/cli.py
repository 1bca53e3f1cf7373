"""``levy-hypar <subcommand> --config FILE [--out DIR] [--seed N]``.

Exit status: 0 when every check passes, 1 on any failure, 2 when the only
non-passing checks are inconclusive.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, bundled_config, load_config
from .experiments import ExperimentConfig, run_audit, run_experiment, write_rows
from .grid import read_trajectory

log = logging.getLogger("levy_hypar")

SUBCOMMANDS = {
    "solve": "solve",
    "contract": "contraction",
    "compare": "comparison",
    "contdep": "contdep",
    "regularity": "regularity",
    "opcheck": "opcheck",
    "audit": "audit",
}


def _load(spec: str) -> RunConfig:
    path = Path(spec)
    if path.exists():
        return load_config(path)
    if spec.startswith("builtin:"):
        return bundled_config(spec.split(":", 1)[1])
    raise ConfigError(f"config file not found: {spec} (bundled configs: builtin:<name>)")


def _retarget(run: RunConfig, kind: str) -> RunConfig:
    """Run a config written for a sibling experiment (e.g. contraction file for compare)."""
    if run.kind == kind:
        return run
    from .config import EXPERIMENT_KEYS
    raw = dict(run.raw)
    raw["experiment"] = {k: v for k, v in run.experiment.items() if k in EXPERIMENT_KEYS[kind]}
    raw["experiment"]["kind"] = kind
    return RunConfig(raw, run.source, run.base_dir)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="levy-hypar", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True,
                       help="TOML file, or builtin:<name> for a bundled config")
        s.add_argument("--out", type=Path, default=None,
                       help="output directory (audit also accepts a .csv file for the rows)")
        s.add_argument("--seed", type=int, default=None, help="override the experiment seed")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "audit":
            s.add_argument("--traj", type=Path, default=None,
                           help="audit a trajectory directory written by 'solve'")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        run = _retarget(_load(args.config), SUBCOMMANDS[args.command])
        out = args.out or Path(f"levy-hypar-{args.command}")
        cfg = ExperimentConfig.from_run(run, args.seed, out)
        if args.command == "audit" and args.traj is not None:
            report = run_audit(cfg, read_trajectory(args.traj, run.grid()))
        else:
            report = run_experiment(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"levy-hypar: error: {exc}", file=sys.stderr)
        return 1
    if args.command == "audit" and out.suffix == ".csv":
        # ``--out audit.csv``: rows to that file, everything else beside it
        out.parent.mkdir(parents=True, exist_ok=True)
        write_rows(out, report.tables.pop("audit", []))
        report.write(out.with_suffix(""))
    else:
        report.write(out)
    for line in report.lines:
        print(line)
    for c in report.checks:
        print(f"{c.status.upper():12s} {c.name}")
    print(f"status={report.status} out={out}")
    return report.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
