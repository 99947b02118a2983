"""Command-line entry point.

Subcommands map one-to-one onto the experiments; every run writes a
``meta.json`` (config digest, seed, derived constants, build identifier) plus
CSV tables and SVG charts under ``<out>/<run id>/``.  Exit codes: 0 success,
2 configuration error, 3 numerical failure, 4 check failure in --check mode.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import apply_overrides, config_digest, load_config
from .errors import CheckFailure, ConfigError, NumericalError
from .experiments import (
    exp_adjoint,
    exp_galerkin_bridge,
    exp_meanfield_convergence,
    exp_stability,
    exp_weak_residual,
    run_fpe_experiment,
    run_particles_experiment,
    run_validation,
)
from .output import write_csv, write_line_chart, write_meta, write_frames, write_trajectory_csv

_EXPERIMENTS = {
    "convergence": exp_meanfield_convergence,
    "stability": exp_stability,
    "weak-residual": exp_weak_residual,
    "bridge": exp_galerkin_bridge,
    "adjoint": exp_adjoint,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kineticmf", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("particles", "fpe", "convergence", "stability", "weak-residual",
                 "bridge", "adjoint", "validate"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=str, default=None, help="TOML config file")
        sp.add_argument("--seed", type=int, default=None, help="master seed override")
        sp.add_argument("--out", type=str, default=None, help="output directory")
        sp.add_argument("--threads", type=int, default=None, help="worker count")
        sp.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (dotted path)",
        )
        sp.add_argument(
            "--check",
            action="store_true",
            help="exit 4 if any experiment check fails",
        )
    return p


def _resolve_config(args) -> dict:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, args.override)
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    if args.out is not None:
        cfg["out"] = args.out
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg["experiment"]["workers"] = int(args.threads)
    cfg["experiment"]["name"] = args.command
    return cfg


def _write_report(report, cfg, outdir: Path, extra_meta=None):
    outdir.mkdir(parents=True, exist_ok=True)
    meta = {
        "digest": config_digest(cfg),
        "seed": cfg["seed"],
        "build": f"kineticmf {__version__}",
        "experiment": report.name,
        "constants": report.constants,
        "checks": [
            {"name": c.name, "passed": c.passed, "detail": c.detail} for c in report.checks
        ],
        "config": cfg,
    }
    if extra_meta:
        meta.update(extra_meta)
    write_meta(outdir / "meta.json", meta)
    for fname, (header, rows) in report.tables.items():
        write_csv(outdir / fname, header, rows)
    for fname, spec in report.charts.items():
        write_line_chart(outdir / fname, **spec)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        run_id = config_digest(cfg)[:12]
        outdir = Path(cfg["out"]) / run_id
        if args.command == "particles":
            report, traj = run_particles_experiment(cfg)
            _write_report(report, cfg, outdir)
            m = cfg["galerkin"]["modes"]
            write_trajectory_csv(outdir / "trajectory.csv", run_id, traj, m)
            write_frames(outdir / "trajectory.kmf", traj, m)
        elif args.command == "fpe":
            report, result = run_fpe_experiment(cfg)
            _write_report(report, cfg, outdir)
            rows = []
            for t, rho in zip(result.times, result.densities):
                vals = rho.values
                for iu in range(vals.shape[0]):
                    for iv in range(vals.shape[1]):
                        rows.append([t, iu, iv, vals[iu, iv]])
            write_csv(outdir / "density.csv", ["t", "iu", "iv", "mass"], rows)
        elif args.command == "validate":
            report = run_validation(cfg)
            _write_report(report, cfg, outdir)
            for key, val in sorted(report.constants.items()):
                print(f"{key} = {val:.6g}")
        else:
            report = _EXPERIMENTS[args.command](cfg)
            _write_report(report, cfg, outdir)
        for c in report.checks:
            status = "pass" if c.passed else "FAIL"
            print(f"[{status}] {report.name}: {c.name}" + (f" ({c.detail})" if c.detail else ""))
        print(f"run {run_id} written to {outdir}")
        if args.check and not report.ok:
            raise CheckFailure(f"{report.name}: checks failed")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except CheckFailure as exc:
        print(f"check failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
