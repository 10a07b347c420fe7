"""Command-line front end.

Subcommands:
    logconcave run   one batch run of the log-concave engine
    diffusion run    one batch run of the diffusion engine
    sweep            grid of runs -> CSV
    diagnose         run with truncation diagnostics enabled

Configs are JSON files mirroring ExperimentConfig (plus a "sweep"
section for the sweep subcommand); command-line flags override config
fields.  Exit code 0 only if every requested cell completed and all
validations passed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import (ConfigError, ExperimentConfig, SweepSpec,
                      run_experiment, run_sweep, write_sweep_csv)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ConfigError(["config file must hold a JSON object"])
    return data


def _apply_overrides(blob: dict, args: argparse.Namespace) -> dict:
    for name in ("seed", "batch", "jobs", "out", "cores", "drift_weight",
                 "accuracy", "delta", "d"):
        val = getattr(args, name, None)
        if val is not None:
            blob[name] = val
    return blob


def _build_experiment(blob: dict, mode: str,
                      diagnostics: bool = False) -> ExperimentConfig:
    blob = dict(blob)
    blob.pop("sweep", None)
    blob["mode"] = mode
    if diagnostics:
        blob["diagnostics"] = True
    try:
        cfg = ExperimentConfig(**blob)
    except TypeError as exc:
        raise ConfigError([str(exc)])
    errors = cfg.validate()
    if errors:
        raise ConfigError(errors)
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="report path (JSON; samples as .npy sidecar)")
    p.add_argument("--cores", type=int,
                   help="core budget for effective-round accounting")
    p.add_argument("--drift-weight", dest="drift_weight",
                   choices=("exact", "literal"))
    p.add_argument("--accuracy", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--d", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="picardwave",
        description="wavefront-parallel Picard sampling benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    for mode in ("logconcave", "diffusion"):
        p_mode = sub.add_parser(mode)
        mode_sub = p_mode.add_subparsers(dest="action", required=True)
        p_run = mode_sub.add_parser("run", help=f"run the {mode} engine")
        _add_common(p_run)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep -> CSV")
    _add_common(p_sweep)
    p_sweep.add_argument("--mode", choices=("logconcave", "diffusion"),
                         default=None)

    p_diag = sub.add_parser("diagnose",
                            help="run with truncation-error diagnostics")
    _add_common(p_diag)
    p_diag.add_argument("--mode", choices=("logconcave", "diffusion"),
                        default="logconcave")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        blob = _apply_overrides(_load_config(args.config), args)
        if args.command in ("logconcave", "diffusion"):
            cfg = _build_experiment(blob, args.command)
            if cfg.out is None:
                cfg.out = f"{cfg.mode}_report.json"
            report = run_experiment(cfg)
            print(f"report written to {cfg.out} "
                  f"(adaptive_rounds={report['adaptive_rounds']}, "
                  f"query_count={report['query_count']})")
            return 0
        if args.command == "diagnose":
            cfg = _build_experiment(blob, blob.get("mode", args.mode),
                                    diagnostics=True)
            if cfg.out is None:
                cfg.out = "diagnose_report.json"
            run_experiment(cfg)
            print(f"diagnostics written to {cfg.out}")
            return 0
        # sweep
        sweep_blob = blob.pop("sweep", None)
        if sweep_blob is None:
            raise ConfigError(["sweep: config must contain a 'sweep' object"])
        mode = blob.pop("mode", None) or args.mode
        if mode is None:
            raise ConfigError(["sweep: set mode in the config or via --mode"])
        out = blob.pop("out", None) or "sweep.csv"
        base = _build_experiment(dict(blob, out=None), mode)
        spec = SweepSpec(**sweep_blob)
        rows = run_sweep(spec, base)
        write_sweep_csv(rows, out)
        failures = [r for r in rows if r["error"]]
        print(f"{len(rows)} cells -> {out} ({len(failures)} failed)")
        return 1 if failures else 0
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 2
    except Exception as exc:   # noqa: BLE001 single CLI failure funnel
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
