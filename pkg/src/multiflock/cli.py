"""Command line entry point: ``multiflock {run,validate,presets,report,sweep}``."""

from __future__ import annotations

import argparse
import json
import os
import sys

import yaml

from .errors import ConfigError
from .scenario import load_scenario, preset_library, report_run, run_scenario, sweep, with_overrides


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("MULTIFLOCK_THREADS", "1")))
    except ValueError:
        return 1


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("scenario", help="scenario file or preset name")
    p.add_argument("--out", help="output directory (default: the scenario's output.dir)")
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help="worker processes for sweeps (default: $MULTIFLOCK_THREADS or 1)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--dt", type=float, help="fixed step (switches to rk4_fixed)")
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--rtol", type=float)
    p.add_argument("--atol", type=float)


def _apply_flags(s, args):
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.dt is not None:
        over["integrator.dt"] = args.dt
        over["integrator.method"] = "rk4_fixed"
    if args.t_end is not None:
        over["integrator.t_end"] = args.t_end
    if args.rtol is not None:
        over["integrator.rtol"] = args.rtol
    if args.atol is not None:
        over["integrator.atol"] = args.atol
    return with_overrides(s, over) if over else s


def _parse_value(text: str):
    return yaml.safe_load(text)


def _parse_grid(items: list[str]) -> dict[str, list]:
    grid = {}
    for item in items:
        if "=" not in item:
            raise ConfigError([("--param", f"expected key=v1,v2,... got {item!r}")])
        k, vals = item.split("=", 1)
        grid[k.strip()] = [_parse_value(v) for v in vals.split(",")]
    return grid


def _print_problems(exc: ConfigError) -> None:
    for path, msg in exc.problems:
        print(f"{path or '<root>'}: {msg}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="multiflock", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    _common(sub.add_parser("run", help="run a scenario"))
    _common(sub.add_parser("validate", help="check a scenario file"))
    sub.add_parser("presets", help="list shipped presets")
    rp = sub.add_parser("report", help="re-derive diagnostics of a finished run")
    rp.add_argument("run_dir")
    sp = sub.add_parser("sweep", help="run a parameter grid")
    _common(sp)
    sp.add_argument("--param", action="append", default=[], metavar="KEY=V1,V2",
                    help="dotted config key and comma separated values; repeat for a product grid")
    args = ap.parse_args(argv)

    try:
        if args.cmd == "presets":
            for s in preset_library():
                print(f"{s.name:24s} {s.config['description']}")
            return 0
        if args.cmd == "report":
            print(json.dumps(report_run(args.run_dir), indent=2, default=str))
            return 0
        s = _apply_flags(load_scenario(args.scenario), args)
        if args.cmd == "validate":
            print(f"{s.name}: ok")
            return 0
        if args.cmd == "run":
            res = run_scenario(s, args.out)
            status = "ok" if res.status == 0 else f"failed ({res.manifest['error']['type']})"
            print(f"{s.name}: {status}; artifacts in {res.out_dir}")
            return res.status
        out = args.out or f"runs/{s.name}_sweep"
        results = sweep(s, _parse_grid(args.param), out, workers=args.threads)
        bad = sum(r["status"] != 0 for r in results)
        print(f"{len(results)} runs, {bad} failed; summary in {out}/sweep.json")
        return 1 if bad else 0
    except ConfigError as exc:
        _print_problems(exc)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
