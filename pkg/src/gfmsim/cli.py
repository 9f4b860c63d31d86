"""Command-line front end: ``gfmsim run`` and ``gfmsim sweep``.

Exit codes: 0 success, 2 config error (nothing written), 3 diverged,
4 sync failed. A sweep that completes exits 0; failed cells are listed in
its summary and report.
"""

import argparse
import os
import sys

from gfmsim import config as cf
from gfmsim.harness import sweep as sw
from gfmsim.harness.engine import run
from gfmsim.harness.presets import PRESETS, build_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_SYNC_FAILED = 4


def _parser():
    ap = argparse.ArgumentParser(prog="gfmsim", description="Parallel grid-forming inverter simulator.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name in ("run", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("source", help=f"preset ({', '.join(PRESETS)}) or path to a .toml config")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. qshare.k_iQ=0.003 (repeatable)")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--out", default=None, help="output directory (default: out/<name>)")
        p.add_argument("--decimation", type=int, default=None, help="store every k-th control step")
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
            p.add_argument("--axis", dest="axes", action="append", default=[], metavar="KEY=V1,V2,...",
                           help="replace the sweep axes (repeatable, first axis is the row axis)")
    return ap


def _parse_axes(specs):
    axes = {}
    for item in specs:
        key, sep, raw = item.partition("=")
        if not sep:
            raise cf.ConfigError(f"{item}: axis must look like section.key=v1,v2,...")
        values = [cf.parse_value(v.strip()) for v in raw.split(",") if v.strip()]
        if not values:
            raise cf.ConfigError(f"{key}: sweep axis must be a non-empty list")
        axes[key.strip()] = values
    return axes


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def cmd_run(args):
    cfg = cf.resolve(args.source, args.overrides, args.seed, args.decimation)
    out = args.out or os.path.join("out", cfg["name"])
    rec = run(build_scenario(cfg))
    os.makedirs(out, exist_ok=True)
    rec.write_csv(os.path.join(out, "run.csv"))
    cf.dump(cfg, os.path.join(out, "resolved.toml"))
    _write(os.path.join(out, "report.md"), sw.run_report_markdown(cfg, rec))
    status = rec.diagnostics["status"]
    print(f"{cfg['name']}: {status}, stability={rec.metrics['stability']}, dt_r={rec.metrics['dt_r']} -> {out}")
    return {"ok": EXIT_OK, "diverged": EXIT_DIVERGED, "sync-failed": EXIT_SYNC_FAILED}[status]


def cmd_sweep(args):
    cfg = cf.resolve(args.source, args.overrides, args.seed, args.decimation)
    if args.axes:
        cfg = cf.merge(cfg, {"sweep": {"axes": _parse_axes(args.axes)}})
    if not cfg["sweep"]["axes"]:
        raise cf.ConfigError("sweep.axes: at least one axis is required")
    if args.jobs < 1:
        raise cf.ConfigError("--jobs must be >= 1")
    for cell in sw.expand(cfg):
        cf.check(cell.config)
    out = args.out or os.path.join("out", f"{cfg['name']}-sweep")
    cells = sw.sweep(cfg, jobs=args.jobs)
    os.makedirs(os.path.join(out, "runs"), exist_ok=True)
    cf.dump(cfg, os.path.join(out, "resolved.toml"))
    for cell in cells:
        stem = os.path.join(out, "runs", f"cell{cell.index:03d}_r{cell.replicate}")
        cf.dump(cell.config, stem + ".toml")
        if cell.record is not None:
            cell.record.write_csv(stem + ".csv")
    _write(os.path.join(out, "summary.csv"), sw.summary_csv(cfg, cells))
    _write(os.path.join(out, "report.md"), sw.report_markdown(cfg, cells))
    print(f"{cfg['name']}: {len(cells)} runs -> {out}")
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return (cmd_run if args.cmd == "run" else cmd_sweep)(args)
    except cf.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
