"""``sbs`` command line: run, sweep, render.

Exit codes: 0 when every check passes, 2 when some check fails, 3 when a
pipeline stage raises (the message names the stage).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone

from .pipeline import PipelineError, RunConfig, render_to, run, versions, write_json, write_run
from .sweep import FAMILIES, parse_range, sweep

EXIT_OK, EXIT_CHECKS, EXIT_ERROR = 0, 2, 3


def _scale(text: str) -> tuple:
    try:
        re_, im = (float(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("scale must be RE,IM") from exc
    return (re_, im)


def _numeric_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("numerics")
    g.add_argument("--h", type=float, help="target mesh size (default: 0.025 x diameter)")
    g.add_argument("--beta", type=float, help="grading exponent near cone points")
    g.add_argument("--h-min", type=float, dest="h_min", help="smallest element size (default h/50)")
    g.add_argument("--tol", type=float, help="Newton residual tolerance")
    g.add_argument("--max-newton", type=int, dest="max_newton")
    g.add_argument("--seed-density", type=float, dest="seed_density")
    g.add_argument("--eps-deg", type=float, dest="eps_deg", help="Hessian degeneracy threshold")
    g.add_argument("--flow-rtol", type=float, dest="flow_rtol", help="relative tracing tolerance")
    g.add_argument("--flow-max-steps", type=int, dest="flow_max_steps")
    g.add_argument("--flow-max-length", type=float, dest="flow_max_length", help="in diameters")
    g.add_argument("--orientation", choices=("inc", "dec"), help="segment orientation convention")
    g.add_argument("--config", help="JSON file with RunConfig fields; flags override it")


def _config(args, **extra) -> RunConfig:
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    keys = (
        "h", "beta", "h_min", "tol", "max_newton", "seed_density", "eps_deg",
        "flow_rtol", "flow_max_steps", "flow_max_length", "orientation",
    )
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            base[k] = v
    base.update({k: v for k, v in extra.items() if v is not None})
    return RunConfig.from_dict(base)


def _writable(path: str) -> None:
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path!r} is not writable")


def cmd_run(args) -> int:
    try:
        config = _config(args, surface=args.surface, refine=args.refine, out=args.out,
                         scale=args.scale)
        _writable(args.out)
    except (ValueError, OSError) as exc:
        print(f"sbs run: [config] {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        outcome = run(config)
    except PipelineError as exc:
        print(f"sbs run: {exc}", file=sys.stderr)
        write_json(os.path.join(args.out, "error.json"), {"stage": exc.stage, "message": str(exc)})
        return EXIT_ERROR
    paths = write_run(args.out, outcome, svg=not args.no_plot)
    res = outcome.results
    for name, c in sorted(res["checks"].items()):
        state = {True: "pass", False: "FAIL", None: "skip"}[c["passed"]]
        print(f"{state:4s}  {name}")
    a = res["a_sbs"]
    print(f"A_SBS = {a[0]:+.6e} {a[1]:+.6e}i   -> {paths['results']}")
    return EXIT_OK if outcome.passed else EXIT_CHECKS


def cmd_sweep(args) -> int:
    try:
        s_values = parse_range(args.s)
        t_values = parse_range(args.t)
        config = _config(args)
        _writable(args.out)
    except (ValueError, OSError) as exc:
        print(f"sbs sweep: [config] {exc}", file=sys.stderr)
        return EXIT_ERROR
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    table = sweep(args.family, s_values, t_values, config, args.out, args.workers)
    write_json(os.path.join(args.out, "sweep.json"), table)
    write_json(
        os.path.join(args.out, "manifest.json"),
        {
            "format": "sbsgraph-manifest/1",
            "started": started.isoformat(),
            "finished": datetime.now(timezone.utc).isoformat(),
            "wall_time": time.perf_counter() - t0,
            "config_hash": replace(config, surface=f"family:{args.family}").digest(),
            "versions": versions(),
            "argv": list(sys.argv),
        },
    )
    for r in table["rows"]:
        if r["status"] == "ok":
            print(
                f"s={r['s']:.4f} t={r['t']:.4f}  min={r['minima']} saddle={r['saddles']} "
                f"chi={r['euler']} A={r['a_sbs'][0]:+.3e}{r['a_sbs'][1]:+.3e}i "
                f"{'pass' if r['passed'] else 'FAIL'}  {r['wall_time']:.1f}s"
            )
        else:
            print(f"s={r['s']:.4f} t={r['t']:.4f}  ERROR {r['error']['message']}")
    summ = table["summary"]
    print(f"{summ['passed']}/{summ['samples']} samples pass; max |dA| = {table['continuity']['max_difference']}")
    return EXIT_OK if table["passed"] else EXIT_CHECKS


def cmd_render(args) -> int:
    try:
        with open(args.inp, encoding="utf-8") as fh:
            results = json.load(fh)
        render_to(results, args.out)
    except (OSError, ValueError, KeyError) as exc:
        print(f"sbs render: [render] {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbs", description="Gradient-flow graphs of the hyperbolic potential on translation surfaces.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the pipeline on one surface")
    p.add_argument("--surface", required=True, help="builtin:NAME, builtin:NAME(k=v,...) or a surface file")
    p.add_argument("--refine", type=int, default=0, help="extra refinement levels for convergence orders")
    p.add_argument("--scale", type=_scale, help="multiply the differential by RE+i*IM")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-plot", action="store_true", help="skip plot.svg")
    _numeric_options(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep a family of surfaces")
    p.add_argument("--family", required=True, choices=FAMILIES)
    p.add_argument("--s", required=True, help="A:B:N or a single value")
    p.add_argument("--t", required=True, help="C:D:M or a single value")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None, help="parallel samples (default: CPU count)")
    _numeric_options(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("render", help="draw a results document as SVG")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
