"""Command-line surface: model loading, forcing/parallel/extension commands,
property checks and the golden suite.

Exit codes: 0 the computation ran, 1 the verdict was negative and --assert was
given, 2 any error. Reports are JSON with sorted keys; the verdict fields are
byte-reproducible for a fixed seed and policy (timings live alongside, not
inside them).
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import __version__
from .bundle import BaseBox, pullback_bundle, pullback_section
from .forcing import force, spatial_extension
from .logic import collect_free_identifiers, parse_formula
from .modelfile import Model, load_model
from .parallel import (build_path_family, extension_to_csv, extension_to_svg,
                       horizontal_extension, parallel_forced, vertical_extension)
from .pools import run_pullback_pool, run_stability_pool
from .suite import format_suite_table, run_suite


def _add_policy_flags(p: argparse.ArgumentParser):
    p.add_argument("--eps0", type=float, default=0.5, help="largest candidate radius")
    p.add_argument("--eps-halvings", type=int, default=8, dest="eps_halvings",
                   help="number of radius halvings")
    p.add_argument("--samples", type=int, default=64, help="samples per annulus")
    p.add_argument("--depth", type=int, default=3, help="neighborhood recursion budget")
    p.add_argument("--step", type=float, default=1e-3, help="RK4 step size")
    p.add_argument("--grid", type=float, default=0.01, help="extension grid spacing")
    p.add_argument("--paths", type=int, default=16, help="random cubic paths in a family")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--exists-neighborhood", action="store_true",
                   dest="exists_neighborhood",
                   help="give the existential clause a neighborhood too")
    p.add_argument("--assert", action="store_true", dest="assert_verdict",
                   help="exit 1 when the verdict is negative")
    p.add_argument("--report", type=str, default=None, help="write a JSON report here")


def _policy(model: Model | None, args) -> "NeighborhoodPolicy":
    from .forcing import NeighborhoodPolicy

    fields = dict(eps0=args.eps0, halvings=args.eps_halvings, samples=args.samples,
                  depth=args.depth, seed=args.seed, step=args.step, grid=args.grid,
                  exists_neighborhood=args.exists_neighborhood)
    if model is not None:
        return model.policy(**fields)
    return NeighborhoodPolicy(**fields)


def _parse_point(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",") if v.strip() != ""])


def _parse_tuple(text: str) -> np.ndarray:
    groups = [g for g in text.split(";") if g.strip() != ""]
    return np.array([_parse_point(g) for g in groups])


def _parse_window(text: str) -> BaseBox:
    lows, highs = [], []
    for chunk in text.split(","):
        lo, hi = chunk.split("..", 1)
        lows.append(float(lo))
        highs.append(float(hi))
    return BaseBox(tuple(lows), tuple(highs))


def _resolve_formula(model: Model, source: str, sections_flag: str | None,
                     tuple_args: int | None):
    """Bind the formula's free identifiers: named model sections bind by name,
    x1..xr bind positionally (to --section entries or measurement slots)."""
    sig = model.bundle.signature
    free = collect_free_identifiers(source, sig)
    phi = parse_formula(source, sig, free)
    named = []
    for ident in free:
        if ident in model.sections:
            named.append(model.sections[ident])
        elif ident.startswith("x") and ident[1:].isdigit():
            named.append(None)  # positional slot
        else:
            raise SystemExit(f"error: formula argument '{ident}' is neither a "
                             f"model section nor a positional x-variable")
    positional = []
    if sections_flag:
        positional = [model.sections[name.strip()] for name in sections_flag.split(",")]
    it = iter(positional)
    resolved = []
    for s in named:
        if s is not None:
            resolved.append(s)
        else:
            nxt = next(it, None)
            if nxt is None and tuple_args is None:
                raise SystemExit("error: not enough --section entries for the formula")
            resolved.append(nxt)
    return phi, resolved, free


def _emit_report(args, payload: dict):
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")


def _report_skeleton(args, verdicts: dict, started: float) -> dict:
    return {
        "command": " ".join(sys.argv[1:]),
        "engine_version": __version__,
        "seed": args.seed,
        "policy": {
            "eps0": args.eps0, "halvings": args.eps_halvings, "samples": args.samples,
            "depth": args.depth, "step": args.step, "grid": args.grid,
            "exists_neighborhood": args.exists_neighborhood,
        },
        "verdicts": verdicts,
        "timings": {"wall_seconds": round(time.perf_counter() - started, 3)},
    }


def _cmd_force(args) -> int:
    started = time.perf_counter()
    model = load_model(args.model)
    pol = _policy(model, args)
    bundle = model.bundle
    at = _parse_point(args.at)
    phi, sections, free = _resolve_formula(model, args.formula, args.section, None)
    if any(s is None for s in sections):
        raise SystemExit("error: every formula argument needs a section here")
    if args.pullback:
        h = model.maps[args.pullback]
        box = model.map_boxes[args.pullback]
        sections = [pullback_section(s, h, box) for s in sections]
        bundle = pullback_bundle(bundle, h, box)
    verdict = force(bundle, at, phi, sections, pol)
    print(f"{verdict.decision}"
          + (f" (witness eps = {verdict.witness_eps:g})" if verdict.forced else ""))
    payload = _report_skeleton(args, {
        "decision": verdict.decision, "witness_eps": verdict.witness_eps,
        "samples": verdict.samples, "depth": verdict.depth,
        "formula": args.formula, "at": at.tolist(),
        "pullback": args.pullback,
    }, started)
    _emit_report(args, payload)
    return 0 if (verdict.forced or not args.assert_verdict) else 1


def _cmd_parallel(args) -> int:
    started = time.perf_counter()
    model = load_model(args.model)
    pol = _policy(model, args)
    at = _parse_point(args.at)
    e_tuple = _parse_tuple(args.fiber)
    phi, _, free = _resolve_formula(model, args.formula, None, tuple_args=len(e_tuple))
    conn = model.connections[args.conn]
    fam = build_path_family(at, model.bundle.base, args.seed, cubics=args.paths)
    verdict = parallel_forced(model.bundle, conn, at, e_tuple, phi, fam, pol)
    line = verdict.decision
    if not verdict.forced and verdict.counterexample:
        line += f" (counterexample path: {verdict.counterexample['label']})"
    print(line)
    payload = _report_skeleton(args, {
        "decision": verdict.decision,
        "counterexample": verdict.counterexample,
        "paths_checked": verdict.paths_checked,
        "formula": args.formula, "at": at.tolist(), "fiber": e_tuple.tolist(),
        "connection": args.conn,
    }, started)
    _emit_report(args, payload)
    return 0 if (verdict.forced or not args.assert_verdict) else 1


def _cmd_extension(args) -> int:
    started = time.perf_counter()
    model = load_model(args.model)
    pol = _policy(model, args)
    at = _parse_point(args.at)
    e_tuple = _parse_tuple(args.fiber)
    phi, _, free = _resolve_formula(model, args.formula, None, tuple_args=len(e_tuple))
    conn = model.connections[args.conn]
    if args.direction == "horizontal":
        window = _parse_window(args.window) if args.window else model.bundle.base
        ext = horizontal_extension(model.bundle, conn, at, e_tuple, phi, window,
                                   args.grid, pol)
    else:
        window = _parse_window(args.window) if args.window else model.fiber_box
        ext = vertical_extension(model.bundle, conn, at, e_tuple, phi, window,
                                 args.grid, pol)
    members = ext.members()
    print(f"{int(np.count_nonzero(ext.member))} of {len(ext.points)} grid points")
    if len(members) and ext.points.shape[1] == 1:
        print(f"interval: [{float(np.min(members)):.6g}, {float(np.max(members)):.6g}]")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(extension_to_csv(ext))
    if args.svg:
        with open(args.svg, "w") as fh:
            fh.write(extension_to_svg(ext))
    payload = _report_skeleton(args, {
        "kind": ext.kind, "member_count": int(np.count_nonzero(ext.member)),
        "grid_points": len(ext.points),
        "members": [pt.tolist() for pt in members],
        "formula": args.formula, "at": at.tolist(), "connection": args.conn,
        "spacing": args.grid,
    }, started)
    _emit_report(args, payload)
    return 0 if (len(members) > 0 or not args.assert_verdict) else 1


def _cmd_spatial(args) -> int:
    started = time.perf_counter()
    model = load_model(args.model)
    pol = _policy(model, args)
    phi, sections, _ = _resolve_formula(model, args.formula, args.section, None)
    if any(s is None for s in sections):
        raise SystemExit("error: every formula argument needs a section here")
    window = _parse_window(args.window) if args.window else model.bundle.base
    sel = spatial_extension(model.bundle, phi, sections, window, args.grid, pol)
    print(f"{int(np.count_nonzero(sel.member))} of {len(sel.points)} grid points")
    payload = _report_skeleton(args, {
        "member_count": int(np.count_nonzero(sel.member)),
        "grid_points": len(sel.points),
        "members": [pt.tolist() for pt in sel.members()],
        "formula": args.formula, "spacing": args.grid,
    }, started)
    _emit_report(args, payload)
    return 0 if (np.any(sel.member) or not args.assert_verdict) else 1


def _cmd_check(args) -> int:
    started = time.perf_counter()
    if args.what == "pullback-theorem":
        report = run_pullback_pool(args.trials, args.seed)
    else:
        report = run_stability_pool(args.trials, args.seed)
    print(f"{report.passed}/{report.trials} pass")
    payload = _report_skeleton(args, {
        "check": args.what, "trials": report.trials, "passed": report.passed,
        "failures": report.failures,
    }, started)
    _emit_report(args, payload)
    return 0 if (report.ok or not args.assert_verdict) else 1


def _cmd_suite(args) -> int:
    started = time.perf_counter()
    report = run_suite(only=args.only, seed=args.seed, trials=args.trials)
    print(format_suite_table(report))
    payload = _report_skeleton(args, report, started)
    _emit_report(args, payload)
    return 0 if (report["all_ok"] or not args.assert_verdict) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fiberforce",
        description="Forcing and parallel semantics over bundles of first-order structures")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("force", help="pointwise forcing at a base point")
    p.add_argument("model")
    p.add_argument("--at", required=True, help="base point, comma-separated")
    p.add_argument("--formula", required=True)
    p.add_argument("--section", default=None,
                   help="comma-separated section names for positional x-variables")
    p.add_argument("--pullback", default=None,
                   help="pull the bundle and sections back along this named map first")
    _add_policy_flags(p)
    p.set_defaults(fn=_cmd_force)

    p = sub.add_parser("parallel", help="parallel forcing of a measurement tuple")
    p.add_argument("model")
    p.add_argument("--at", required=True)
    p.add_argument("--fiber", required=True,
                   help="measurement tuple; components comma-, arguments semicolon-separated")
    p.add_argument("--formula", required=True)
    p.add_argument("--conn", required=True)
    _add_policy_flags(p)
    p.set_defaults(fn=_cmd_parallel)

    p = sub.add_parser("extension", help="horizontal or vertical extension set")
    p.add_argument("direction", choices=("horizontal", "vertical"))
    p.add_argument("model")
    p.add_argument("--at", required=True)
    p.add_argument("--fiber", required=True)
    p.add_argument("--formula", required=True)
    p.add_argument("--conn", required=True)
    p.add_argument("--window", default=None, help="sub-window lo..hi[,lo..hi]")
    p.add_argument("--csv", default=None)
    p.add_argument("--svg", default=None)
    _add_policy_flags(p)
    p.set_defaults(fn=_cmd_extension)

    p = sub.add_parser("spatial", help="spatial extension over a window grid")
    p.add_argument("model")
    p.add_argument("--formula", required=True)
    p.add_argument("--section", default=None)
    p.add_argument("--window", default=None)
    _add_policy_flags(p)
    p.set_defaults(fn=_cmd_spatial)

    p = sub.add_parser("check", help="run a theorem property pool")
    p.add_argument("what", choices=("pullback-theorem", "stability"))
    p.add_argument("--trials", type=int, default=200)
    _add_policy_flags(p)
    p.set_defaults(fn=_cmd_check)

    p = sub.add_parser("suite", help="run the golden-scenario table")
    p.add_argument("--only", default=None, help="filter rows by key substring")
    p.add_argument("--trials", type=int, default=200)
    _add_policy_flags(p)
    p.set_defaults(fn=_cmd_suite)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit:
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
