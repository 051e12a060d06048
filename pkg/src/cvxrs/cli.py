"""Command line interface: ``cvxrs {solve,margin,sample-region}``.

Problems come from a JSON problem file or the built-in catalog
(``catalog:name[:params]``).  Every failure exits nonzero after printing a
JSON error object to stdout.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import catalog
from .catalog import Problem
from .errors import CvxrsError, ParseError
from .problemfile import parse_problem
from .restriction import AdditiveNormBall, NoUncertainty, build_nominal, build_robust_additive, build_robust_parametric
from .restriction import IntervalParametric
from .scrs import ScrsOptions, newton_true_set, optimality_gap_bound, robustness_margin, run_scrs, sample_region


def fmt(v) -> str:
    """Full-precision text for CSV cells."""
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    return format(float(v), ".17g")


def load_problem(ref: str) -> Problem:
    if ref.startswith("catalog:"):
        try:
            return catalog.get(ref[len("catalog:"):])
        except (KeyError, ValueError) as exc:
            raise ParseError(str(exc).strip("'\""), field="problem") from None
    path = Path(ref)
    if not path.exists():
        raise ParseError(f"no such problem file: {ref}", field="problem")
    return parse_problem(path.read_text())


def _norm_model(norm: str, radius: float | None) -> AdditiveNormBall:
    if norm == "two":
        return AdditiveNormBall("two", radius)
    if norm == "inf":
        return AdditiveNormBall("inf", radius, "table")
    return AdditiveNormBall("inf", radius, "exact")


def _uncertainty(p: Problem, args):
    if args.gamma is not None:
        if p.sys.r == 0:
            raise ParseError("--gamma given but the problem has no uncertain variables", field="gamma")
        return _norm_model(args.norm, args.gamma)
    if isinstance(p.uncertainty, AdditiveNormBall) and p.uncertainty.radius is not None:
        return p.uncertainty
    if isinstance(p.uncertainty, IntervalParametric):
        return p.uncertainty
    return NoUncertainty()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _opts(args) -> ScrsOptions:
    return ScrsOptions(eps1=args.eps1, eps2=args.eps2, eps3=args.eps3, max_outer=args.max_outer)


def cmd_solve(args) -> int:
    p = load_problem(args.problem)
    unc = _uncertainty(p, args)
    opts = _opts(args)
    rep = run_scrs(p.sys, p.pt, unc, p.objective, opts, p.u_bounds)
    if isinstance(unc, AdditiveNormBall) and rep.anchor is not None:
        rep.margin = robustness_margin(p.sys, rep.anchor, unc.norm, unc.support, u=rep.u)
    if not isinstance(unc, NoUncertainty):
        nominal = run_scrs(p.sys, p.pt, None, p.objective, opts, p.u_bounds)
        rep.gap_bound = optimality_gap_bound(rep, nominal)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = rep.to_dict()
    doc["problem"] = p.name
    _write_json(out / "report.json", doc)
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "f0", "step", "kkt"])
        for k, it in enumerate(rep.iterates):
            w.writerow([k, fmt(it.objective), fmt(it.step), fmt(it.kkt)])
    print(json.dumps({"termination": rep.termination.value, "objective": rep.objective,
                      "iterations": len(rep.iterates) - 1, "kkt_residual": rep.kkt_residual}))
    return 0


def cmd_margin(args) -> int:
    p = load_problem(args.problem)
    pt, u = p.pt, None
    if args.at_optimum:
        rep = run_scrs(p.sys, p.pt, None, p.objective, _opts(args), p.u_bounds)
        pt, u = rep.anchor, rep.u
    unc = _norm_model(args.norm, None)
    gamma = robustness_margin(p.sys, pt, unc.norm, unc.support, u=u)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    u_used = pt.u0 if u is None else u
    _write_json(out / "margin.json", {"problem": p.name, "norm": args.norm, "gamma": gamma,
                                      "u": np.asarray(u_used).tolist()})
    print(fmt(gamma))
    return 0


def cmd_sample_region(args) -> int:
    p = load_problem(args.problem)
    unc = _uncertainty(p, args)
    if isinstance(unc, AdditiveNormBall):
        prog = build_robust_additive(p.sys, p.pt, unc, p.objective, p.u_bounds)
    elif isinstance(unc, IntervalParametric):
        prog = build_robust_parametric(p.sys, p.pt, unc, p.objective, p.u_bounds)
    else:
        prog = build_nominal(p.sys, p.pt, p.objective, p.u_bounds)
    try:
        i, j = (int(a) - 1 for a in args.axes.split(","))
    except ValueError:
        raise ParseError(f"--axes expects two 1-based indices like 1,2, got {args.axes!r}", field="axes") from None
    if not (0 <= i < p.sys.m and 0 <= j < p.sys.m) or i == j:
        raise ParseError(f"--axes must name two distinct explicit variables in 1..{p.sys.m}", field="axes")
    window = [float(v) for v in args.window.split(",")]
    if len(window) != 4 or window[0] >= window[1] or window[2] >= window[3]:
        raise ParseError("--window expects lo_i,hi_i,lo_j,hi_j with lo < hi", field="window")
    truth = p.true_set
    if truth is None and isinstance(unc, NoUncertainty):
        truth = newton_true_set(p.sys, p.pt, seed=args.seed)
    region = sample_region(prog, (i, j), window, args.grid, truth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "region.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"u{i + 1}", f"u{j + 1}", "in_restriction", "in_true_set"])
        for a, vi in enumerate(region.grid_i):
            for b, vj in enumerate(region.grid_j):
                t = region.in_true_set[a, b]
                w.writerow([fmt(vi), fmt(vj), int(region.in_restriction[a, b]), "NA" if math.isnan(t) else int(t)])
    print(json.dumps({"points": int(args.grid) ** 2, "in_restriction": int(region.in_restriction.sum())}))
    return 0


def _common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--problem", required=True, help="problem file or catalog:name[:params]")
    sp.add_argument("--out", default=".", help="output directory")
    sp.add_argument("--norm", choices=("two", "inf", "exact"), default="two",
                    help="uncertainty ball: two-norm, inf-norm with tabulated margins, or inf-norm with exact support")
    sp.add_argument("--gamma", type=float, default=None, help="uncertainty radius")
    sp.add_argument("--eps1", type=float, default=1e-6)
    sp.add_argument("--eps2", type=float, default=1e-8)
    sp.add_argument("--eps3", type=float, default=1e-9)
    sp.add_argument("--max-outer", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cvxrs", description="Convex restriction and sequential convex restriction.")
    sub = ap.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("solve", help="run sequential convex restriction; writes report.json and trace.csv")
    _common(sp)
    sp.set_defaults(func=cmd_solve)
    sp = sub.add_parser("margin", help="largest certified uncertainty radius; writes margin.json")
    _common(sp)
    sp.add_argument("--gamma-free", action="store_true", help="treat the radius as the decision variable (default)")
    sp.add_argument("--at-optimum", action="store_true", help="evaluate at the nominal optimum found by solve")
    sp.set_defaults(func=cmd_margin)
    sp = sub.add_parser("sample-region", help="classify a grid of explicit variables; writes region.csv")
    _common(sp)
    sp.add_argument("--grid", type=int, default=50)
    sp.add_argument("--axes", default="1,2", help="two 1-based explicit-variable indices")
    sp.add_argument("--window", default="-8,8,-8,8", help="lo_i,hi_i,lo_j,hi_j")
    sp.set_defaults(func=cmd_sample_region)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        for name in ("eps1", "eps2", "eps3"):
            if not getattr(args, name) > 0:
                raise ParseError(f"--{name} must be positive", field=name)
        if args.gamma is not None and args.gamma < 0:
            raise ParseError("--gamma must be nonnegative", field="gamma")
        if getattr(args, "grid", 1) < 1:
            raise ParseError("--grid must be at least 1", field="grid")
        return args.func(args)
    except (CvxrsError, ValueError, RuntimeError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        for key in ("line", "field"):
            if getattr(exc, key, None) is not None:
                err[key] = getattr(exc, key)
        print(json.dumps(err))
        return 1


if __name__ == "__main__":
    sys.exit(main())
