"""Command line entry point: check | terminal | run | plot-data | compare."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .feasible import StagePlan, TerminalSetError, provenance, terminal_sets
from .geometry import GeometryError, HPolytope, Region, polygon_vertices, project
from .mpc import (ControllerError, MpcOptions, evaluate_run, run_algorithm1, run_algorithm2,
                  runlog_lines, summarize_runs, trajectory_csv)
from .scenario import Scenario, ScenarioError, load_scenario
from .stl import DecompositionError, bool_to_region, horizon

log = logging.getLogger("stlmpc")

EXIT_INVALID = 2
EXIT_TERMINAL = 3
EXIT_CONTROLLER = 4


# --- helpers ---------------------------------------------------------------------------

def _seeds(text, default):
    if text is None:
        return list(default)
    out = []
    for piece in text.split(","):
        piece = piece.strip()
        if "-" in piece:
            a, b = piece.split("-")
            out.extend(range(int(a), int(b) + 1))
        elif piece:
            out.append(int(piece))
    return out


def _load(args) -> Scenario:
    sc = load_scenario(args.scenario)
    if getattr(args, "l_mode", None):
        sc = sc.with_lipschitz_mode(args.l_mode)
    return sc


def _cegis_opts(sc, args):
    return sc.cegis_options(eps_rob=getattr(args, "eps_rob", None),
                            max_iter=getattr(args, "max_iter", None),
                            node_limit=getattr(args, "node_limit", None),
                            time_limit=getattr(args, "time_limit", None))


def _out_dir(sc, args):
    d = args.out or sc.outputs.get("dir", "out")
    os.makedirs(d, exist_ok=True)
    return d


def get_plan(sc: Scenario, cache_path=None, force=False):
    """StagePlan from the cache when its provenance matches, else computed.

    Returns (plan, cached)."""
    dec = sc.decomposition()
    prov = provenance(dec, sc.system)
    if cache_path and os.path.exists(cache_path) and not force:
        try:
            with open(cache_path, encoding="utf-8") as fh:
                plan = StagePlan.from_json(fh.read(), dec)
            if plan.provenance == json.loads(json.dumps(prov)):
                return plan, True
        except (ValueError, KeyError):
            pass
    plan = terminal_sets(dec, sc.system)
    if cache_path:
        d = os.path.dirname(cache_path)
        if d:
            os.makedirs(d, exist_ok=True)
        with open(cache_path, "w", encoding="utf-8") as fh:
            fh.write(plan.to_json())
    return plan, False


# --- commands --------------------------------------------------------------------------

def cmd_check(args):
    sc = _load(args)
    seg = sc.segments()
    dec = sc.decomposition()
    S, T = horizon(sc.formula)
    print(f"scenario: {sc.name}")
    print(f"formula: {sc.raw['formula']}")
    print(f"horizon: ({S}, {T})")
    print(f"segments: {seg.N}")
    for s in seg.segments:
        print(f"  {s.index}: {s.op}[{s.a},{s.b}]")
    print(f"stages: {dec.N}")
    print("  stage  S   T   segments")
    for i, st in enumerate(dec.stages, start=1):
        ops = " ".join(f"{s.op}[{s.a},{s.b}]" for s in st.formula.segments)
        print(f"  {i:5d} {st.S:3d} {st.T:3d}  {ops}")
    print(f"L mode: {sc.system.lipschitz_mode} (L = {sc.system.L:.6g})")
    return 0


def _plan_path(sc, args):
    if getattr(args, "cache", None):
        return args.cache
    return os.path.join(_out_dir(sc, args), "plan.json")


def cmd_terminal(args):
    sc = _load(args)
    path = _plan_path(sc, args)
    plan, cached = get_plan(sc, path, force=args.force)
    n_reg = len(plan.terminals) - 1
    print(("cached" if cached else "computed") + f": {path}")
    if n_reg == 0:
        print("single stage: no boundary regions")
    for i in range(1, n_reg + 1):
        reg = plan.terminal(i)
        at = plan.decomposition.stages[i - 1].T
        lo, hi = reg.bounding_box()
        print(f"boundary {i} at instant {at}: {len(reg.parts)} part(s), "
              f"box {np.round(lo, 4).tolist()} .. {np.round(hi, 4).tolist()}")
    return 0


def _run_one(sc: Scenario, mode, seed, plan, opts, out, golden):
    policy = sc.make_policy(seed)
    if mode == "alg1":
        trace = run_algorithm1(sc.system, sc.formula, sc.x0, sc.cost, policy, opts)
    else:
        trace = run_algorithm2(sc.system, sc.decomposition(), plan, sc.x0, sc.cost, policy, opts)
    ev = evaluate_run(trace, sc.formula, sc.cost)
    stem = os.path.join(out, f"{mode}_seed{seed}")
    meta = {"scenario": sc.name, "mode": mode, "seed": seed, "policy": policy.describe()}
    with open(stem + ".jsonl", "w", encoding="utf-8") as fh:
        fh.write("\n".join(runlog_lines(trace, ev, meta, with_times=not golden)) + "\n")
    with open(stem + ".csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(trajectory_csv(trace))
    return ev


def _run_job(payload):
    raw, mode, seed, plan_json, opts, out, golden = payload
    sc = Scenario.from_dict(raw)
    plan = StagePlan.from_json(plan_json, sc.decomposition()) if plan_json else None
    return _run_one(sc, mode, seed, plan, opts, out, golden)


def run_mode(sc, mode, seeds, args):
    out = _out_dir(sc, args)
    opts = MpcOptions(_cegis_opts(sc, args), abort_on_inconclusive=args.abort_on_inconclusive)
    plan = None
    if mode == "alg2":
        plan, cached = get_plan(sc, _plan_path(sc, args))
        print(f"terminal sets {'cached' if cached else 'computed'}")
    jobs = getattr(args, "jobs", 1) or 1
    evals = []
    if jobs > 1 and len(seeds) > 1:
        pj = plan.to_json() if plan is not None else None
        payloads = [(sc.to_dict(), mode, s, pj, opts, out, args.golden) for s in seeds]
        with ProcessPoolExecutor(jobs) as ex:
            evals = list(ex.map(_run_job, payloads))
    else:
        for s in seeds:
            evals.append(_run_one(sc, mode, s, plan, opts, out, args.golden))
            e = evals[-1]
            print(f"  {mode} seed {s}: sat={e['satisfied']} cost={e['cost']:.4f} "
                  f"k0={e['time_k0']:.3f}s total={e['time_total']:.3f}s")
    summary = summarize_runs(evals)
    with open(os.path.join(out, f"summary_{mode}.json"), "w", encoding="utf-8") as fh:
        json.dump({"mode": mode, "seeds": seeds, **summary}, fh, indent=1, sort_keys=True)
    return summary


def _table(rows):
    head = f"{'algorithm':<10} {'k=0 (s)':>9} {'k=1 (s)':>9} {'total (s)':>10} {'cost':>9} {'sat':>6}"
    lines = [head, "-" * len(head)]
    for name, s in rows:
        lines.append(f"{name:<10} {s['mean_time_k0']:9.4f} {s['mean_time_k1']:9.4f} "
                     f"{s['mean_time_total']:10.4f} {s['mean_cost']:9.4f} "
                     f"{s['satisfaction_rate']:6.2f}")
    return "\n".join(lines)


def cmd_run(args):
    sc = _load(args)
    seeds = _seeds(args.seeds, sc.seeds)
    s = run_mode(sc, args.mode, seeds, args)
    print(_table([(args.mode, s)]))
    return 0


def cmd_compare(args):
    sc = _load(args)
    seeds = _seeds(args.seeds, sc.seeds)
    seeds1 = _seeds(args.alg1_seeds, seeds)
    s2 = run_mode(sc, "alg2", seeds, args)
    s1 = run_mode(sc, "alg1", seeds1, args)
    ratio = s1["mean_time_k0"] / s2["mean_time_k0"] if s2["mean_time_k0"] > 0 else float("inf")
    print(_table([("alg2", s2), ("alg1", s1)]))
    print(f"k=0 time ratio alg1/alg2: {ratio:.1f}")
    out = _out_dir(sc, args)
    with open(os.path.join(out, "compare.json"), "w", encoding="utf-8") as fh:
        json.dump({"alg1": s1, "alg2": s2, "k0_ratio": ratio}, fh, indent=1, sort_keys=True)
    return 0


def _read_traj(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], []
    return rows[0], rows[1:]


def region_outline(reg: Region, axes, bound: HPolytope | None = None):
    """Polygons (one per part) of the projection of a region onto two axes."""
    polys = []
    for p in reg.parts:
        q = p if bound is None else p.intersect(bound)
        if q.is_empty():
            continue
        v = polygon_vertices(project(q, axes))
        if len(v):
            polys.append(v)
    return polys


def cmd_plot_data(args):
    sc = _load(args)
    axes = [int(a) for a in args.axes.split(",")]
    n = sc.system.n
    if len(axes) != 2 or any(a < 0 or a >= n for a in axes) or axes[0] == axes[1]:
        print(f"error[axes]: need two distinct axes in 0..{n - 1}", file=sys.stderr)
        return EXIT_INVALID
    out = _out_dir(sc, args)
    stem = os.path.splitext(os.path.basename(args.trajectory))[0]
    header, rows = _read_traj(args.trajectory)
    c0, c1 = (1 + axes[0], 1 + axes[1])
    with open(os.path.join(out, f"{stem}_xy.csv"), "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", sc.state_names[axes[0]], sc.state_names[axes[1]]])
        for r in rows:
            wr.writerow([r[0], r[c0], r[c1]])
    regions = [(name, bool_to_region(phi, n)) for name, phi in sc.regions.items()]
    if args.plan:
        with open(args.plan, encoding="utf-8") as fh:
            plan = StagePlan.from_json(fh.read(), sc.decomposition())
        for i in range(1, len(plan.terminals)):
            regions.append((f"T{i}", plan.terminal(i)))
    with open(os.path.join(out, f"{stem}_outlines.csv"), "w", encoding="utf-8",
              newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["region", "part", "vertex", sc.state_names[axes[0]], sc.state_names[axes[1]]])
        if rows:
            for name, reg in regions:
                for j, poly in enumerate(region_outline(reg, axes, sc.system.X)):
                    for i, v in enumerate(poly):
                        wr.writerow([name, j, i, repr(float(v[0])), repr(float(v[1]))])
    print(f"wrote {stem}_xy.csv and {stem}_outlines.csv to {out}")
    return 0


# --- parser ----------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="stlmpc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario JSON file or builtin:NAME")
        sp.add_argument("--out", help="output directory (default from the scenario)")
        sp.add_argument("--l-mode", choices=["lipschitz", "exact"],
                        help="override the disturbance magnification mode")

    def solver(sp):
        sp.add_argument("--seeds", help="seed list, e.g. 0-19 or 1,4,7")
        sp.add_argument("--eps-rob", type=float)
        sp.add_argument("--max-iter", type=int, help="CEGIS iteration cap")
        sp.add_argument("--node-limit", type=int, help="branch-and-bound node limit")
        sp.add_argument("--time-limit", type=float, help="per-MILP time limit (s)")
        sp.add_argument("--abort-on-inconclusive", action="store_true")
        sp.add_argument("--golden", action="store_true",
                        help="leave wall-time fields out of the run logs")
        sp.add_argument("--jobs", type=int, default=1, help="parallel seeds")
        sp.add_argument("--cache", help="stage plan cache (default OUT/plan.json)")

    sp = sub.add_parser("check", help="validate a scenario")
    common(sp)
    sp.set_defaults(fn=cmd_check)

    sp = sub.add_parser("terminal", help="compute or reuse the stage terminal sets")
    common(sp)
    sp.add_argument("--cache", help="plan file (default OUT/plan.json)")
    sp.add_argument("--force", action="store_true", help="ignore an existing cache")
    sp.set_defaults(fn=cmd_terminal)

    sp = sub.add_parser("run", help="closed-loop runs of one controller")
    common(sp)
    solver(sp)
    sp.add_argument("--mode", choices=["alg1", "alg2"], default="alg2")
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("compare", help="both controllers and a summary table")
    common(sp)
    solver(sp)
    sp.add_argument("--alg1-seeds", help="seeds for the full-horizon controller (default --seeds)")
    sp.set_defaults(fn=cmd_compare)

    sp = sub.add_parser("plot-data", help="projected trajectory and region outlines")
    common(sp)
    sp.add_argument("trajectory", help="trajectory CSV written by run")
    sp.add_argument("--axes", default="0,2", help="two state indices (0-based)")
    sp.add_argument("--plan", help="stage plan JSON to outline the terminal sets")
    sp.set_defaults(fn=cmd_plot_data)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ScenarioError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DecompositionError as exc:
        print(f"error[cuts]: {exc} (segment {exc.segment})", file=sys.stderr)
        return EXIT_INVALID
    except TerminalSetError as exc:
        print(f"error[terminal]: {exc}", file=sys.stderr)
        return EXIT_TERMINAL
    except ControllerError as exc:
        print(f"error[controller]: {exc} (k={exc.k}, stage={exc.stage})", file=sys.stderr)
        return EXIT_CONTROLLER
    except (GeometryError, OSError) as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
