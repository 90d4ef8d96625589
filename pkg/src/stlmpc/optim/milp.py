"""Best-bound branch-and-bound over LP relaxations (binary variables only)."""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass

import numpy as np

from .lp import _finish, _max_iter, solve_standard
from .model import INFEASIBLE, ITER_LIMIT, OPTIMAL, UNBOUNDED, MilpModel, SolveResult

EPS_INT = 1e-6


@dataclass
class MilpOptions:
    gap: float = 1e-6
    node_limit: int = 20000
    time_limit: float = math.inf


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    fixes: tuple = ()
    tab: object = None


def solve_milp(model: MilpModel, opts: MilpOptions | None = None) -> SolveResult:
    """Minimize/maximize a MILP whose integer variables are binaries.

    Nodes are explored in order of their parent's LP bound; ties go to the
    older node, and the down-branch is created first so it wins ties. The
    branching variable is the lowest-index fractional binary.
    """
    opts = opts or MilpOptions()
    t0 = time.perf_counter()
    sign = -1.0 if model.sense == "max" else 1.0
    relax = model.relaxation()
    res, tab, std = solve_standard(relax)
    if res.status != OPTIMAL or not model.integer.any():
        res.nodes = 1
        res.wall_time = time.perf_counter() - t0
        return res

    col_of = {}
    for k, j in enumerate(std.src):
        col_of[int(j)] = k
    int_idx = np.flatnonzero(model.integer)
    max_iter = _max_iter(*tab.T.shape)

    incumbent, inc_obj = None, math.inf
    nodes = 1
    iterations = res.iterations
    heap = []
    seq = 0

    def consider(x, obj, node_tab, path):
        nonlocal incumbent, inc_obj, seq
        frac = np.abs(x[int_idx] - np.round(x[int_idx]))
        bad = np.flatnonzero(frac > EPS_INT)
        val = sign * obj
        if bad.size == 0:
            if val < inc_obj - 1e-12:
                xr = x.copy()
                xr[int_idx] = np.round(xr[int_idx])
                incumbent, inc_obj = xr, val
            return
        if val >= inc_obj - opts.gap:
            return
        j = int(int_idx[bad[0]])
        for v in (0.0, 1.0):
            heapq.heappush(heap, _Node(val, seq, path + ((j, v),), node_tab))
            seq += 1

    consider(res.x, res.objective, tab, ())
    status = OPTIMAL
    while heap:
        node = heapq.heappop(heap)
        if node.bound >= inc_obj - opts.gap:
            continue
        if nodes >= opts.node_limit or time.perf_counter() - t0 > opts.time_limit:
            status = ITER_LIMIT
            break
        nodes += 1
        j, v = node.fixes[-1]
        if node.tab is not None:
            child = node.tab.copy()
            child.fix(col_of[j], v - std.offset[j])
            st = child.dual(max_iter)
            iterations += child.iterations
            if st == INFEASIBLE:
                continue
            if st == OPTIMAL:
                r = _finish(relax, std, child, OPTIMAL, time.perf_counter(), 0)
                if r.status == OPTIMAL:
                    consider(r.x, r.objective, child, node.fixes)
                    continue
        # cold solve of the node model when warm start is unavailable or failed
        r2, _, _ = solve_standard(relax_with_fixes(relax, node.fixes))
        iterations += r2.iterations
        if r2.status == INFEASIBLE:
            continue
        if r2.status != OPTIMAL:
            status = ITER_LIMIT
            break
        consider(r2.x, r2.objective, None, node.fixes)

    wall = time.perf_counter() - t0
    if incumbent is None:
        st = INFEASIBLE if status == OPTIMAL else ITER_LIMIT
        return SolveResult(st, None, math.nan, nodes, iterations, wall)
    return SolveResult(status, incumbent, float(model.c @ incumbent), nodes, iterations, wall)


def relax_with_fixes(relax, fixes):
    lo, hi = relax.lo.copy(), relax.hi.copy()
    for j, v in fixes:
        lo[j] = hi[j] = v
    return type(relax)(relax.c, relax.A, relax.rel, relax.rhs, lo, hi, relax.sense, relax.names)


__all__ = ["MilpOptions", "solve_milp", "UNBOUNDED"]
