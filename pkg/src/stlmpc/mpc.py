"""Closed-loop shrinking-horizon controllers and the disturbed plant."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .encode import INCONCLUSIVE, INFEASIBLE, ROBUST, CegisOptions, CostSpec, cegis_solve
from .stl import Decomposition, Formula, bool_sat, horizon, robustness
from .system import LinearSystem

log = logging.getLogger(__name__)

U_TOL = 1e-7


# --- disturbances ---------------------------------------------------------------------

class DisturbancePolicy:
    kind = "base"

    def reset(self):
        pass

    def __call__(self, k, sys: LinearSystem):
        raise NotImplementedError

    def describe(self):
        return {"kind": self.kind}


class ZeroPolicy(DisturbancePolicy):
    kind = "zero"

    def __call__(self, k, sys):
        return np.zeros(sys.n)


class SeededUniform(DisturbancePolicy):
    """Independent uniform draws from the disturbance box."""
    kind = "uniform"

    def __init__(self, seed):
        self.seed = int(seed)
        self.reset()

    def reset(self):
        self.rng = np.random.default_rng(self.seed)

    def __call__(self, k, sys):
        lo, hi = sys.w_bounds()
        return self.rng.uniform(lo, hi)

    def describe(self):
        return {"kind": self.kind, "seed": self.seed}


class VertexAdversarial(DisturbancePolicy):
    """Random vertices of the disturbance box (the extreme points)."""
    kind = "vertex"

    def __init__(self, seed):
        self.seed = int(seed)
        self.reset()

    def reset(self):
        self.rng = np.random.default_rng(self.seed)

    def __call__(self, k, sys):
        lo, hi = sys.w_bounds()
        pick = self.rng.integers(0, 2, size=sys.n).astype(bool)
        return np.where(pick, hi, lo)

    def describe(self):
        return {"kind": self.kind, "seed": self.seed}


class Replay(DisturbancePolicy):
    kind = "replay"

    def __init__(self, sequence, offset=0):
        self.sequence = np.atleast_2d(np.asarray(sequence, dtype=float))
        self.offset = offset

    def __call__(self, k, sys):
        j = k - self.offset
        if 0 <= j < len(self.sequence):
            return self.sequence[j].copy()
        return np.zeros(sys.n)

    def describe(self):
        return {"kind": self.kind, "length": len(self.sequence)}


def make_policy(kind, seed=0, sequence=None):
    if kind == "zero":
        return ZeroPolicy()
    if kind == "uniform":
        return SeededUniform(seed)
    if kind == "vertex":
        return VertexAdversarial(seed)
    if kind == "replay":
        return Replay(sequence)
    raise ValueError(f"unknown disturbance policy {kind!r}")


# --- trace -----------------------------------------------------------------------------

@dataclass
class Trace:
    states: list
    inputs: list = field(default_factory=list)
    disturbances: list = field(default_factory=list)
    solve_times: list = field(default_factory=list)
    cegis_iterations: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    stages: list = field(default_factory=list)
    events: list = field(default_factory=list)
    records: list = field(default_factory=list)

    @property
    def X(self):
        return np.array(self.states)

    @property
    def U(self):
        return np.array(self.inputs).reshape(len(self.inputs), -1)

    @property
    def W(self):
        return np.array(self.disturbances).reshape(len(self.disturbances), -1)

    def check_dynamics(self, sys, tol=1e-9):
        X, U, W = self.X, self.U, self.W
        for t in range(len(U)):
            if np.max(np.abs(X[t + 1] - (sys.A @ X[t] + sys.B @ U[t] + W[t]))) > tol:
                return False
        return True


class ControllerError(RuntimeError):
    def __init__(self, msg, trace, k, stage=None):
        super().__init__(msg)
        self.trace = trace
        self.k = k
        self.stage = stage


# --- plant -----------------------------------------------------------------------------

def step_plant(sys: LinearSystem, x, u, policy: DisturbancePolicy, k):
    """x' = A x + B u + w with w from the policy. Inputs outside U are rejected
    (values within 1e-7 of a bound are snapped to it)."""
    u = np.asarray(u, dtype=float)
    lo, hi = sys.u_bounds()
    if np.any(u < lo - U_TOL) or np.any(u > hi + U_TOL) or not sys.U.contains(u, U_TOL):
        raise ValueError(f"input {u} outside the admissible set at k={k}")
    u = np.clip(u, lo, hi)
    w = np.asarray(policy(k, sys), dtype=float)
    if not sys.W.contains(w, 1e-12):
        raise ValueError(f"policy produced w outside W at k={k}")
    return sys.A @ np.asarray(x, dtype=float) + sys.B @ u + w, w, u


@dataclass
class MpcOptions:
    cegis: CegisOptions = field(default_factory=CegisOptions)
    abort_on_inconclusive: bool = False


def _control_step(trace, sys, f, k, T, cost, terminal, opts, policy, stage, S):
    prefix = {t: trace.states[t] for t in range(S, k + 1)}
    res = cegis_solve(sys, f, prefix, k, T, cost, terminal, opts.cegis)
    rec = {"k": k, "stage": stage, "status": res.status, "time": res.wall_time,
           "rho": res.rho, "objective": res.objective, "bank": len(res.state.bank),
           "iterations": res.state.iterations, "message": res.message,
           "solves": res.state.history}
    trace.records.append(rec)
    trace.solve_times.append(res.wall_time)
    trace.cegis_iterations.append(res.state.iterations)
    trace.statuses.append(res.status)
    trace.stages.append(stage)
    if res.status == INFEASIBLE:
        raise ControllerError(f"infeasible solve at k={k} (stage {stage}): {res.message}",
                              trace, k, stage)
    if res.status == INCONCLUSIVE:
        log.warning("k=%d stage=%s: CEGIS inconclusive (%s); applying the uncertified input",
                    k, stage, res.message)
        if opts.abort_on_inconclusive:
            raise ControllerError(f"inconclusive solve at k={k}: {res.message}", trace, k, stage)
    x2, w, u = step_plant(sys, trace.states[k], res.u[0], policy, k)
    trace.inputs.append(u)
    trace.disturbances.append(w)
    trace.states.append(x2)
    if not sys.X.contains(x2):
        trace.events.append({"k": k + 1, "event": "state_outside_X"})
    return res


def run_algorithm1(sys, f: Formula, x0, cost: CostSpec, policy: DisturbancePolicy,
                   opts: MpcOptions | None = None) -> Trace:
    """Shrinking-horizon MPC over the whole formula horizon."""
    opts = opts or MpcOptions()
    policy.reset()
    T = horizon(f)[1]
    trace = Trace([np.asarray(x0, dtype=float)])
    for k in range(T):
        _control_step(trace, sys, f, k, T, cost, None, opts, policy, 1, 0)
    return trace


def run_algorithm2(sys, dec: Decomposition, plan, x0, cost: CostSpec, policy: DisturbancePolicy,
                   opts: MpcOptions | None = None) -> Trace:
    """Stage-by-stage shrinking-horizon MPC with terminal sets between stages."""
    opts = opts or MpcOptions()
    policy.reset()
    trace = Trace([np.asarray(x0, dtype=float)])
    start = 0
    for i, st in enumerate(dec.stages, start=1):
        f = st.formula.formula()
        terminal = plan.terminal(i) if i < dec.N else None
        T = st.T
        S = start
        for k in range(start, T):
            _control_step(trace, sys, f, k, T, cost, terminal, opts, policy, i, S)
        if terminal is not None:
            inside = terminal.contains(trace.states[T])
            trace.events.append({"k": T, "event": "boundary", "stage": i, "inside": bool(inside)})
        start = T
    return trace


def boundary_ok(trace: Trace):
    return all(e["inside"] for e in trace.events if e["event"] == "boundary")


def evaluate_run(trace: Trace, f: Formula, cost: CostSpec):
    X = trace.X
    rho = robustness(X, f) if f is not None else math.inf
    sat = bool_sat(X, f) if f is not None else True
    J = cost.evaluate(rho, trace.U) if len(trace.inputs) else -cost.rho_weight * rho
    times = trace.solve_times
    return {
        "satisfied": bool(sat),
        "robustness": float(rho),
        "cost": float(J),
        "time_k0": float(times[0]) if times else 0.0,
        "time_k1": float(times[1]) if len(times) > 1 else 0.0,
        "time_total": float(sum(times)),
        "time_max": float(max(times)) if times else 0.0,
        "infeasible_solves": sum(s == INFEASIBLE for s in trace.statuses),
        "inconclusive_solves": sum(s == INCONCLUSIVE for s in trace.statuses),
        "robust_solves": sum(s == ROBUST for s in trace.statuses),
        "boundary_ok": boundary_ok(trace),
        "state_violations": sum(e["event"] == "state_outside_X" for e in trace.events),
    }


def summarize_runs(evals):
    """Aggregate of per-seed evaluate_run results."""
    if not evals:
        return {"runs": 0}
    mean = lambda key: float(np.mean([e[key] for e in evals]))
    return {
        "runs": len(evals),
        "satisfaction_rate": mean("satisfied"),
        "mean_cost": mean("cost"),
        "mean_robustness": mean("robustness"),
        "mean_time_k0": mean("time_k0"),
        "mean_time_k1": mean("time_k1"),
        "mean_time_total": mean("time_total"),
        "infeasible_solves": int(sum(e["infeasible_solves"] for e in evals)),
        "inconclusive_solves": int(sum(e["inconclusive_solves"] for e in evals)),
        "boundary_ok_rate": mean("boundary_ok"),
    }


# --- logs ------------------------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


TIME_FIELDS = ("time", "solve_time", "adversary_time", "time_k0", "time_k1", "time_total",
               "time_max")


def runlog_lines(trace: Trace, summary: dict | None = None, meta: dict | None = None,
                 with_times=True):
    """One JSON line per control step, then a summary line."""
    out = []
    for rec in trace.records:
        r = {key: rec[key] for key in ("k", "stage", "status", "time", "rho", "bank",
                                       "iterations", "message")}
        r["solves"] = [{k: v for k, v in s.items() if with_times or k not in TIME_FIELDS}
                       for s in rec["solves"]]
        if not with_times:
            r.pop("time")
        out.append(json.dumps(_jsonable({"type": "step", **r}), sort_keys=True))
    tail = {"type": "summary", **(meta or {}), **(summary or {}), "events": trace.events}
    if not with_times:
        tail = {k: v for k, v in tail.items() if k not in TIME_FIELDS}
    out.append(json.dumps(_jsonable(tail), sort_keys=True))
    return out


def trajectory_csv(trace: Trace) -> str:
    """Columns: t, x1..xn, u1..um, w1..wn (inputs/disturbances empty on the last row)."""
    X = trace.X
    n = X.shape[1]
    m = trace.U.shape[1] if trace.inputs else 0
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
                + [f"w{i + 1}" for i in range(n)])
    for t in range(len(X)):
        row = [t] + [repr(float(v)) for v in X[t]]
        if t < len(trace.inputs):
            row += [repr(float(v)) for v in trace.inputs[t]]
            row += [repr(float(v)) for v in trace.disturbances[t]]
        else:
            row += [""] * (m + n)
        wr.writerow(row)
    return buf.getvalue()


__all__ = [
    "DisturbancePolicy", "ZeroPolicy", "SeededUniform", "VertexAdversarial", "Replay",
    "make_policy", "Trace", "ControllerError", "step_plant", "MpcOptions", "run_algorithm1",
    "run_algorithm2", "evaluate_run", "summarize_runs", "boundary_ok", "runlog_lines", "trajectory_csv",
]
