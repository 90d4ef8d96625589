"""MILP encodings of STL robustness, terminal membership and input energy,
and the counterexample-guided loop for robust solving.

States are not decision variables: every x_t is an affine function of the
inputs (primal problems) or of the disturbances (adversary problems), so a
banked disturbance sequence only adds rows, never columns.

Robustness is encoded on the min/max DAG returned by :func:`stl.rho_tree`
with a polarity:

* "upper": the node variable is <= the true robustness. Only max nodes need
  binaries. Exact at the optimum when robustness is maximized, and exact as a
  hard constraint ``root >= eps``.
* "lower": the node variable is >= the true robustness. Only min nodes need
  binaries. Used by the adversary, which minimizes robustness.
* "exact": both directions (binaries everywhere).
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import Region, support_box
from .optim import EQ, GE, LE, OPTIMAL, MilpOptions, ModelBuilder, solve_milp
from .stl import horizon, rho_tree

log = logging.getLogger(__name__)

EPS_CERT = 1e-6     # primal margin on every certified constraint
EPS_VIOL = 1e-9     # adversary: violations smaller than this are ignored


# --- affine expressions --------------------------------------------------------------

@dataclass
class Aff:
    const: float
    idx: np.ndarray
    coef: np.ndarray

    @classmethod
    def constant(cls, v):
        return cls(float(v), np.zeros(0, dtype=int), np.zeros(0))

    @property
    def is_const(self):
        return self.idx.size == 0

    def bounds(self, lo, hi):
        if self.is_const:
            return self.const, self.const
        l, h = lo[self.idx], hi[self.idx]
        c = self.coef
        low = self.const + float(np.sum(np.where(c > 0, c * l, c * h)))
        high = self.const + float(np.sum(np.where(c > 0, c * h, c * l)))
        return low, high

    def value(self, x):
        return self.const + float(self.coef @ x[self.idx]) if not self.is_const else self.const


class Trajectory:
    """x_t = const[t] + lin[t] @ v for t in [k, T]; earlier states are fixed.

    ``v`` are model variables with indices ``vidx`` (inputs for primal
    problems, disturbances for the adversary).
    """

    def __init__(self, consts: dict, lins: dict, vidx):
        self.consts = consts
        self.lins = lins
        self.vidx = np.asarray(vidx, dtype=int)

    def state_aff(self, t, a, b=0.0):
        c = self.consts[t]
        L = self.lins.get(t)
        val = float(a @ c + b)
        if L is None:
            return Aff.constant(val)
        row = a @ L
        nz = np.flatnonzero(np.abs(row) > 1e-14)
        return Aff(val, self.vidx[nz], row[nz])


def _powers(A, n):
    out = [np.eye(A.shape[0])]
    for _ in range(n):
        out.append(A @ out[-1])
    return out


def primal_trajectory(sys, xk, k, T, uidx, wseq, prefix):
    """States as affine functions of the inputs u_k..u_{T-1} for a fixed w sequence."""
    n, m = sys.n, sys.m
    P = _powers(sys.A, T - k)
    consts = dict(prefix)
    consts[k] = np.asarray(xk, dtype=float)
    lins = {}
    nu = (T - k) * m
    for t in range(k + 1, T + 1):
        c = P[t - k] @ xk
        L = np.zeros((n, nu))
        for j in range(k, t):
            c = c + P[t - 1 - j] @ wseq[j - k]
            L[:, (j - k) * m:(j - k + 1) * m] = P[t - 1 - j] @ sys.B
        consts[t], lins[t] = c, L
    return Trajectory(consts, lins, uidx)


def adversary_trajectory(sys, xk, k, T, useq, widx, prefix):
    """States as affine functions of the disturbances w_k..w_{T-1} for fixed inputs."""
    n = sys.n
    P = _powers(sys.A, T - k)
    consts = dict(prefix)
    consts[k] = np.asarray(xk, dtype=float)
    lins = {}
    nw = (T - k) * n
    for t in range(k + 1, T + 1):
        c = P[t - k] @ xk
        L = np.zeros((n, nw))
        for j in range(k, t):
            c = c + P[t - 1 - j] @ sys.B @ useq[j - k]
            L[:, (j - k) * n:(j - k + 1) * n] = P[t - 1 - j]
        consts[t], lins[t] = c, L
    return Trajectory(consts, lins, widx)


# --- robustness DAG encoding -------------------------------------------------------------

class TreeEncoder:
    """Adds rows/variables for a robustness DAG to a ModelBuilder."""

    def __init__(self, mb: ModelBuilder, traj: Trajectory, polarity="upper",
                 xset=None, strict_eps=0.0):
        if polarity not in ("upper", "lower", "exact"):
            raise ValueError("polarity must be upper, lower or exact")
        self.mb = mb
        self.traj = traj
        self.polarity = polarity
        self.xset = xset
        self.strict_eps = strict_eps
        self.binaries = 0

    def _bounds(self, e: Aff):
        lo, hi = np.array(self.mb.lo), np.array(self.mb.hi)
        return e.bounds(lo, hi)

    def leaf(self, t, a, b, negated):
        b = b - self.strict_eps if negated else b
        e = self.traj.state_aff(t, np.asarray(a, dtype=float), b)
        lo, hi = self._bounds(e)
        if self.xset is not None and not e.is_const:
            lo = max(lo, -support_box(self.xset, -np.asarray(a)) + b)
            hi = min(hi, support_box(self.xset, np.asarray(a)) + b)
            if lo > hi:  # x_t in X cannot satisfy both; keep the interval bound
                lo, hi = self._bounds(e)
        return e, lo, hi

    def encode(self, node):
        """Return (Aff, lo, hi) for the node's robustness value."""
        kind = node[0]
        if kind == "const":
            v = node[1]
            return Aff.constant(v), v, v
        if kind == "pred":
            _, t, a, b, neg = node
            return self.leaf(t, a, b, neg)
        kids = [self.encode(c) for c in node[1]]
        is_min = kind == "min"
        # fold constants
        consts = [e.const for e, _, _ in kids if e.is_const]
        var = [kd for kd in kids if not kd[0].is_const]
        if consts:
            cv = min(consts) if is_min else max(consts)
            if not var:
                return Aff.constant(cv), cv, cv
            if is_min and all(lo >= cv for _, lo, _ in var):
                return Aff.constant(cv), cv, cv
            if not is_min and all(hi <= cv for _, _, hi in var):
                return Aff.constant(cv), cv, cv
            if math.isfinite(cv):
                var.append((Aff.constant(cv), cv, cv))
        # drop children that can never be the extremum
        if is_min:
            cap = min(hi for _, _, hi in var)
            var = [kd for kd in var if kd[1] <= cap]
        else:
            floor = max(lo for _, lo, _ in var)
            var = [kd for kd in var if kd[2] >= floor]
        if len(var) == 1:
            return var[0]
        los = [lo for _, lo, _ in var]
        his = [hi for _, _, hi in var]
        rlo, rhi = (min(los), min(his)) if is_min else (max(los), max(his))
        r = self.mb.add_var(rlo, rhi, name=f"r{self.mb.n}")
        need_upper = self.polarity in ("upper", "exact")
        need_lower = self.polarity in ("lower", "exact")
        # convex side: r <= each child (min, upper) or r >= each child (max, lower)
        if is_min and need_upper:
            for e, _, _ in var:
                self._row(r, 1.0, e, LE, 0.0)
        if not is_min and need_lower:
            for e, _, _ in var:
                self._row(r, 1.0, e, GE, 0.0)
        # disjunctive side
        if (is_min and need_lower) or (not is_min and need_upper):
            zs = []
            for e, lo, hi in var:
                z = self.mb.add_var(0, 1, binary=True, name=f"z{self.mb.n}")
                self.binaries += 1
                zs.append(z)
                if is_min:
                    M = max(hi - rlo, 0.0)   # r >= e - M (1 - z)
                    self._row(r, 1.0, e, GE, -M, z=z, zc=-M)
                else:
                    M = max(rhi - lo, 0.0)   # r <= e + M (1 - z)
                    self._row(r, 1.0, e, LE, M, z=z, zc=M)
            rel = EQ if self.polarity == "exact" else GE
            self.mb.add_row(zs, np.ones(len(zs)), rel, 1.0)
        return Aff(0.0, np.array([r]), np.array([1.0])), rlo, rhi

    def _row(self, r, rc, e: Aff, rel, rhs, z=None, zc=0.0):
        # rc * r - e  (rel)  rhs  [+ zc * z on the left]
        idx = [r] + list(e.idx)
        val = [rc] + list(-e.coef)
        if z is not None:
            idx.append(z)
            val.append(zc)
        self.mb.add_row(idx, val, rel, rhs + e.const)


# --- cost and problem construction ----------------------------------------------------------

@dataclass
class CostSpec:
    """J = -rho_weight * rho + energy_weight * sum |u|^2 (PWL inside the MILP).

    ``kind`` selects nominal robustness (the zero-disturbance copy) or the worst
    case over banked copies.
    """
    rho_weight: float = 1.0
    energy_weight: float = 0.0
    kind: str = "nominal"
    energy_segments: int = 8
    terminal_weight: float = 0.0

    # terminal_weight rewards the depth of the nominal x_T inside the terminal
    # region (a tie-break; it is not part of the reported cost)

    def __post_init__(self):
        if self.kind not in ("nominal", "worst"):
            raise ValueError("kind must be 'nominal' or 'worst'")
        if not (self.energy_weight >= 0 and math.isfinite(self.energy_weight)):
            raise ValueError("energy weight must be finite and non-negative")
        if self.rho_weight < 0:
            raise ValueError("robustness weight must be non-negative")
        if not (self.terminal_weight >= 0 and math.isfinite(self.terminal_weight)):
            raise ValueError("terminal weight must be finite and non-negative")

    def evaluate(self, rho, inputs):
        u = np.asarray(inputs, dtype=float)
        return -self.rho_weight * rho + self.energy_weight * float(np.sum(u * u))


def pwl_square(lo, hi, segments=8):
    """Breakpoints and segment slopes of the secant interpolation of u^2."""
    p = np.linspace(lo, hi, segments + 1)
    slopes = p[:-1] + p[1:]
    return p, slopes


def encode_energy(mb: ModelBuilder, uidx, ubounds, weight, segments=8):
    """Adds weight * PWL(u^2) for every input variable. Returns the constant
    offset of the objective (the PWL value at the lower bounds)."""
    if weight <= 0:
        return 0.0
    offset = 0.0
    lo, hi = ubounds
    for j, v in enumerate(np.asarray(uidx).ravel()):
        l, h = mb.lo[v], mb.hi[v]
        if h - l < 1e-12:
            offset += weight * l * l
            continue
        p, slopes = pwl_square(l, h, segments)
        w = (h - l) / segments
        ds = [mb.add_var(0.0, w, name=f"e{v}_{s}") for s in range(segments)]
        mb.add_row([v] + ds, [1.0] + [-1.0] * segments, EQ, l)
        mb.add_objective(ds, weight * slopes)
        offset += weight * l * l
    return offset


def energy_pwl_value(u, lo, hi, segments=8):
    p, _ = pwl_square(lo, hi, segments)
    return float(np.interp(u, p, p * p))


@dataclass
class Problem:
    model: object
    uidx: np.ndarray          # (T-k, m)
    root: list                # per copy: (Aff, lo, hi) of the robustness
    k: int
    T: int
    offset: float = 0.0
    infeasible_reason: str | None = None
    stats: dict = field(default_factory=dict)
    rho_var: int | None = None

    def decode_u(self, x):
        return x[self.uidx]

    def rho(self, x, copy=0):
        return self.root[copy][0].value(x)


def _prefix_dict(prefix, k):
    """prefix: mapping t -> state or array of states for t = 0..k (k inclusive)."""
    if prefix is None:
        return {}
    if isinstance(prefix, dict):
        return {int(t): np.asarray(v, dtype=float) for t, v in prefix.items()}
    arr = np.asarray(prefix, dtype=float)
    return {t: arr[t] for t in range(min(len(arr), k + 1))}


def disturbance_tightening(sys, k):
    """tight(t, a) = max of a . (sum_{j<t} A^(t-1-j) w_j) over the disturbance box,
    the exact worst-case shift of a linear function of x_t."""
    wl, wh = sys.w_bounds()
    c, r = (wl + wh) / 2, (wh - wl) / 2
    cache = {}

    def tight(t, a):
        key = (t, tuple(a))
        if key not in cache:
            P = np.eye(sys.n)
            total = 0.0
            for _ in range(t - k):
                g = a @ P
                total += float(g @ c + np.abs(g) @ r)
                P = sys.A @ P
            cache[key] = total
        return cache[key]
    return tight


def _no_tight(t, a):
    return 0.0


def encode_terminal(mb: ModelBuilder, traj: Trajectory, region: Region, t, X, margin=0.0,
                    tight=_no_tight, depth=None):
    """x_t in region: one binary per part, big-M from the support of X.

    ``tight`` shifts each row of a single-part region (robust counterpart).
    ``depth`` is an optional variable d >= 0 with a.x_t + d <= b on the chosen part."""
    dl = [] if depth is None else [depth]
    dc = [] if depth is None else [1.0]
    dhi = 0.0 if depth is None else mb.hi[depth]
    parts = [p for p in region.parts]
    if not parts:
        mb.infeasible_reason = "empty terminal region"
        return 0
    if any(p.nrows == 0 for p in parts):
        return 0
    if len(parts) == 1:
        p = parts[0]
        for a, b in zip(p.A, p.b):
            e = traj.state_aff(t, a)
            mb.add_row(list(e.idx) + dl, list(e.coef) + dc, LE, b - e.const - margin - tight(t, a))
        return 0
    zs = []
    for p in parts:
        z = mb.add_var(0, 1, binary=True, name=f"d{mb.n}")
        zs.append(z)
        for a, b in zip(p.A, p.b):
            e = traj.state_aff(t, a)
            M = max(support_box(X, a) - b + margin + dhi, 0.0)
            # a.x_t + d <= b - margin + M (1 - z)
            mb.add_row(list(e.idx) + dl + [z], list(e.coef) + dc + [M], LE,
                       b - margin + M - e.const)
    mb.add_row(zs, np.ones(len(zs)), GE, 1.0)
    return len(zs)


def _add_state_constraints(mb, traj, X, k, T, margin, tight=_no_tight):
    lo, hi = np.array(mb.lo), np.array(mb.hi)
    for t in range(k + 1, T + 1):
        for a, b in zip(X.A, X.b):
            e = traj.state_aff(t, a)
            b = b - tight(t, a)
            if e.is_const:
                if e.const > b - margin + 1e-9:
                    mb.infeasible_reason = f"state constraint violated at t={t}"
                continue
            _, high = e.bounds(lo, hi)
            if high <= b - margin:
                continue
            mb.add_row(e.idx, e.coef, LE, b - margin - e.const)


def build_problem(sys, f, prefix, k, T, cost: CostSpec, w_bank, terminal: Region | None = None,
                  eps_rob=0.0, strict_eps=0.0, cert_margin=EPS_CERT, tighten=True):
    """MPC step problem at instant k, with an optional terminal region at T.

    One trajectory copy per banked disturbance sequence, sharing the inputs.
    Every copy satisfies the formula with robustness >= eps_rob (+ margin for
    non-nominal copies), stays in X, and ends in the terminal region.

    With ``tighten`` (and a zero first bank entry), the linear constraints
    x_t in X and a single-part terminal region are imposed once on the nominal
    copy, shifted by their exact worst case over all disturbance sequences;
    the other copies then only carry the formula.
    """
    mb = ModelBuilder()
    prefix = _prefix_dict(prefix, k)
    if k not in prefix:
        raise ValueError("prefix must contain the current state x_k")
    xk = prefix[k]
    H = T - k
    if H < 0:
        raise ValueError("horizon end before current instant")
    if f is not None and horizon(f)[1] > T:
        raise ValueError(f"formula horizon {horizon(f)[1]} exceeds the problem horizon {T}")
    ulo, uhi = sys.u_bounds()
    uidx = np.array([[mb.add_var(ulo[i], uhi[i], name=f"u{t}_{i}") for i in range(sys.m)]
                     for t in range(k, T)], dtype=int).reshape(H, sys.m)
    if sys.U.box_bounds() is None:
        for t in range(H):
            for a, b in zip(sys.U.A, sys.U.b):
                mb.add_row(uidx[t], a, LE, b)
    tree = rho_tree(f, 0) if f is not None else ("const", math.inf)
    w_zero = _w_is_zero(sys)
    tighten = tighten and not w_zero and not np.any(np.asarray(w_bank[0]))
    tight = disturbance_tightening(sys, k) if tighten else _no_tight
    single_terminal = terminal is not None and len(terminal.parts) == 1
    depth = None
    if terminal is not None and H > 0 and cost.terminal_weight > 0 and terminal.parts:
        dmax = max(p.chebyshev_center()[1] for p in terminal.parts)
        if dmax > 0:
            depth = mb.add_var(0.0, min(dmax, 1e3), name="depth")
            mb.add_objective([depth], [-cost.terminal_weight])
    roots = []
    nbin = 0
    tbin = 0
    for c, wseq in enumerate(w_bank):
        wseq = np.asarray(wseq, dtype=float).reshape(H, sys.n)
        traj = primal_trajectory(sys, xk, k, T, uidx.ravel(), wseq, prefix)
        margin = 0.0 if (c == 0 and not np.any(wseq)) else cert_margin
        if tighten and c == 0:
            _add_state_constraints(mb, traj, sys.X, k, T, cert_margin, tight)
        elif not tighten:
            _add_state_constraints(mb, traj, sys.X, k, T, margin)
        enc = TreeEncoder(mb, traj, "upper", xset=sys.X, strict_eps=strict_eps)
        root = enc.encode(tree)
        nbin += enc.binaries
        roots.append(root)
        e, lo, hi = root
        need = eps_rob + margin
        if e.is_const:
            if e.const < need - 1e-12:
                mb.infeasible_reason = f"formula decided false by the prefix (rho={e.const})"
        else:
            mb.add_row(e.idx, e.coef, GE, need - e.const)
        if terminal is not None and H > 0:
            if tighten and single_terminal:
                if c == 0:
                    encode_terminal(mb, traj, terminal, T, sys.X, cert_margin, tight, depth)
            else:
                tbin += encode_terminal(mb, traj, terminal, T, sys.X, margin,
                                        depth=depth if c == 0 else None)
        elif terminal is not None and not terminal.contains(xk):
            mb.infeasible_reason = "current state outside the terminal region"
    offset = 0.0
    rho_var = None
    if cost.rho_weight > 0:
        if cost.kind == "worst" and len(roots) > 1:
            lo = min(r[1] for r in roots)
            hi = min(r[2] for r in roots)
            rho_var = mb.add_var(lo if math.isfinite(lo) else -1e6, hi if math.isfinite(hi) else 1e6,
                                 name="rho_worst")
            for e, _, _ in roots:
                mb.add_row([rho_var] + list(e.idx), [1.0] + list(-e.coef), LE, e.const)
            mb.add_objective([rho_var], [-cost.rho_weight])
        else:
            e = roots[0][0]
            if not e.is_const:
                mb.add_objective(e.idx, -cost.rho_weight * e.coef)
            if math.isfinite(e.const):
                offset -= cost.rho_weight * e.const
    offset += encode_energy(mb, uidx, (ulo, uhi), cost.energy_weight, cost.energy_segments)
    model = mb.build("min")
    stats = {"vars": model.n, "rows": model.m, "binaries": int(model.integer.sum()),
             "copies": len(w_bank), "robustness_binaries": nbin, "terminal_binaries": tbin}
    return Problem(model, uidx, roots, k, T, offset, mb.infeasible_reason, stats, rho_var)


def build_problem1(sys, f, prefix, k, T, cost, w_bank, **kw):
    return build_problem(sys, f, prefix, k, T, cost, w_bank, None, **kw)


def build_problem2(sys, f, prefix, k, T, cost, terminal, w_bank, **kw):
    return build_problem(sys, f, prefix, k, T, cost, w_bank, terminal, **kw)


# --- adversary ----------------------------------------------------------------------------

@dataclass
class Counterexample:
    w: np.ndarray
    kind: str            # "robustness", "terminal" or "state"
    value: float         # robustness reached, or violation amount


class AdversaryInconclusive(RuntimeError):
    pass


def _max_over_box(e: Aff, lo, hi):
    """argmax / max of an affine expression over the variable box."""
    return e.bounds(lo, hi)[1]


def _worst_w(traj, t, a, wlo, whi, H, n, sign=1.0):
    """w sequence maximizing sign * a.x_t (closed form over the box)."""
    L = traj.lins.get(t)
    w = np.zeros(H * n)
    if L is not None:
        g = sign * (a @ L)
        w = np.where(g > 0, whi, np.where(g < 0, wlo, 0.0))
    return w.reshape(H, n)


def find_counterexample(sys, f, prefix, k, T, u_fixed, terminal: Region | None = None,
                        eps_rob=0.0, strict_eps=0.0, opts: MilpOptions | None = None):
    """Search for a disturbance sequence that breaks the fixed inputs.

    Checks, in order, robustness below eps_rob, leaving X, and missing the
    terminal region. Returns a Counterexample or None (robust). Raises
    AdversaryInconclusive if a MILP hits its limits.
    """
    prefix = _prefix_dict(prefix, k)
    xk = prefix[k]
    H = T - k
    n = sys.n
    if H <= 0:
        return None
    u_fixed = np.asarray(u_fixed, dtype=float).reshape(H, sys.m)
    wl, wh = sys.w_bounds()
    wlo, whi = np.tile(wl, H), np.tile(wh, H)
    zero = np.zeros(H * n)
    # nominal-free trajectory template to test closed-form pieces
    mb0 = ModelBuilder()
    widx0 = mb0.add_vars(H * n, wlo, whi, prefix="w")
    traj0 = adversary_trajectory(sys, xk, k, T, u_fixed, widx0, prefix)
    lo0, hi0 = np.array(mb0.lo), np.array(mb0.hi)

    # robustness: the root is a min over conjuncts, each handled separately
    if f is not None:
        tree = rho_tree(f, 0)
        kids = tree[1] if tree[0] == "min" else [tree]
        best = None
        for kid in kids:
            if kid[0] == "pred":
                _, t, a, b, neg = kid
                b = b - strict_eps if neg else b
                e = traj0.state_aff(t, np.asarray(a), b)
                val = -_max_over_box(Aff(-e.const, e.idx, -e.coef), lo0, hi0)
                if best is None or val < best[0]:
                    best = (val, _worst_w(traj0, t, np.asarray(a), wlo, whi,
                                          H, n, sign=-1.0))
                continue
            if kid[0] == "const":
                if best is None or kid[1] < best[0]:
                    best = (kid[1], zero.reshape(H, n))
                continue
            mb = ModelBuilder()
            widx = mb.add_vars(H * n, wlo, whi, prefix="w")
            traj = adversary_trajectory(sys, xk, k, T, u_fixed, widx, prefix)
            enc = TreeEncoder(mb, traj, "lower", strict_eps=strict_eps)
            e, lo, hi = enc.encode(kid)
            if e.is_const:
                val, w = e.const, zero.reshape(H, n)
            else:
                if lo >= eps_rob + EPS_VIOL and (best is None or best[0] >= eps_rob):
                    continue
                mb.add_objective(e.idx, e.coef)
                res = solve_milp(mb.build("min"), opts)
                if res.status != OPTIMAL:
                    raise AdversaryInconclusive(f"adversary MILP ended with {res.status}")
                val = e.const + res.objective
                w = res.x[widx].reshape(H, n)
            if best is None or val < best[0]:
                best = (val, w)
        if best is not None and best[0] < eps_rob - EPS_VIOL:
            return Counterexample(np.asarray(best[1]), "robustness", float(best[0]))

    # state constraints (closed form per facet and instant)
    worst = None
    for t in range(k + 1, T + 1):
        for a, b in zip(sys.X.A, sys.X.b):
            e = traj0.state_aff(t, a)
            v = _max_over_box(e, lo0, hi0) - b
            if v > EPS_VIOL and (worst is None or v > worst[0]):
                worst = (v, _worst_w(traj0, t, a, wlo, whi, H, n))
    if worst is not None:
        return Counterexample(worst[1], "state", float(worst[0]))

    if terminal is not None and terminal.parts and not any(p.nrows == 0 for p in terminal.parts):
        cx = _terminal_counterexample(sys, traj0, terminal, T, wlo, whi, H, n, opts)
        if cx is not None:
            return cx
    return None


def _terminal_counterexample(sys, traj0, terminal, T, wlo, whi, H, n, opts):
    lo0, hi0 = wlo, whi
    # fast path: one part contains the whole image of the disturbance box
    for p in terminal.parts:
        ok = True
        for a, b in zip(p.A, p.b):
            if _max_over_box(traj0.state_aff(T, a), lo0, hi0) > b + EPS_VIOL:
                ok = False
                break
        if ok:
            return None
    if len(terminal.parts) == 1:
        p = terminal.parts[0]
        best = None
        for a, b in zip(p.A, p.b):
            v = _max_over_box(traj0.state_aff(T, a), lo0, hi0) - b
            if best is None or v > best[0]:
                best = (v, _worst_w(traj0, T, a, lo0, hi0, H, n))
        return Counterexample(best[1], "terminal", float(best[0]))
    # exact MILP: maximize v such that every part has a row violated by v
    mb = ModelBuilder()
    widx = mb.add_vars(H * n, wlo, whi, prefix="w")
    traj = Trajectory(traj0.consts, traj0.lins, widx)
    big = 0.0
    rows = []
    for p in terminal.parts:
        for a, b in zip(p.A, p.b):
            e = traj.state_aff(T, a)
            l, h = e.bounds(np.array(mb.lo), np.array(mb.hi))
            rows.append((p, a, b, e, l, h))
            big = max(big, abs(h - b), abs(l - b))
    vmax = big + 1.0
    v = mb.add_var(-vmax, vmax, name="viol")
    for p in terminal.parts:
        ys = []
        for (pp, a, b, e, l, h) in rows:
            if pp is not p:
                continue
            y = mb.add_var(0, 1, binary=True)
            ys.append(y)
            M = max(b + 2 * vmax - l, 0.0)
            # a.x_T >= b + v - M (1 - y)
            mb.add_row(list(e.idx) + [v, y], list(e.coef) + [-1.0, -M], GE, b - M - e.const)
        mb.add_row(ys, np.ones(len(ys)), GE, 1.0)
    mb.add_objective([v], [1.0])
    res = solve_milp(mb.build("max"), opts)
    if res.status != OPTIMAL:
        raise AdversaryInconclusive(f"terminal adversary ended with {res.status}")
    if res.objective > EPS_VIOL:
        return Counterexample(res.x[widx].reshape(H, n), "terminal", float(res.objective))
    return None


# --- CEGIS ------------------------------------------------------------------------------

ROBUST, INCONCLUSIVE, INFEASIBLE = "robust", "inconclusive", "infeasible"


@dataclass
class CegisOptions:
    max_iter: int = 25
    eps_rob: float = 0.0
    strict_eps: float = 0.0
    extreme_init: bool = False
    milp: MilpOptions = field(default_factory=MilpOptions)


@dataclass
class CegisState:
    bank: list
    iterations: int = 0
    eps_rob: float = 0.0
    history: list = field(default_factory=list)


@dataclass
class CegisResult:
    status: str
    u: np.ndarray | None
    state: CegisState
    objective: float = math.nan
    rho: float = math.nan
    wall_time: float = 0.0
    message: str = ""
    problem: Problem | None = None


def initial_bank(sys, H, extreme=False):
    bank = [np.zeros((H, sys.n))]
    if extreme:
        wl, wh = sys.w_bounds()
        for i in range(sys.n):
            for v in (wl[i], wh[i]):
                if v != 0:
                    w = np.zeros((H, sys.n))
                    w[:, i] = v
                    bank.append(w)
    return bank


def _w_is_zero(sys):
    wl, wh = sys.w_bounds()
    return bool(np.all(wl == 0) and np.all(wh == 0))


def cegis_solve(sys, f, prefix, k, T, cost: CostSpec, terminal: Region | None = None,
                opts: CegisOptions | None = None, bank=None) -> CegisResult:
    """Solve the step problem robustly against a growing bank of disturbance sequences.

    Status "robust": the returned inputs survive every disturbance sequence.
    Status "inconclusive": iteration cap reached, or the bank became infeasible
    after at least one solution; the last solution is returned uncertified.
    Status "infeasible": the first solve (zero disturbance plus initial bank)
    has no solution.
    """
    opts = opts or CegisOptions()
    t0 = time.perf_counter()
    H = T - k
    state = CegisState(list(bank) if bank is not None else initial_bank(sys, H, opts.extreme_init),
                       0, opts.eps_rob)
    last = None
    zero_w = _w_is_zero(sys)
    while state.iterations < opts.max_iter:
        state.iterations += 1
        ts = time.perf_counter()
        prob = build_problem(sys, f, prefix, k, T, cost, state.bank, terminal,
                             eps_rob=opts.eps_rob, strict_eps=opts.strict_eps)
        if prob.infeasible_reason:
            res = None
        else:
            res = solve_milp(prob.model, opts.milp)
        entry = {"iteration": state.iterations, "bank": len(state.bank),
                 "solve_time": time.perf_counter() - ts, **prob.stats}
        if res is None or res.status != OPTIMAL:
            entry["status"] = res.status if res is not None else "infeasible"
            entry["nodes"] = res.nodes if res is not None else 0
            state.history.append(entry)
            if last is None:
                msg = prob.infeasible_reason or f"solver status {entry['status']}"
                return CegisResult(INFEASIBLE, None, state, wall_time=time.perf_counter() - t0,
                                   message=msg, problem=prob)
            u, obj, rho, lprob = last
            return CegisResult(INCONCLUSIVE, u, state, obj, rho, time.perf_counter() - t0,
                               f"bank of {len(state.bank)} sequences became infeasible", lprob)
        u = prob.decode_u(res.x)
        obj = res.objective + prob.offset
        rho = prob.rho(res.x)
        entry.update(status="optimal", nodes=res.nodes, objective=obj, rho=rho)
        last = (u, obj, rho, prob)
        if zero_w:
            state.history.append(entry)
            return CegisResult(ROBUST, u, state, obj, rho, time.perf_counter() - t0, problem=prob)
        ta = time.perf_counter()
        try:
            cx = find_counterexample(sys, f, prefix, k, T, u, terminal, opts.eps_rob,
                                     opts.strict_eps, opts.milp)
        except AdversaryInconclusive as exc:
            entry["adversary_time"] = time.perf_counter() - ta
            state.history.append(entry)
            return CegisResult(INCONCLUSIVE, u, state, obj, rho, time.perf_counter() - t0,
                               str(exc), prob)
        entry["adversary_time"] = time.perf_counter() - ta
        state.history.append(entry)
        if cx is None:
            return CegisResult(ROBUST, u, state, obj, rho, time.perf_counter() - t0, problem=prob)
        entry["counterexample"] = {"kind": cx.kind, "value": cx.value}
        state.bank.append(cx.w)
    u, obj, rho, lprob = last
    return CegisResult(INCONCLUSIVE, u, state, obj, rho, time.perf_counter() - t0,
                       "iteration cap reached", lprob)


__all__ = [
    "Aff", "Trajectory", "primal_trajectory", "adversary_trajectory", "TreeEncoder", "CostSpec",
    "pwl_square", "encode_energy", "energy_pwl_value", "encode_terminal", "Problem",
    "build_problem", "build_problem1", "build_problem2", "Counterexample", "find_counterexample",
    "AdversaryInconclusive", "CegisOptions", "CegisState", "CegisResult", "cegis_solve",
    "initial_bank", "ROBUST", "INCONCLUSIVE", "INFEASIBLE", "EPS_CERT",
]
