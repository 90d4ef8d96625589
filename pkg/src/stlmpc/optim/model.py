"""LP / MILP model containers and an LP-style text format."""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

LE, EQ, GE = "<=", "==", ">="
_RELS = (LE, EQ, GE)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITER_LIMIT = "iter_limit"


class ModelError(ValueError):
    pass


@dataclass
class LpModel:
    """min (or max) c.x  s.t.  A x (rel) rhs,  lo <= x <= hi."""

    c: np.ndarray
    A: np.ndarray
    rel: np.ndarray
    rhs: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    sense: str = "min"
    names: list | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.rhs = np.asarray(self.rhs, dtype=float).ravel()
        self.A = np.asarray(self.A, dtype=float).reshape(self.rhs.size, n)
        self.rel = np.asarray(self.rel, dtype="<U2").ravel()
        self.lo = np.asarray(self.lo, dtype=float).ravel()
        self.hi = np.asarray(self.hi, dtype=float).ravel()
        m = self.A.shape[0]
        if self.rhs.size != m or self.rel.size != m:
            raise ModelError("row data length mismatch")
        if self.lo.size != n or self.hi.size != n:
            raise ModelError("bound length mismatch")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.c))
                and np.all(np.isfinite(self.rhs))):
            raise ModelError("non-finite coefficient")
        if np.any(self.lo > self.hi):
            raise ModelError("lo > hi for some variable")
        if not set(self.rel.tolist()) <= set(_RELS):
            raise ModelError("unknown relation")
        if self.sense not in ("min", "max"):
            raise ModelError("sense must be 'min' or 'max'")

    @property
    def n(self):
        return self.c.size

    @property
    def m(self):
        return self.A.shape[0]

    def var_names(self):
        return self.names if self.names is not None else [f"x{j}" for j in range(self.n)]

    def violation(self, x):
        """Largest absolute constraint or bound violation of point x."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.m:
            act = self.A @ x
            r = act - self.rhs
            le = np.where(self.rel == LE, np.maximum(r, 0), 0)
            ge = np.where(self.rel == GE, np.maximum(-r, 0), 0)
            eq = np.where(self.rel == EQ, np.abs(r), 0)
            worst = float(max(le.max(), ge.max(), eq.max()))
        worst = max(worst, float(np.max(np.maximum(self.lo - x, 0), initial=0)))
        worst = max(worst, float(np.max(np.maximum(x - self.hi, 0), initial=0)))
        return worst


@dataclass
class MilpModel(LpModel):
    integer: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        if self.integer is None:
            self.integer = np.zeros(self.n, dtype=bool)
        self.integer = np.asarray(self.integer, dtype=bool).ravel()
        if self.integer.size != self.n:
            raise ModelError("integrality mask length mismatch")
        ints = self.integer
        if np.any(self.lo[ints] < 0) or np.any(self.hi[ints] > 1):
            raise ModelError("binary variables need bounds within [0, 1]")

    def relaxation(self):
        return LpModel(self.c, self.A, self.rel, self.rhs, self.lo, self.hi,
                       self.sense, self.names)


@dataclass
class SolveResult:
    status: str
    x: np.ndarray | None = None
    objective: float = math.nan
    nodes: int = 0
    iterations: int = 0
    wall_time: float = 0.0
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.status == OPTIMAL


class ModelBuilder:
    """Incremental construction of a (MI)LP with sparse rows.

    Rows are kept as (indices, values) pairs and densified once in
    :meth:`build`, which keeps encoders free of column bookkeeping.
    """

    def __init__(self):
        self.lo = []
        self.hi = []
        self.integer = []
        self.names = []
        self.obj = {}
        self.rows = []
        self.rel = []
        self.rhs = []
        self.infeasible_reason = None

    @property
    def n(self):
        return len(self.lo)

    def add_var(self, lo=-math.inf, hi=math.inf, binary=False, name=None):
        if binary:
            lo, hi = max(lo, 0.0), min(hi, 1.0)
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        self.integer.append(bool(binary))
        self.names.append(name or f"v{len(self.lo) - 1}")
        return len(self.lo) - 1

    def add_vars(self, k, lo=-math.inf, hi=math.inf, binary=False, prefix="v"):
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (k,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (k,))
        return np.array([self.add_var(lo[i], hi[i], binary, f"{prefix}{i}")
                         for i in range(k)], dtype=int)

    def add_row(self, idx, val, rel, rhs):
        idx = np.asarray(idx, dtype=int).ravel()
        val = np.asarray(val, dtype=float).ravel()
        keep = val != 0
        idx, val = idx[keep], val[keep]
        if idx.size == 0:
            ok = {LE: 0 <= rhs + 1e-9, GE: 0 >= rhs - 1e-9, EQ: abs(rhs) <= 1e-9}[rel]
            if not ok and self.infeasible_reason is None:
                self.infeasible_reason = f"constant row 0 {rel} {rhs}"
            return
        self.rows.append((idx, val))
        self.rel.append(rel)
        self.rhs.append(float(rhs))

    def add_objective(self, idx, val):
        for i, v in zip(np.atleast_1d(idx), np.atleast_1d(val)):
            self.obj[int(i)] = self.obj.get(int(i), 0.0) + float(v)

    def build(self, sense="min"):
        n = self.n
        A = np.zeros((len(self.rows), n))
        for r, (idx, val) in enumerate(self.rows):
            np.add.at(A[r], idx, val)
        c = np.zeros(n)
        for i, v in self.obj.items():
            c[i] += v
        return MilpModel(c, A, np.array(self.rel, dtype="<U2"), np.array(self.rhs),
                         np.array(self.lo), np.array(self.hi), sense, list(self.names),
                         integer=np.array(self.integer, dtype=bool))


# --- LP text format -------------------------------------------------------

def _num(v):
    if v == math.inf:
        return "inf"
    if v == -math.inf:
        return "-inf"
    return repr(float(v))


def _terms(names, coefs):
    parts = []
    for name, v in zip(names, coefs):
        parts.append(f"{'+' if v >= 0 else '-'} {_num(abs(v))} {name}")
    return " ".join(parts) if parts else "+ 0"


def dump_lp(model: LpModel) -> str:
    """Serialize a model to the LP-style text format (see README)."""
    names = model.var_names()
    out = ["\\ stlmpc model", "Maximize" if model.sense == "max" else "Minimize"]
    nz = np.flatnonzero(model.c)
    out.append(" obj: " + _terms([names[j] for j in nz], model.c[nz]))
    out.append("Subject To")
    for r in range(model.m):
        nz = np.flatnonzero(model.A[r])
        out.append(f" c{r}: " + _terms([names[j] for j in nz], model.A[r, nz])
                   + f" {model.rel[r]} {_num(model.rhs[r])}")
    out.append("Bounds")
    for j in range(model.n):
        out.append(f" {_num(model.lo[j])} <= {names[j]} <= {_num(model.hi[j])}")
    ints = getattr(model, "integer", None)
    if ints is not None and ints.any():
        out.append("Binaries")
        out.append(" " + " ".join(names[j] for j in np.flatnonzero(ints)))
    out.append("End")
    return "\n".join(out) + "\n"


def _parse_float(tok):
    return float(tok)


def _parse_terms(toks, index):
    coefs = {}
    if toks == ["+", "0"]:
        return coefs
    i = 0
    while i < len(toks):
        sign = -1.0 if toks[i] == "-" else 1.0
        if toks[i] not in "+-":
            raise ModelError(f"bad term near {toks[i:]}")
        val = _parse_float(toks[i + 1])
        name = toks[i + 2]
        if name == "0" and val == 0:
            i += 2
            continue
        coefs[index(name)] = coefs.get(index(name), 0.0) + sign * val
        i += 3
    return coefs


def load_lp(text: str) -> MilpModel:
    """Parse text produced by :func:`dump_lp`."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("\\")]
    section = None
    sense = "min"
    obj_line, row_lines, bound_lines, bin_names = None, [], [], []
    for ln in lines:
        low = ln.lower()
        if low in ("minimize", "maximize"):
            sense = "min" if low == "minimize" else "max"
            section = "obj"
        elif low == "subject to":
            section = "rows"
        elif low == "bounds":
            section = "bounds"
        elif low == "binaries":
            section = "bin"
        elif low == "end":
            break
        elif section == "obj":
            obj_line = ln
        elif section == "rows":
            row_lines.append(ln)
        elif section == "bounds":
            bound_lines.append(ln)
        elif section == "bin":
            bin_names.extend(ln.split())
    names = []
    for ln in bound_lines:
        toks = ln.split()
        names.append(toks[2])
    pos = {nm: j for j, nm in enumerate(names)}

    def index(nm):
        if nm not in pos:
            raise ModelError(f"unknown variable {nm}")
        return pos[nm]

    n = len(names)
    lo = np.array([_parse_float(ln.split()[0]) for ln in bound_lines]) if n else np.zeros(0)
    hi = np.array([_parse_float(ln.split()[4]) for ln in bound_lines]) if n else np.zeros(0)
    c = np.zeros(n)
    if obj_line is not None:
        for j, v in _parse_terms(obj_line.split(":", 1)[1].split(), index).items():
            c[j] = v
    A = np.zeros((len(row_lines), n))
    rel, rhs = [], []
    for r, ln in enumerate(row_lines):
        toks = ln.split(":", 1)[1].split()
        rel.append(toks[-2])
        rhs.append(_parse_float(toks[-1]))
        for j, v in _parse_terms(toks[:-2], index).items():
            A[r, j] = v
    integer = np.zeros(n, dtype=bool)
    for nm in bin_names:
        integer[index(nm)] = True
    return MilpModel(c, A, np.array(rel, dtype="<U2"), np.array(rhs), lo, hi, sense,
                     names, integer=integer)
