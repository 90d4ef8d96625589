"""STL fragment: AST, parser, horizons, Boolean and quantitative semantics,
segment normal form and time-interval decomposition.

Grammar (whitespace-insensitive)::

    formula   := implies
    implies   := disj [ "->" implies ]
    disj      := conj { "|" conj }
    conj      := until { "&" until }
    until     := unary [ ("U" | "U'") interval unary ]
    unary     := "!" unary | ("G" | "F") interval unary | atom
    atom      := "true" | "false" | IDENT | compare | "(" formula ")"
    compare   := linexpr ("<=" | ">=") linexpr
    linexpr   := ["+" | "-"] term { ("+" | "-") term }
    term      := NUMBER [ "*" STATE ] | STATE
    interval  := "[" INT "," INT "]"

STATE names default to x1..xn (1-based); IDENT names resolve through the
``bindings`` mapping (name -> BoolFormula). Temporal operators may not be
nested, and may only be combined with "&" at the top level.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import EPS_STRICT, HPolytope, Region, normalize

# --- AST -----------------------------------------------------------------------


@dataclass(frozen=True)
class Predicate:
    """mu(x) = a.x + b, satisfied when mu(x) >= 0."""
    a: tuple
    b: float
    name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", float(self.b))
        if not any(self.a):
            raise ValueError("predicate needs a nonzero coefficient (use BTrue/BFalse)")

    @property
    def dim(self):
        return len(self.a)

    def value(self, x):
        return np.asarray(x, dtype=float) @ np.array(self.a) + self.b


class BoolFormula:
    pass


@dataclass(frozen=True)
class BTrue(BoolFormula):
    pass


@dataclass(frozen=True)
class BPred(BoolFormula):
    pred: Predicate


@dataclass(frozen=True)
class BNot(BoolFormula):
    child: BoolFormula


@dataclass(frozen=True)
class BAnd(BoolFormula):
    left: BoolFormula
    right: BoolFormula


def BFalse():
    return BNot(BTrue())


def BOr(l, r):
    return BNot(BAnd(BNot(l), BNot(r)))


def BImplies(l, r):
    return BOr(BNot(l), r)


def band_all(items):
    items = list(items)
    if not items:
        return BTrue()
    out = items[0]
    for it in items[1:]:
        out = BAnd(out, it)
    return out


class Formula:
    pass


@dataclass(frozen=True)
class F(Formula):
    a: int
    b: int
    phi: BoolFormula


@dataclass(frozen=True)
class G(Formula):
    a: int
    b: int
    phi: BoolFormula


@dataclass(frozen=True)
class Until(Formula):
    """Standard until: phi1 must hold from the evaluation instant on."""
    a: int
    b: int
    phi1: BoolFormula
    phi2: BoolFormula


@dataclass(frozen=True)
class UntilA(Formula):
    """Anchored until U': phi1 must hold from instant a (relative) on."""
    a: int
    b: int
    phi1: BoolFormula
    phi2: BoolFormula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


TEMPORAL = (F, G, Until, UntilA)


def conj(items):
    items = list(items)
    if not items:
        return None
    out = items[0]
    for it in items[1:]:
        out = And(out, it)
    return out


def conjuncts(f):
    if f is None:
        return []
    if isinstance(f, And):
        return conjuncts(f.left) + conjuncts(f.right)
    return [f]


def _check_interval(a, b):
    if not (isinstance(a, (int, np.integer)) and isinstance(b, (int, np.integer))):
        raise ValueError("interval bounds must be integers")
    if a < 0 or a > b:
        raise ValueError(f"bad interval [{a},{b}]")


def validate(f: Formula):
    for node in conjuncts(f):
        if not isinstance(node, TEMPORAL):
            raise FragmentError("top level must be a conjunction of temporal operators")
        _check_interval(node.a, node.b)


# --- parser -----------------------------------------------------------------------

class STLSyntaxError(ValueError):
    def __init__(self, msg, pos):
        super().__init__(f"{msg} at position {pos}")
        self.pos = pos


class FragmentError(ValueError):
    def __init__(self, msg, span=None):
        super().__init__(msg if span is None else f"{msg} (span {span[0]}-{span[1]})")
        self.span = span


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)
  | (?P<op>->|<=|>=|U'|[()\[\],&|!*+-])
  | (?P<id>[A-Za-z_][A-Za-z_0-9]*)
""", re.VERBOSE)


def _tokenize(text):
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise STLSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            toks.append((kind, m.group(), pos))
        pos = m.end()
    toks.append(("eof", "", len(text)))
    return toks


# marker wrapping temporal nodes while parsing so nesting can be located
@dataclass(frozen=True)
class _T:
    node: Formula
    span: tuple


class _Parser:
    def __init__(self, text, bindings, state_names):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.bindings = bindings or {}
        self.state_names = state_names

    def peek(self, k=0):
        return self.toks[self.i + k]

    def take(self, value=None, kind=None):
        t = self.toks[self.i]
        if value is not None and t[1] != value:
            raise STLSyntaxError(f"expected {value!r}, found {t[1] or 'end of input'!r}", t[2])
        if kind is not None and t[0] != kind:
            raise STLSyntaxError(f"expected {kind}, found {t[1] or 'end of input'!r}", t[2])
        self.i += 1
        return t

    # Boolean combination helpers reject temporal operands
    def _bool(self, x, where):
        if isinstance(x, _T):
            raise FragmentError(f"temporal operator under '{where}' is outside the fragment", x.span)
        return x

    def parse(self):
        x = self.implies()
        t = self.peek()
        if t[0] != "eof":
            raise STLSyntaxError(f"unexpected {t[1]!r}", t[2])
        return x

    def implies(self):
        left = self.disj()
        if self.peek()[1] == "->":
            self.take("->")
            right = self.implies()
            return BImplies(self._bool(left, "->"), self._bool(right, "->"))
        return left

    def disj(self):
        left = self.conj()
        while self.peek()[1] == "|":
            self.take("|")
            right = self.conj()
            left = BOr(self._bool(left, "|"), self._bool(right, "|"))
        return left

    def conj(self):
        items = [self.until()]
        while self.peek()[1] == "&":
            self.take("&")
            items.append(self.until())
        if len(items) == 1:
            return items[0]
        temporal = [x for x in items if isinstance(x, _T) or isinstance(x, _Conj)]
        if not temporal:
            return band_all(items)
        if len(temporal) != len(items):
            bad = next(x for x in items if not (isinstance(x, _T) or isinstance(x, _Conj)))
            raise FragmentError("Boolean formula conjoined with a temporal formula at top level"
                                " is outside the fragment (wrap it in G[0,0] or F[0,0])")
        out = []
        for x in items:
            out.extend(x.items if isinstance(x, _Conj) else [x])
        return _Conj(tuple(out))

    def until(self):
        start = self.peek()[2]
        left = self.unary()
        t = self.peek()
        if t[1] in ("U", "U'"):
            self.take()
            a, b = self.interval()
            right = self.unary()
            l = self._bool(left, t[1])
            r = self._bool(right, t[1])
            node = (Until if t[1] == "U" else UntilA)(a, b, l, r)
            return _T(node, (start, self.peek()[2]))
        return left

    def unary(self):
        t = self.peek()
        if t[1] == "!":
            self.take()
            return BNot(self._bool(self.unary(), "!"))
        if t[0] == "id" and t[1] in ("G", "F") and self.peek(1)[1] == "[":
            self.take()
            a, b = self.interval()
            inner = self.unary()
            if isinstance(inner, (_T, _Conj)):
                span = inner.span if isinstance(inner, _T) else (t[2], self.peek()[2])
                raise FragmentError("nested temporal operators are outside the fragment", span)
            node = (G if t[1] == "G" else F)(a, b, inner)
            return _T(node, (t[2], self.peek()[2]))
        return self.atom()

    def interval(self):
        lb = self.take("[")
        a = self.take(kind="num")
        self.take(",")
        b = self.take(kind="num")
        self.take("]")
        try:
            ai, bi = int(a[1]), int(b[1])
        except ValueError:
            raise STLSyntaxError("interval bounds must be integers", a[2]) from None
        if ai > bi:
            raise STLSyntaxError(f"empty interval [{ai},{bi}]", lb[2])
        return ai, bi

    def atom(self):
        t = self.peek()
        if t[1] == "(":
            self.take("(")
            x = self.implies()
            self.take(")")
            return x
        if t[0] == "id" and t[1] == "true":
            self.take()
            return BTrue()
        if t[0] == "id" and t[1] == "false":
            self.take()
            return BFalse()
        if t[0] == "id" and t[1] in self.bindings and not self._is_state(t[1]):
            self.take()
            return self.bindings[t[1]]
        if t[0] in ("id", "num") or t[1] in ("+", "-"):
            return self.compare()
        raise STLSyntaxError(f"unexpected {t[1] or 'end of input'!r}", t[2])

    def _is_state(self, name):
        return self._state_index(name) is not None

    def _state_index(self, name):
        if self.state_names is not None:
            return self.state_names.index(name) if name in self.state_names else None
        m = re.fullmatch(r"x(\d+)", name)
        if m and int(m.group(1)) >= 1:
            return int(m.group(1)) - 1
        return None

    def linexpr(self):
        coefs, const = {}, 0.0
        sign = 1.0
        if self.peek()[1] in ("+", "-"):
            sign = 1.0 if self.take()[1] == "+" else -1.0
        while True:
            t = self.peek()
            if t[0] == "num":
                self.take()
                val = float(t[1])
                if self.peek()[1] == "*":
                    self.take("*")
                    s = self.take(kind="id")
                    j = self._state_index(s[1])
                    if j is None:
                        raise STLSyntaxError(f"unknown state variable {s[1]!r}", s[2])
                    coefs[j] = coefs.get(j, 0.0) + sign * val
                else:
                    const += sign * val
            elif t[0] == "id":
                j = self._state_index(t[1])
                if j is None:
                    raise STLSyntaxError(f"unknown name {t[1]!r}", t[2])
                self.take()
                coefs[j] = coefs.get(j, 0.0) + sign
            else:
                raise STLSyntaxError(f"expected a term, found {t[1] or 'end of input'!r}", t[2])
            if self.peek()[1] in ("+", "-"):
                sign = 1.0 if self.take()[1] == "+" else -1.0
                continue
            return coefs, const

    def compare(self):
        lhs = self.linexpr()
        t = self.peek()
        if t[1] not in ("<=", ">="):
            raise STLSyntaxError("expected '<=' or '>='", t[2])
        self.take()
        rhs = self.linexpr()
        if t[1] == "<=":
            lhs, rhs = rhs, lhs
        coefs = dict(lhs[0])
        for j, v in rhs[0].items():
            coefs[j] = coefs.get(j, 0.0) - v
        const = lhs[1] - rhs[1]
        return _PendingPred(tuple(sorted(coefs.items())), const, t[2])


@dataclass(frozen=True)
class _Conj:
    items: tuple


@dataclass(frozen=True)
class _PendingPred(BoolFormula):
    """Predicate whose dimension is fixed after parsing."""
    coefs: tuple
    const: float
    pos: int


def _resolve(x, dim):
    if isinstance(x, _PendingPred):
        a = np.zeros(dim)
        for j, v in x.coefs:
            if j >= dim:
                raise STLSyntaxError(f"state index {j + 1} exceeds dimension {dim}", x.pos)
            a[j] += v
        if not np.any(a):
            return BTrue() if x.const >= 0 else BFalse()
        return BPred(Predicate(tuple(a), x.const))
    if isinstance(x, BNot):
        return BNot(_resolve(x.child, dim))
    if isinstance(x, BAnd):
        return BAnd(_resolve(x.left, dim), _resolve(x.right, dim))
    if isinstance(x, (F, G)):
        return type(x)(x.a, x.b, _resolve(x.phi, dim))
    if isinstance(x, (Until, UntilA)):
        return type(x)(x.a, x.b, _resolve(x.phi1, dim), _resolve(x.phi2, dim))
    return x


def _max_index(x):
    if isinstance(x, _PendingPred):
        return max([j for j, _ in x.coefs], default=-1)
    if isinstance(x, BPred):
        return x.pred.dim - 1
    if isinstance(x, BNot):
        return _max_index(x.child)
    if isinstance(x, BAnd):
        return max(_max_index(x.left), _max_index(x.right))
    if isinstance(x, (F, G)):
        return _max_index(x.phi)
    if isinstance(x, (Until, UntilA)):
        return max(_max_index(x.phi1), _max_index(x.phi2))
    return -1


def parse(text: str, bindings: dict | None = None, state_names: Sequence[str] | None = None,
          dim: int | None = None) -> Formula:
    """Parse formula text into a Formula (a conjunction of temporal operators)."""
    p = _Parser(text, bindings, list(state_names) if state_names is not None else None)
    raw = p.parse()
    if isinstance(raw, _T):
        nodes = [raw.node]
    elif isinstance(raw, _Conj):
        nodes = [x.node for x in raw.items]
    else:
        raise FragmentError("formula has no temporal operator; wrap it in G[0,0] or F[0,0]")
    if dim is None:
        dim = len(state_names) if state_names is not None else max(_max_index(n) for n in nodes) + 1
    dim = max(dim, 1)
    return conj([_resolve(n, dim) for n in nodes])


def parse_bool(text, bindings=None, state_names=None, dim=None) -> BoolFormula:
    p = _Parser(text, bindings, list(state_names) if state_names is not None else None)
    raw = p.parse()
    if isinstance(raw, (_T, _Conj)):
        raise FragmentError("expected a Boolean formula")
    if dim is None:
        dim = len(state_names) if state_names is not None else _max_index(raw) + 1
    return _resolve(raw, max(dim, 1))


def to_text(f, state_names=None) -> str:
    """Render a Formula or BoolFormula in the parser's syntax."""
    def name(j):
        return state_names[j] if state_names is not None else f"x{j + 1}"

    def b(x):
        if isinstance(x, BTrue):
            return "true"
        if isinstance(x, BNot) and isinstance(x.child, BTrue):
            return "false"
        if isinstance(x, BPred):
            out = "".join(f" {'-' if v < 0 else '+'} {abs(v)!r}*{name(j)}"
                          for j, v in enumerate(x.pred.a) if v != 0)
            out += f" {'-' if x.pred.b < 0 else '+'} {abs(x.pred.b)!r}"
            return f"({out.lstrip(' +')} >= 0)"
        if isinstance(x, BNot):
            return f"!{b(x.child)}"
        if isinstance(x, BAnd):
            return f"({b(x.left)} & {b(x.right)})"
        raise TypeError(x)

    parts = []
    for node in conjuncts(f) if isinstance(f, Formula) else [f]:
        if isinstance(node, (F, G)):
            parts.append(f"{type(node).__name__}[{node.a},{node.b}]{b(node.phi)}")
        elif isinstance(node, Until):
            parts.append(f"({b(node.phi1)} U[{node.a},{node.b}] {b(node.phi2)})")
        elif isinstance(node, UntilA):
            parts.append(f"({b(node.phi1)} U'[{node.a},{node.b}] {b(node.phi2)})")
        else:
            parts.append(b(node))
    return " & ".join(parts)


# --- horizon and semantics --------------------------------------------------------

def _node_start(node):
    # standard until reads phi1 from the evaluation instant
    if isinstance(node, Until) and not isinstance(node.phi1, BTrue) and node.a > 0:
        return 0
    return node.a


def horizon(f: Formula):
    """(S, T): earliest and latest instants the formula reads."""
    nodes = conjuncts(f)
    if not nodes:
        return 0, 0
    return min(_node_start(n) for n in nodes), max(n.b for n in nodes)


def _states(trace):
    x = getattr(trace, "states", trace)
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def bool_values(phi: BoolFormula, X):
    """Truth value of a Boolean formula at every row of X."""
    if isinstance(phi, BTrue):
        return np.ones(len(X), dtype=bool)
    if isinstance(phi, BPred):
        return phi.pred.value(X) >= 0
    if isinstance(phi, BNot):
        return ~bool_values(phi.child, X)
    if isinstance(phi, BAnd):
        return bool_values(phi.left, X) & bool_values(phi.right, X)
    raise TypeError(f"not a Boolean formula: {phi!r}")


def rob_values(phi: BoolFormula, X):
    """Robustness of a Boolean formula at every row of X."""
    if isinstance(phi, BTrue):
        return np.full(len(X), math.inf)
    if isinstance(phi, BPred):
        return phi.pred.value(X)
    if isinstance(phi, BNot):
        return -rob_values(phi.child, X)
    if isinstance(phi, BAnd):
        return np.minimum(rob_values(phi.left, X), rob_values(phi.right, X))
    raise TypeError(f"not a Boolean formula: {phi!r}")


class TraceTooShort(ValueError):
    pass


def _need(X, k, f):
    _, T = horizon(f)
    if k < 0 or len(X) < k + T + 1:
        raise TraceTooShort(f"trace of length {len(X)} does not cover [{k}, {k + T}]")


def bool_sat(trace, f: Formula, k: int = 0) -> bool:
    X = _states(trace)
    _need(X, k, f)
    for node in conjuncts(f):
        if not _sat_node(X, node, k):
            return False
    return True


def _sat_node(X, node, k):
    if isinstance(node, F):
        return bool(np.any(bool_values(node.phi, X[k + node.a:k + node.b + 1])))
    if isinstance(node, G):
        return bool(np.all(bool_values(node.phi, X[k + node.a:k + node.b + 1])))
    if isinstance(node, (Until, UntilA)):
        s1 = bool_values(node.phi1, X)
        s2 = bool_values(node.phi2, X)
        first = k if isinstance(node, Until) else k + node.a
        for kp in range(k + node.a, k + node.b + 1):
            if s2[kp] and np.all(s1[first:kp + 1]):
                return True
        return False
    raise TypeError(node)


def robustness(trace, f: Formula, k: int = 0) -> float:
    X = _states(trace)
    _need(X, k, f)
    return float(min(_rob_node(X, node, k) for node in conjuncts(f)))


def _rob_node(X, node, k):
    if isinstance(node, F):
        return float(np.max(rob_values(node.phi, X[k + node.a:k + node.b + 1])))
    if isinstance(node, G):
        return float(np.min(rob_values(node.phi, X[k + node.a:k + node.b + 1])))
    if isinstance(node, (Until, UntilA)):
        r1 = rob_values(node.phi1, X)
        r2 = rob_values(node.phi2, X)
        first = k if isinstance(node, Until) else k + node.a
        best = -math.inf
        for kp in range(k + node.a, k + node.b + 1):
            best = max(best, min(r2[kp], float(np.min(r1[first:kp + 1]))))
        return best
    raise TypeError(node)


# --- robustness DAG used by the MILP encoder ----------------------------------------
#
# Nodes: ("const", v) | ("pred", t, a, b, negated) | ("min", [..]) | ("max", [..])
# where a "pred" leaf stands for the affine score a.x_t + b.

def _bool_tree(phi, t, neg=False):
    if isinstance(phi, BTrue):
        return ("const", -math.inf if neg else math.inf)
    if isinstance(phi, BPred):
        a = np.array(phi.pred.a)
        if neg:
            return ("pred", t, -a, -phi.pred.b, True)
        return ("pred", t, a, phi.pred.b, False)
    if isinstance(phi, BNot):
        return _bool_tree(phi.child, t, not neg)
    if isinstance(phi, BAnd):
        kids = [_bool_tree(phi.left, t, neg), _bool_tree(phi.right, t, neg)]
        return ("max" if neg else "min", kids)
    raise TypeError(phi)


def _node_tree(node, k):
    if isinstance(node, F):
        return ("max", [_bool_tree(node.phi, t) for t in range(k + node.a, k + node.b + 1)])
    if isinstance(node, G):
        return ("min", [_bool_tree(node.phi, t) for t in range(k + node.a, k + node.b + 1)])
    if isinstance(node, (Until, UntilA)):
        first = k if isinstance(node, Until) else k + node.a
        opts = []
        for kp in range(k + node.a, k + node.b + 1):
            kids = [_bool_tree(node.phi2, kp)]
            kids += [_bool_tree(node.phi1, t) for t in range(first, kp + 1)]
            opts.append(("min", kids))
        return ("max", opts)
    raise TypeError(node)


def rho_tree(f: Formula, k: int = 0):
    return simplify_tree(("min", [_node_tree(n, k) for n in conjuncts(f)]))


def simplify_tree(node):
    """Flatten nested min/max and drop neutral constants."""
    kind = node[0]
    if kind in ("const", "pred"):
        return node
    kids = []
    for c in node[1]:
        c = simplify_tree(c)
        if c[0] == kind:
            kids.extend(c[1])
        else:
            kids.append(c)
    consts = [c[1] for c in kids if c[0] == "const"]
    rest = [c for c in kids if c[0] != "const"]
    if consts:
        v = min(consts) if kind == "min" else max(consts)
        if (kind == "min" and v == -math.inf) or (kind == "max" and v == math.inf):
            return ("const", v)
        neutral = math.inf if kind == "min" else -math.inf
        if v != neutral:
            rest.append(("const", v))
    if not rest:
        return ("const", math.inf if kind == "min" else -math.inf)
    if len(rest) == 1:
        return rest[0]
    return (kind, rest)


def eval_tree(node, X):
    kind = node[0]
    if kind == "const":
        return node[1]
    if kind == "pred":
        _, t, a, b, _neg = node
        return float(X[t] @ a + b)
    vals = [eval_tree(c, X) for c in node[1]]
    return min(vals) if kind == "min" else max(vals)


# --- regions from Boolean formulas ----------------------------------------------------

def _nnf_dnf(phi, neg=False):
    """DNF as a list of conjunctions; each conjunction is a list of (a, b, strict)
    meaning a.x + b >= 0 (strict=False) or a.x + b > 0 (strict=True)."""
    if isinstance(phi, BTrue):
        return [] if neg else [[]]
    if isinstance(phi, BPred):
        a = np.array(phi.pred.a)
        if neg:
            return [[(-a, -phi.pred.b, True)]]
        return [[(a, phi.pred.b, False)]]
    if isinstance(phi, BNot):
        return _nnf_dnf(phi.child, not neg)
    if isinstance(phi, BAnd):
        l = _nnf_dnf(phi.left, neg)
        r = _nnf_dnf(phi.right, neg)
        if neg:
            return l + r
        return [x + y for x in l for y in r]
    raise TypeError(phi)


def bool_to_region(phi: BoolFormula, dim: int, eps_strict=EPS_STRICT) -> Region:
    """Union of closed polytopes, one per DNF disjunct (strict inequalities
    are closed with a margin of eps_strict)."""
    parts = []
    for clause in _nnf_dnf(phi):
        if not clause:
            parts.append(HPolytope.universe(dim))
            continue
        A = np.array([-a for a, _, _ in clause]).reshape(-1, dim)
        b = np.array([bb - (eps_strict if strict else 0.0) for _, bb, strict in clause])
        p = normalize(HPolytope(A, b))
        if not p.is_empty():
            parts.append(p)
    return Region(parts, dim)


def region_to_bool(r: Region) -> BoolFormula:
    """Boolean formula of a region: a disjunction over parts of row conjunctions."""
    out = None
    for p in r.parts:
        lits = [BPred(Predicate(tuple(-row), rhs)) for row, rhs in zip(p.A, p.b)]
        c = band_all(lits)
        out = c if out is None else BOr(out, c)
    return out if out is not None else BFalse()


def box_bool(lo, hi) -> BoolFormula:
    return region_to_bool(Region.of(HPolytope.box(lo, hi)))


# --- segments -------------------------------------------------------------------------

@dataclass
class Segment:
    index: int
    op: str            # "G", "F" or "U" (anchored until)
    a: int
    b: int
    phi: BoolFormula   # operand for G/F, phi2 for U
    phi1: BoolFormula | None = None
    region: Region | None = None
    region1: Region | None = None
    source: int | None = None

    @property
    def regions(self):
        return (self.region1, self.region) if self.op == "U" else (self.region,)

    def formula(self) -> Formula:
        if self.op == "G":
            return G(self.a, self.b, self.phi)
        if self.op == "F":
            return F(self.a, self.b, self.phi)
        return UntilA(self.a, self.b, self.phi1, self.phi)

    def with_interval(self, a, b, index):
        return Segment(index, self.op, a, b, self.phi, self.phi1, self.region, self.region1,
                       self.source if self.source is not None else self.index)


@dataclass
class SegmentedFormula:
    segments: list
    dim: int

    def __post_init__(self):
        for k, s in enumerate(self.segments, start=1):
            if s.index != k:
                raise ValueError("segment indices must be 1..N without gaps")

    @property
    def N(self):
        return len(self.segments)

    @property
    def indices(self):
        return frozenset(range(1, self.N + 1))

    def seg(self, i) -> Segment:
        return self.segments[i - 1]

    def horizon(self):
        if not self.segments:
            return 0, 0
        return min(s.a for s in self.segments), max(s.b for s in self.segments)

    def effective(self, k):
        return frozenset(s.index for s in self.segments if s.a <= k <= s.b)

    def before(self, k):
        return frozenset(s.index for s in self.segments if s.b < k)

    def after(self, k):
        return frozenset(s.index for s in self.segments if k < s.a)

    def formula(self):
        return conj([s.formula() for s in self.segments])

    def bool_sat(self, trace, k=0):
        f = self.formula()
        return True if f is None else bool_sat(trace, f, k)

    def robustness(self, trace, k=0):
        f = self.formula()
        return math.inf if f is None else robustness(trace, f, k)


def to_segments(f: Formula, dim: int | None = None, eps_strict=EPS_STRICT) -> SegmentedFormula:
    """Segment normal form: one segment per temporal conjunct.

    A standard until with a > 0 becomes G[0,a-1] phi1 followed by the anchored
    until on [a, b], which is semantically identical at instant 0.
    """
    nodes = conjuncts(f)
    if dim is None:
        dim = max(_max_index(n) for n in nodes) + 1 if nodes else 1
    segs = []

    def add(op, a, b, phi, phi1=None):
        s = Segment(len(segs) + 1, op, a, b, phi, phi1,
                    region=bool_to_region(phi, dim, eps_strict),
                    region1=bool_to_region(phi1, dim, eps_strict) if phi1 is not None else None)
        s.source = s.index
        segs.append(s)

    for node in nodes:
        if isinstance(node, (F, G)):
            add(type(node).__name__, node.a, node.b, node.phi)
        elif isinstance(node, Until):
            if isinstance(node.phi1, BTrue):
                add("F", node.a, node.b, node.phi2)
                continue
            if node.a > 0:
                add("G", 0, node.a - 1, node.phi1)
            add("U", node.a, node.b, node.phi2, node.phi1)
        elif isinstance(node, UntilA):
            add("U", node.a, node.b, node.phi2, node.phi1)
        else:
            raise FragmentError(f"not a temporal conjunct: {node!r}")
    return SegmentedFormula(segs, dim)


# --- decomposition -----------------------------------------------------------------------

@dataclass
class Stage:
    formula: SegmentedFormula
    S: int
    T: int


@dataclass
class Decomposition:
    stages: list
    source: SegmentedFormula = field(repr=False, default=None)

    @property
    def N(self):
        return len(self.stages)

    def suffix(self, i) -> SegmentedFormula:
        """Conjunction of stages i+1..N (1-based i) as one segmented formula."""
        segs = []
        for st in self.stages[i:]:
            for s in st.formula.segments:
                segs.append(s.with_interval(s.a, s.b, len(segs) + 1))
        dim = self.stages[0].formula.dim
        return SegmentedFormula(segs, dim)


class DecompositionError(ValueError):
    def __init__(self, msg, segment=None):
        super().__init__(msg)
        self.segment = segment


def decompose(seg: SegmentedFormula, cuts: Sequence[int] = ()) -> Decomposition:
    S, T = seg.horizon()
    cuts = [int(c) for c in cuts]
    if any(c2 <= c1 for c1, c2 in zip(cuts, cuts[1:])):
        raise DecompositionError("cuts must be strictly increasing")
    if any(not (S < c < T) for c in cuts):
        raise DecompositionError(f"cuts must lie strictly inside ({S}, {T})")
    bounds = [S] + [c + 1 for c in cuts]
    ends = cuts + [T]
    stages = [[] for _ in bounds]
    for s in seg.segments:
        for j, (lo, hi) in enumerate(zip(bounds, ends)):
            a, b = max(s.a, lo), min(s.b, hi)
            if a > b:
                continue
            if (a, b) != (s.a, s.b) and s.op != "G":
                raise DecompositionError(
                    f"segment {s.index} ({s.op}[{s.a},{s.b}]) straddles a cut", s.index)
            stages[j].append(s.with_interval(a, b, len(stages[j]) + 1))
    out = [Stage(SegmentedFormula(segs, seg.dim), lo, hi)
           for segs, lo, hi in zip(stages, bounds, ends)]
    return Decomposition(out, seg)


__all__ = [
    "Predicate", "BoolFormula", "BTrue", "BPred", "BNot", "BAnd", "BFalse", "BOr", "BImplies",
    "Formula", "F", "G", "Until", "UntilA", "And", "conj", "conjuncts", "parse", "parse_bool",
    "to_text", "horizon", "bool_sat", "robustness", "bool_values", "rob_values", "rho_tree",
    "eval_tree", "simplify_tree", "bool_to_region", "region_to_bool", "box_bool", "Segment",
    "SegmentedFormula", "to_segments", "Stage", "Decomposition", "decompose",
    "STLSyntaxError", "FragmentError", "DecompositionError", "TraceTooShort", "validate",
]
