"""Remaining-set combinatorics and backward feasible-set recursions.

X[k, I] holds the states from which the I-remaining task can be completed
(nominal table), or completed against magnified disturbances (robust table,
started at instant s). Terminal sets of a decomposition are read off robust
tables at the stage boundaries.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
from dataclasses import dataclass, field

from . import __version__
from .geometry import HPolytope, Region, one_step, prune, region_difference, \
    region_intersect, robust_one_step
from .stl import Decomposition, SegmentedFormula, to_text

log = logging.getLogger(__name__)


def _must_and_optional(seg: SegmentedFormula, k):
    eff = seg.effective(k)
    must = set(seg.after(k))
    optional = set()
    for i in eff:
        s = seg.seg(i)
        if s.op == "G" or (s.op == "U" and k == s.a):
            must.add(i)
        else:
            optional.add(i)
    return frozenset(must), sorted(optional)


def _key(I):
    return (len(I), tuple(sorted(I)))


def enumerate_remaining(seg: SegmentedFormula, k: int):
    """All remaining sets at instant k, in a fixed order."""
    must, optional = _must_and_optional(seg, k)
    out = []
    for r in range(len(optional) + 1):
        for extra in itertools.combinations(optional, r):
            out.append(must | frozenset(extra))
    return sorted(out, key=_key, reverse=True)


def is_remaining(seg, I, k):
    must, optional = _must_and_optional(seg, k)
    return must <= I and I <= must | set(optional)


def successors(seg: SegmentedFormula, I, k: int):
    """succ(I, k): remaining sets at k+1 contained in I (non-strictly).

    Only segments effective at k can be discharged by the step k -> k+1.
    """
    I = frozenset(I)
    must, optional = _must_and_optional(seg, k + 1)
    must = must | (I - seg.effective(k))
    if not must <= I:
        return []
    free = [i for i in optional if i in I]
    out = []
    for r in range(len(free) + 1):
        for extra in itertools.combinations(free, r):
            out.append(must | frozenset(extra))
    return sorted(out, key=_key, reverse=True)


def sat_u(seg, I, Ip):
    return frozenset(i for i in I if seg.seg(i).op == "U" and i not in Ip)


def h_region(seg: SegmentedFormula, I, Ip, k: int) -> Region:
    """H_k(I, I'): where the state must be at k for the transition I -> I'."""
    d = seg.dim
    out = Region([HPolytope.universe(d)], d)
    for i in sorted(frozenset(I) & seg.effective(k)):
        s = seg.seg(i)
        if s.op == "G":
            r = s.region
        elif s.op == "F":
            if i in Ip:
                continue
            r = s.region
        elif i not in Ip:
            r = region_intersect(s.region1, s.region)
        else:
            r = region_difference(s.region1, s.region)
        out = region_intersect(out, r)
        if not out.parts:
            break
    return out


@dataclass
class FeasibleTable:
    sets: dict
    k0: int
    T: int
    s: int | None = None
    meta: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.sets[key]

    def get(self, k, I):
        return self.sets.get((k, frozenset(I)))

    def keys_at(self, k):
        return sorted((I for (kk, I) in self.sets if kk == k), key=_key, reverse=True)


def _reachable_keys(seg, k0, T, I0=None):
    layers = {k0: [frozenset(I0)] if I0 is not None else enumerate_remaining(seg, k0)}
    for k in range(k0, T):
        nxt = set()
        for I in layers[k]:
            nxt.update(successors(seg, I, k))
        layers[k + 1] = sorted(nxt, key=_key, reverse=True)
    return layers


def _recursion(seg, sys, k0, T, step, I0=None, merge=True):
    layers = _reachable_keys(seg, k0, T, I0)
    sets = {}
    inner = False
    for I in layers[T]:
        r = region_intersect(h_region(seg, I, frozenset(), T), Region.of(sys.X))
        sets[(T, I)] = prune(r, merge=merge)
    for k in range(T - 1, k0 - 1, -1):
        pre_cache = {}
        for I in layers[k]:
            parts = []
            for Ip in successors(seg, I, k):
                H = h_region(seg, I, Ip, k)
                if not H.parts:
                    continue
                if Ip not in pre_cache:
                    pre_cache[Ip] = step(sets[(k + 1, Ip)], k)
                    inner = inner or pre_cache[Ip].meta.get("inner", False)
                parts.extend(region_intersect(H, pre_cache[Ip]).parts)
            sets[(k, I)] = prune(Region(parts, seg.dim), merge=merge)
        log.debug("k=%d: %s", k, {tuple(sorted(I)): len(sets[(k, I)]) for I in layers[k]})
    return sets, inner


def feasible_sets(seg: SegmentedFormula, sys, k0: int = 0, T: int | None = None,
                  merge=True) -> FeasibleTable:
    """Nominal I-remaining feasible sets for every reachable (k, I), k0 <= k <= T."""
    T = seg.horizon()[1] if T is None else T
    sets, _ = _recursion(seg, sys, k0, T, lambda target, k: one_step(sys, target),
                         merge=merge)
    return FeasibleTable(sets, k0, T)


def robust_feasible_sets(seg: SegmentedFormula, sys, s: int, T: int | None = None,
                         I0=None, merge=True) -> FeasibleTable:
    """Robust I-remaining feasible sets started at instant s.

    The backward step at instant k erodes by h(W, s) = sys.magnified(k - s).
    """
    T = seg.horizon()[1] if T is None else T
    if s > T:
        raise ValueError("start instant after the horizon")

    def step(target, k):
        return robust_one_step(sys, target, sys.magnified(k - s))

    sets, inner = _recursion(seg, sys, s, T, step, I0=I0, merge=merge)
    return FeasibleTable(sets, s, T, s=s, meta={"inner": inner})


class TerminalSetError(RuntimeError):
    def __init__(self, boundary):
        super().__init__(f"decomposition infeasible at boundary {boundary}: empty terminal set")
        self.boundary = boundary


@dataclass
class StagePlan:
    decomposition: Decomposition
    terminals: list            # Region per boundary i = 1..N-1, then X for the last stage
    provenance: dict = field(default_factory=dict)

    def terminal(self, i):
        """Terminal region for stage i (1-based)."""
        return self.terminals[i - 1]

    def to_json(self):
        d = self.decomposition
        return json.dumps({
            "provenance": self.provenance,
            "stages": [{"S": st.S, "T": st.T} for st in d.stages],
            "terminals": [r.to_dict() for r in self.terminals],
        }, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text, decomposition):
        dct = json.loads(text)
        stages = [(st["S"], st["T"]) for st in dct["stages"]]
        if stages != [(st.S, st.T) for st in decomposition.stages]:
            raise ValueError("stage plan does not match the decomposition")
        regions = [Region.from_dict(r) for r in dct["terminals"]]
        return cls(decomposition, regions, dct.get("provenance", {}))


def provenance(dec: Decomposition, sys, state_names=None):
    src = dec.source.formula() if dec.source is not None else None
    ftxt = to_text(src, state_names) if src is not None else ""
    cuts = [st.T for st in dec.stages[:-1]]
    fh = hashlib.sha256(f"{ftxt}|{cuts}".encode()).hexdigest()[:16]
    return {"formula_hash": fh, "system_hash": sys.digest(), "L_mode": sys.lipschitz_mode,
            "L": sys.L, "cuts": cuts, "version": __version__}


def terminal_sets(dec: Decomposition, sys, merge=True) -> StagePlan:
    """Inner approximations of the stage terminal sets; the last stage gets X."""
    terminals = []
    for i in range(1, dec.N):
        suffix = dec.suffix(i)
        s = dec.stages[i - 1].T
        T = suffix.horizon()[1]
        table = robust_feasible_sets(suffix, sys, s, T, I0=suffix.indices, merge=merge)
        reg = table.get(s, suffix.indices)
        if reg is None or not reg.parts:
            raise TerminalSetError(i)
        reg.meta["inner"] = True
        terminals.append(reg)
    terminals.append(Region.of(sys.X))
    return StagePlan(dec, terminals, provenance(dec, sys))


__all__ = [
    "enumerate_remaining", "is_remaining", "successors", "sat_u", "h_region", "FeasibleTable",
    "feasible_sets", "robust_feasible_sets", "StagePlan", "terminal_sets", "TerminalSetError",
    "provenance",
]
