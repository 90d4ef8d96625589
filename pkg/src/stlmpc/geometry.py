"""H-polytopes, finite unions of them, and the set algebra used by the
backward reachability recursions.

All LPs go through the in-repo simplex (:mod:`stlmpc.optim`). Polytopes are
small (a handful of dimensions, tens of rows), so every operation is done
densely and eagerly.
"""
from __future__ import annotations

import json
import math

import numpy as np

from .optim import LE, OPTIMAL, UNBOUNDED, INFEASIBLE, LpModel, solve_lp

EPS_STRICT = 1e-6   # closes strict complements: a.x > b  ->  a.x >= b + EPS_STRICT
EPS_MEM = 1e-9      # membership tolerance per halfspace
EPS_RED = 1e-9      # redundancy / containment tolerance
THIN = 1e-8         # parts with a smaller Chebyshev radius are dropped by prune()
_ROUND = 12


class GeometryError(ValueError):
    pass


def _lp_max(c, A, b):
    """max c.x s.t. A x <= b with free x. Returns (status, value, x)."""
    d = len(c)
    if A.shape[0] == 0:
        if np.allclose(c, 0):
            return OPTIMAL, 0.0, np.zeros(d)
        return UNBOUNDED, math.inf, None
    res = solve_lp(LpModel(c, A, [LE] * A.shape[0], b, np.full(d, -np.inf),
                           np.full(d, np.inf), sense="max"))
    if res.status == OPTIMAL:
        return OPTIMAL, res.objective, res.x
    if res.status == UNBOUNDED:
        return UNBOUNDED, math.inf, None
    if res.status == INFEASIBLE:
        return INFEASIBLE, -math.inf, None
    raise GeometryError(f"LP failure in geometry oracle: {res.status} {res.message}")


class HPolytope:
    """{x : A x <= b}. Treat instances as immutable."""

    def __init__(self, A, b, normalized=False, meta=None):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float).ravel()
        if A.ndim != 2:
            raise GeometryError("A must be a 2-D array")
        if A.shape[0] != b.size:
            raise GeometryError("A and b row counts differ")
        if not np.all(np.isfinite(A)):
            raise GeometryError("non-finite entry in A")
        self.A = A
        self.b = b
        self._normalized = normalized
        self._empty = None
        self.meta = dict(meta or {})

    # -- constructors -----------------------------------------------------
    @classmethod
    def box(cls, lo, hi):
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        d = lo.size
        eye = np.eye(d)
        rows, rhs = [], []
        for i in range(d):
            if np.isfinite(hi[i]):
                rows.append(eye[i]); rhs.append(hi[i])
            if np.isfinite(lo[i]):
                rows.append(-eye[i]); rhs.append(-lo[i])
        return cls(np.array(rows).reshape(-1, d), np.array(rhs))

    @classmethod
    def universe(cls, d):
        return cls(np.zeros((0, d)), np.zeros(0), normalized=True)

    @classmethod
    def empty(cls, d):
        e = np.zeros(d)
        e[0] = 1.0
        p = cls(np.vstack([e, -e]), np.array([-1.0, -1.0]), normalized=True)
        p._empty = True
        return p

    @classmethod
    def from_dict(cls, dct):
        A = np.asarray(dct["A"], dtype=float)
        b = np.asarray(dct["b"], dtype=float)
        if A.size == 0:
            A = A.reshape(0, int(dct.get("dim", 0)))
        return cls(A, b)

    def to_dict(self):
        return {"dim": self.dim, "A": self.A.tolist(), "b": self.b.tolist()}

    # -- basic queries ----------------------------------------------------
    @property
    def dim(self):
        return self.A.shape[1]

    @property
    def nrows(self):
        return self.A.shape[0]

    def __repr__(self):
        return f"HPolytope(dim={self.dim}, rows={self.nrows})"

    def contains(self, x, tol=EPS_MEM):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise GeometryError("dimension mismatch")
        if self.nrows == 0:
            return np.ones(x.shape[:-1], dtype=bool) if x.ndim > 1 else True
        ok = np.all(x @ self.A.T <= self.b + tol, axis=-1)
        return ok if x.ndim > 1 else bool(ok)

    def is_empty(self):
        if self._empty is None:
            st, _, _ = _lp_max(np.zeros(self.dim), self.A, self.b)
            self._empty = st == INFEASIBLE
        return self._empty

    def support(self, direction):
        """sup { direction . x : x in self } (inf if unbounded, -inf if empty)."""
        st, val, _ = _lp_max(np.asarray(direction, dtype=float), self.A, self.b)
        return val

    def argmax(self, direction):
        return _lp_max(np.asarray(direction, dtype=float), self.A, self.b)[2]

    def bounding_box(self):
        d = self.dim
        lo, hi = np.empty(d), np.empty(d)
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            hi[i] = self.support(e)
            lo[i] = -self.support(-e)
        return lo, hi

    def is_bounded(self):
        lo, hi = self.bounding_box()
        return bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))

    def box_bounds(self):
        """(lo, hi) if every row is axis-aligned, else None."""
        A = self.A
        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        for row, rhs in zip(A, self.b):
            nz = np.flatnonzero(np.abs(row) > 0)
            if nz.size != 1:
                return None
            j = nz[0]
            if row[j] > 0:
                hi[j] = min(hi[j], rhs / row[j])
            else:
                lo[j] = max(lo[j], rhs / row[j])
        return lo, hi

    def is_box(self):
        return self.box_bounds() is not None

    def chebyshev_center(self):
        """Center and radius of the largest inscribed ball.

        The radius is capped at 1e6 so unbounded sets still give an answer;
        an empty polytope returns (None, -inf).
        """
        d = self.dim
        if self.nrows == 0:
            return np.zeros(d), 1e6
        norms = np.linalg.norm(self.A, axis=1)
        A = np.hstack([self.A, norms[:, None]])
        c = np.zeros(d + 1)
        c[-1] = 1.0
        res = solve_lp(LpModel(c, A, [LE] * self.nrows, self.b,
                               np.r_[np.full(d, -np.inf), -1.0],
                               np.r_[np.full(d, np.inf), 1e6], sense="max"))
        if res.status != OPTIMAL or res.x[-1] < 0:
            return None, -math.inf
        return res.x[:d], float(res.x[-1])

    def subset_of(self, other, tol=EPS_RED):
        """True when self is contained in ``other`` (also a polytope)."""
        if self.is_empty():
            return True
        for row, rhs in zip(other.A, other.b):
            if self.support(row) > rhs + tol:
                return False
        return True

    # -- constructions ----------------------------------------------------
    def normalize(self):
        """Unit-norm rows, duplicates and redundant rows removed, rows sorted."""
        if self._normalized:
            return self
        return normalize(self)

    def intersect(self, other):
        return intersect(self, other)

    def affine_preimage(self, M, c=None):
        """{z : M z + c in self}."""
        M = np.asarray(M, dtype=float)
        c = np.zeros(M.shape[0]) if c is None else np.asarray(c, dtype=float)
        return HPolytope(self.A @ M, self.b - self.A @ c)


def _canonical_rows(A, b):
    d = A.shape[1]
    norms = np.linalg.norm(A, axis=1)
    zero = norms < 1e-12
    if np.any(zero & (b < -EPS_MEM)):
        return None
    A = A[~zero] / norms[~zero, None]
    b = b[~zero] / norms[~zero]
    A = np.round(A, _ROUND) + 0.0
    b = np.round(b, _ROUND) + 0.0
    # keep the tightest row per direction
    best = {}
    for row, rhs in zip(A, b):
        key = tuple(row.tolist())
        if key not in best or rhs < best[key]:
            best[key] = rhs
    keys = sorted(best)
    A = np.array(keys, dtype=float).reshape(-1, d)
    b = np.array([best[k] for k in keys])
    return A, b


def normalize(p: HPolytope) -> HPolytope:
    d = p.dim
    rows = _canonical_rows(p.A, p.b)
    if rows is None:
        return HPolytope.empty(d)
    A, b = rows
    if A.shape[0] == 0:
        return HPolytope.universe(d)
    st, _, _ = _lp_max(np.zeros(d), A, b)
    if st == INFEASIBLE:
        return HPolytope.empty(d)
    keep = np.ones(A.shape[0], dtype=bool)
    for i in range(A.shape[0]):
        keep[i] = False
        Ai = np.vstack([A[keep], A[i]])
        bi = np.r_[b[keep], b[i] + 1.0]
        st, val, _ = _lp_max(A[i], Ai, bi)
        if st != OPTIMAL or val > b[i] + EPS_RED:
            keep[i] = True
    q = HPolytope(A[keep], b[keep], normalized=True, meta=p.meta)
    q._empty = False
    return q


def _check_dim(p, q):
    if p.dim != q.dim:
        raise GeometryError(f"dimension mismatch: {p.dim} vs {q.dim}")


def intersect(p: HPolytope, q: HPolytope) -> HPolytope:
    _check_dim(p, q)
    return normalize(HPolytope(np.vstack([p.A, q.A]), np.r_[p.b, q.b]))


def is_empty(p) -> bool:
    return p.is_empty()


def contains(r, x, tol=EPS_MEM) -> bool:
    return r.contains(x, tol)


def chebyshev_center(p: HPolytope):
    return p.chebyshev_center()


def support_box(p: HPolytope, direction) -> float:
    """Support function; closed form when p is a box."""
    bb = p.box_bounds()
    a = np.asarray(direction, dtype=float)
    if bb is None:
        return p.support(a)
    lo, hi = bb
    with np.errstate(invalid="ignore"):
        vals = np.where(a > 0, a * hi, np.where(a < 0, a * lo, 0.0))
    return float(np.sum(vals))


def pontryagin_diff(p: HPolytope, w: HPolytope) -> HPolytope:
    """p minus w in the Pontryagin sense: {x : x + w in p for all w}."""
    _check_dim(p, w)
    if w.is_empty():
        raise GeometryError("cannot erode by an empty set")
    h = np.array([support_box(w, a) for a in p.A])
    if not np.all(np.isfinite(h)):
        raise GeometryError("erosion set must be bounded")
    return normalize(HPolytope(p.A, p.b - h))


def minkowski_sum_box(w1: HPolytope, w2: HPolytope, allow_outer=False) -> HPolytope:
    """Exact sum of two axis-aligned boxes.

    Non-box operands are rejected unless ``allow_outer`` is set, in which case
    each operand is replaced by its bounding box and the result carries
    ``meta["outer"] = True``.
    """
    _check_dim(w1, w2)
    outer = False
    boxes = []
    for w in (w1, w2):
        bb = w.box_bounds()
        if bb is None:
            if not allow_outer:
                raise GeometryError("minkowski_sum_box needs axis-aligned boxes")
            bb = w.bounding_box()
            outer = True
        if not (np.all(np.isfinite(bb[0])) and np.all(np.isfinite(bb[1]))):
            raise GeometryError("minkowski_sum_box needs bounded operands")
        boxes.append(bb)
    out = HPolytope.box(boxes[0][0] + boxes[1][0], boxes[0][1] + boxes[1][1])
    if outer:
        out.meta["outer"] = True
    return out


def scale_box(w: HPolytope, M) -> HPolytope:
    """Bounding box of M w for a box w (exact interval hull)."""
    bb = w.box_bounds()
    if bb is None:
        raise GeometryError("scale_box needs an axis-aligned box")
    lo, hi = bb
    c, r = (lo + hi) / 2, (hi - lo) / 2
    M = np.atleast_2d(np.asarray(M, dtype=float))
    cc, rr = M @ c, np.abs(M) @ r
    return HPolytope.box(cc - rr, cc + rr)


# --- Fourier-Motzkin --------------------------------------------------------

def _remove_redundant(A, b):
    p = normalize(HPolytope(A, b))
    return p


def fm_eliminate(p: HPolytope, j: int) -> HPolytope:
    """Project out coordinate j (result lives in dim - 1)."""
    A, b = p.A, p.b
    col = A[:, j]
    pos = np.flatnonzero(col > 1e-12)
    neg = np.flatnonzero(col < -1e-12)
    zer = np.flatnonzero(np.abs(col) <= 1e-12)
    rows = [A[zer]]
    rhs = [b[zer]]
    for i in pos:
        for k in neg:
            r = A[i] * (-col[k]) + A[k] * col[i]
            rows.append(r[None, :])
            rhs.append(np.array([b[i] * (-col[k]) + b[k] * col[i]]))
    A2 = np.vstack(rows)
    b2 = np.concatenate(rhs)
    A2 = np.delete(A2, j, axis=1)
    return _remove_redundant(A2, b2)


def project(p: HPolytope, keep) -> HPolytope:
    """Orthogonal projection onto the coordinates in ``keep`` (in that order)."""
    keep = list(keep)
    if any(k < 0 or k >= p.dim for k in keep):
        raise GeometryError("projection axis out of range")
    q = normalize(p)
    if q.is_empty():
        return HPolytope.empty(len(keep))
    cols = list(range(p.dim))
    for j in sorted(set(cols) - set(keep), reverse=True):
        q = fm_eliminate(q, cols.index(j))
        cols.remove(j)
        if q.is_empty():
            return HPolytope.empty(len(keep))
    perm = [cols.index(k) for k in keep]
    return normalize(HPolytope(q.A[:, perm], q.b))


def polygon_vertices(p: HPolytope):
    """Counter-clockwise vertices of a bounded 2-D polytope."""
    if p.dim != 2:
        raise GeometryError("polygon_vertices needs a 2-D polytope")
    q = normalize(p)
    if q.is_empty():
        return np.zeros((0, 2))
    pts = []
    A, b = q.A, q.b
    for i in range(len(b)):
        for k in range(i + 1, len(b)):
            M = np.vstack([A[i], A[k]])
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            v = np.linalg.solve(M, [b[i], b[k]])
            if np.all(A @ v <= b + 1e-7):
                pts.append(v)
    if not pts:
        return np.zeros((0, 2))
    pts = np.unique(np.round(np.array(pts), 9), axis=0)
    c = pts.mean(axis=0)
    ang = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
    return pts[np.argsort(ang)]


# --- regions -----------------------------------------------------------------

class Region:
    """Finite union of HPolytopes; no parts means the empty set."""

    def __init__(self, parts, dim=None, meta=None):
        parts = list(parts)
        if dim is None:
            if not parts:
                raise GeometryError("empty region needs an explicit dim")
            dim = parts[0].dim
        for q in parts:
            if q.dim != dim:
                raise GeometryError("region parts differ in dimension")
        self.parts = parts
        self.dim = dim
        self.meta = dict(meta or {})

    @classmethod
    def of(cls, p: HPolytope):
        return cls([p], p.dim)

    @classmethod
    def empty(cls, d):
        return cls([], d)

    def __repr__(self):
        return f"Region(dim={self.dim}, parts={len(self.parts)})"

    def __len__(self):
        return len(self.parts)

    def __iter__(self):
        return iter(self.parts)

    def contains(self, x, tol=EPS_MEM):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise GeometryError("dimension mismatch")
        if x.ndim > 1:
            out = np.zeros(x.shape[:-1], dtype=bool)
            for q in self.parts:
                out |= q.contains(x, tol)
            return out
        return any(q.contains(x, tol) for q in self.parts)

    def is_empty(self):
        return all(q.is_empty() for q in self.parts)

    def margin(self, x):
        """Largest over parts of the smallest row slack at x (row norms are 1
        after normalize, so this lower-bounds the distance to the boundary of
        the union when positive)."""
        best = -math.inf
        for q in self.parts:
            if q.nrows == 0:
                return math.inf
            best = max(best, float(np.min(q.b - q.A @ x)))
        return best

    def bounding_box(self):
        lo = np.full(self.dim, np.inf)
        hi = np.full(self.dim, -np.inf)
        for q in self.parts:
            if q.is_empty():
                continue
            l2, h2 = q.bounding_box()
            lo, hi = np.minimum(lo, l2), np.maximum(hi, h2)
        return lo, hi

    def to_dict(self):
        return {"dim": self.dim, "parts": [q.to_dict() for q in self.parts]}

    @classmethod
    def from_dict(cls, dct):
        parts = [HPolytope.from_dict(q) for q in dct["parts"]]
        return cls(parts, int(dct.get("dim", parts[0].dim if parts else 0)))

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def prune(self, merge=True):
        return prune(self, merge=merge)


def _as_region(r):
    return Region.of(r) if isinstance(r, HPolytope) else r


def region_union(r: Region, s: Region) -> Region:
    r, s = _as_region(r), _as_region(s)
    if r.dim != s.dim:
        raise GeometryError("dimension mismatch")
    return Region(r.parts + s.parts, r.dim, {**r.meta, **s.meta})


def region_intersect(r: Region, s: Region) -> Region:
    r, s = _as_region(r), _as_region(s)
    if r.dim != s.dim:
        raise GeometryError("dimension mismatch")
    parts = []
    for p in r.parts:
        for q in s.parts:
            x = intersect(p, q)
            if not x.is_empty():
                parts.append(x)
    return Region(parts, r.dim, {**r.meta, **s.meta})


def region_difference_poly(p: HPolytope, q: HPolytope) -> Region:
    """p \\ q as a union of closed polytopes.

    Facet j of q contributes p ∩ {a_j x >= b_j + EPS_STRICT} ∩ {a_i x <= b_i, i < j},
    so the parts are pairwise disjoint.
    """
    _check_dim(p, q)
    d = p.dim
    p = normalize(p)
    if p.is_empty():
        return Region.empty(d)
    q = normalize(q)
    if q.is_empty():
        return Region([p], d)
    if intersect(p, q).is_empty():
        return Region([p], d)
    parts = []
    A_acc, b_acc = p.A, p.b
    for a, rhs in zip(q.A, q.b):
        if p.support(a) > rhs + EPS_STRICT:
            cand = normalize(HPolytope(np.vstack([A_acc, -a]), np.r_[b_acc, -(rhs + EPS_STRICT)]))
            if not cand.is_empty():
                parts.append(cand)
        A_acc = np.vstack([A_acc, a])
        b_acc = np.r_[b_acc, rhs]
    return Region(parts, d)


def region_difference(r: Region, s: Region) -> Region:
    r, s = _as_region(r), _as_region(s)
    cur = list(r.parts)
    for q in s.parts:
        nxt = []
        for p in cur:
            nxt.extend(region_difference_poly(p, q).parts)
        cur = nxt
    return Region(cur, r.dim)


def region_subset(r: Region, s: Region) -> bool:
    """True when r ⊆ s (exact up to EPS_STRICT slivers)."""
    rest = region_difference(r, s)
    return all(q.chebyshev_center()[1] <= THIN for q in rest.parts)


def _envelope_merge(p: HPolytope, q: HPolytope):
    """Return the convex hull of p ∪ q when p ∪ q is itself convex, else None."""
    rows, rhs = [], []
    for a, b in zip(p.A, p.b):
        if q.support(a) <= b + EPS_RED:
            rows.append(a); rhs.append(b)
    for a, b in zip(q.A, q.b):
        if p.support(a) <= b + EPS_RED:
            rows.append(a); rhs.append(b)
    env = normalize(HPolytope(np.array(rows).reshape(-1, p.dim), np.array(rhs)))
    for part in region_difference_poly(env, p).parts:
        if not part.subset_of(q, tol=1e-7):
            return None
    return env


def prune(r: Region, merge=True) -> Region:
    """Drop empty and thin parts, parts inside other parts, and merge pairs whose
    union is exactly convex."""
    parts = []
    for q in r.parts:
        q = normalize(q)
        if q.is_empty() or q.chebyshev_center()[1] <= THIN:
            continue
        parts.append(q)
    changed = True
    while changed:
        changed = False
        for i in range(len(parts)):
            for j in range(len(parts)):
                if i != j and parts[i].subset_of(parts[j]):
                    del parts[i]
                    changed = True
                    break
            if changed:
                break
        if changed or not merge:
            continue
        for i in range(len(parts)):
            for j in range(i + 1, len(parts)):
                env = _envelope_merge(parts[i], parts[j])
                if env is not None:
                    parts[i] = env
                    del parts[j]
                    changed = True
                    break
            if changed:
                break
    return Region(parts, r.dim, r.meta)


# --- one-step sets ------------------------------------------------------------

def _lift_and_project(sys, G, g):
    """{x in X : exists u in U, G (A x + B u) <= g}, projected by Fourier-Motzkin."""
    n, m = sys.B.shape
    X, U = sys.X, sys.U
    rows = [np.hstack([G @ sys.A, G @ sys.B]),
            np.hstack([np.zeros((U.nrows, n)), U.A]),
            np.hstack([X.A, np.zeros((X.nrows, m))])]
    lifted = normalize(HPolytope(np.vstack(rows), np.concatenate([g, U.b, X.b])))
    if lifted.is_empty():
        return HPolytope.empty(n)
    return project(lifted, range(n))


def one_step(sys, target) -> Region:
    """Υ(target): states of X from which some admissible input reaches target."""
    target = _as_region(target)
    if not getattr(sys, "is_linear", True):
        raise GeometryError("exact one-step sets need linear dynamics")
    if target.dim != sys.A.shape[0]:
        raise GeometryError("dimension mismatch")
    parts = []
    for P in target.parts:
        if P.is_empty():
            continue
        q = _lift_and_project(sys, P.A, P.b)
        if not q.is_empty():
            parts.append(q)
    return Region(parts, target.dim, target.meta)


def robust_one_step(sys, target, wmag: HPolytope) -> Region:
    """Υ_r(target, wmag), part-wise: union over parts of Υ(P ⊖ wmag).

    For a union with more than one part this is an inner approximation, which
    is recorded as ``meta["inner"] = True``.
    """
    target = _as_region(target)
    eroded = []
    for P in target.parts:
        e = pontryagin_diff(P, wmag)
        if not e.is_empty():
            eroded.append(e)
    out = one_step(sys, Region(eroded, target.dim))
    if len(target.parts) > 1 or target.meta.get("inner"):
        out.meta["inner"] = True
    return out


# --- sampling helpers ---------------------------------------------------------

def sample(r, count, rng, max_tries=200000):
    """Uniform rejection samples from a bounded region."""
    r = _as_region(r)
    lo, hi = r.bounding_box()
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise GeometryError("sampling needs a bounded region")
    out = []
    tries = 0
    while len(out) < count and tries < max_tries:
        batch = rng.uniform(lo, hi, size=(max(count, 64), r.dim))
        tries += batch.shape[0]
        ok = r.contains(batch)
        out.extend(batch[ok][: count - len(out)])
    if len(out) < count:
        raise GeometryError("rejection sampling did not find enough points")
    return np.array(out)


__all__ = [
    "EPS_STRICT", "EPS_MEM", "GeometryError", "HPolytope", "Region", "normalize",
    "intersect", "is_empty", "contains", "chebyshev_center", "pontryagin_diff",
    "minkowski_sum_box", "scale_box", "fm_eliminate", "project", "polygon_vertices",
    "region_union", "region_intersect", "region_difference_poly", "region_difference",
    "region_subset", "prune", "one_step", "robust_one_step", "sample", "support_box",
]
