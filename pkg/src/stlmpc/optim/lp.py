"""Dense bounded-variable simplex.

Every model is brought to the internal form

    min  c.y   s.t.  T y = beta (tableau form),   0 <= y <= ub

by shifting/reflecting/splitting the user variables and adding one slack per
inequality row. Phase 1 uses artificials; Dantzig pricing switches to Bland's
rule after ``BLAND_AFTER`` degenerate pivots. A :class:`Tableau` can be
re-optimized with the dual simplex after bound changes, which is how the
branch-and-bound reuses parent solutions.
"""
from __future__ import annotations

import math
import time

import numpy as np

from .model import (EQ, GE, INFEASIBLE, ITER_LIMIT, LE, OPTIMAL, UNBOUNDED,
                    LpModel, SolveResult)

PIV_TOL = 1e-9
OPT_TOL = 1e-9
FEAS_TOL = 1e-9
EPS_FEAS = 1e-7
BLAND_AFTER = 500


class _Standard:
    """Mapping between user variables x and internal variables y."""

    def __init__(self, model: LpModel):
        lo, hi = model.lo, model.hi
        n = model.n
        cols_src, cols_sign, ub, offset = [], [], [], np.zeros(n)
        for j in range(n):
            if math.isfinite(lo[j]):
                cols_src.append(j); cols_sign.append(1.0); ub.append(hi[j] - lo[j])
                offset[j] = lo[j]
            elif math.isfinite(hi[j]):
                cols_src.append(j); cols_sign.append(-1.0); ub.append(math.inf)
                offset[j] = hi[j]
            else:
                cols_src += [j, j]; cols_sign += [1.0, -1.0]; ub += [math.inf, math.inf]
        self.src = np.array(cols_src, dtype=int)
        self.sign = np.array(cols_sign)
        self.offset = offset
        ny = self.src.size
        A = model.A[:, self.src] * self.sign if model.m else np.zeros((0, ny))
        rhs = model.rhs - model.A @ offset if model.m else np.zeros(0)
        m = model.m
        is_le = model.rel == LE
        is_ge = model.rel == GE
        n_slack = int(is_le.sum() + is_ge.sum())
        S = np.zeros((m, n_slack))
        k = 0
        for r in range(m):
            if is_le[r]:
                S[r, k] = 1.0; k += 1
            elif is_ge[r]:
                S[r, k] = -1.0; k += 1
        self.A = np.hstack([A, S])
        self.b = rhs.copy()
        self.ub = np.concatenate([np.array(ub, dtype=float), np.full(n_slack, math.inf)])
        self.c = np.concatenate([model.c[self.src] * self.sign, np.zeros(n_slack)])
        self.c0 = float(model.c @ offset)
        self.ny = ny
        self.N = ny + n_slack
        flip = self.b < 0
        self.A[flip] *= -1
        self.b[flip] *= -1

    def to_x(self, y, n):
        x = self.offset.copy()
        np.add.at(x, self.src, self.sign * y[: self.ny])
        return x


class Tableau:
    """Simplex state over the internal form; re-optimizable after bound changes."""

    def __init__(self, std: _Standard, T, beta, basis, at_upper, ub, cost):
        self.std = std
        self.T = T
        self.beta = beta
        self.basis = basis
        self.at_upper = at_upper
        self.ub = ub
        self.cost = cost
        self.shift = np.zeros(T.shape[1])
        self.iterations = 0
        self.degenerate = 0
        self._init_duals()

    def copy(self):
        t = Tableau(self.std, self.T.copy(), self.beta.copy(), self.basis.copy(),
                    self.at_upper.copy(), self.ub.copy(), self.cost)
        t.shift = self.shift.copy()
        t.degenerate = self.degenerate
        return t

    # -- helpers -----------------------------------------------------------
    def _pivot(self, r, j):
        T = self.T
        prow = T[r] / T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, prow)
        T[r] = prow
        self.d -= self.d[j] * prow
        self.d[j] = 0.0
        old = self.basis[r]
        self.basis[r] = j
        self.is_basic[old] = False
        self.is_basic[j] = True
        self.iterations += 1

    def _nonbasic_values(self):
        return np.where(self.at_upper, self.ub, 0.0)

    def values(self):
        y = self._nonbasic_values()
        y[self.basis] = self.beta
        return y + self.shift

    def _init_duals(self):
        self.is_basic = np.zeros(self.T.shape[1], dtype=bool)
        self.is_basic[self.basis] = True
        self.d = self.cost - self.cost[self.basis] @ self.T
        self.d[self.basis] = 0.0

    # -- primal simplex ----------------------------------------------------
    def primal(self, max_iter):
        self._init_duals()
        bland = self.degenerate > BLAND_AFTER
        for _ in range(max_iter):
            d = self.d
            nb = ~self.is_basic
            inc = nb & ~self.at_upper & (d < -OPT_TOL) & (self.ub > 0)
            dec = nb & self.at_upper & (d > OPT_TOL)
            cand = inc | dec
            if not cand.any():
                return OPTIMAL
            if bland:
                j = int(np.argmax(cand))
            else:
                j = int(np.argmax(np.where(cand, np.abs(d), -1.0)))
            direction = 1.0 if inc[j] else -1.0
            col = self.T[:, j] * direction
            t_best = self.ub[j]
            leave = -1
            ub_b = self.ub[self.basis]
            pos = col > PIV_TOL
            neg = col < -PIV_TOL
            ratios = np.full(col.size, math.inf)
            ratios[pos] = np.maximum(self.beta[pos], 0.0) / col[pos]
            fin = neg & np.isfinite(ub_b)
            ratios[fin] = np.maximum(ub_b[fin] - self.beta[fin], 0.0) / (-col[fin])
            if ratios.size:
                rmin = ratios.min()
                if rmin < t_best:
                    ties = np.flatnonzero(ratios <= rmin + 1e-12)
                    if bland:
                        leave = int(ties[np.argmin(self.basis[ties])])
                    else:
                        leave = int(ties[np.argmax(np.abs(col[ties]))])
                    t_best = ratios[leave]
            if not math.isfinite(t_best):
                return UNBOUNDED
            if t_best <= 1e-12:
                self.degenerate += 1
                if self.degenerate > BLAND_AFTER:
                    bland = True
            self.beta -= t_best * col
            if leave < 0:
                self.at_upper[j] = not self.at_upper[j]
                self.iterations += 1
                continue
            enter_val = t_best if direction > 0 else self.ub[j] - t_best
            out = self.basis[r := leave]
            self.at_upper[out] = bool(col[r] < 0)
            self._pivot(r, j)
            self.beta[r] = enter_val
            self.at_upper[j] = False
        return ITER_LIMIT

    # -- dual simplex (after bound changes) -------------------------------
    def fix(self, j, value):
        """Fix internal column ``j`` to ``value`` (internal units, before shift)."""
        old = self.shift[j] + (self.beta[np.flatnonzero(self.basis == j)[0]]
                               if self.is_basic[j] else (self.ub[j] if self.at_upper[j] else 0.0))
        if self.is_basic[j]:
            r = int(np.flatnonzero(self.basis == j)[0])
            self.beta[r] -= value - self.shift[j]
        else:
            self.beta -= self.T[:, j] * (value - old)
            self.at_upper[j] = False
        self.shift[j] = value
        self.ub[j] = 0.0

    def dual(self, max_iter):
        self._init_duals()
        for _ in range(max_iter):
            ub_b = self.ub[self.basis]
            low_viol = -self.beta
            up_viol = np.where(np.isfinite(ub_b), self.beta - ub_b, -math.inf)
            viol = np.maximum(low_viol, up_viol)
            r = int(np.argmax(viol))
            if viol[r] <= FEAS_TOL:
                return self.primal(max_iter)
            row = self.T[r]
            nb = ~self.is_basic & (self.ub > 0)
            if low_viol[r] >= up_viol[r]:
                target = 0.0
                # basic must increase: entering j moves x_j so that -row_j * dx_j > 0
                cand = nb & (((row < -PIV_TOL) & ~self.at_upper) | ((row > PIV_TOL) & self.at_upper))
            else:
                target = ub_b[r]
                cand = nb & (((row > PIV_TOL) & ~self.at_upper) | ((row < -PIV_TOL) & self.at_upper))
            if not cand.any():
                return INFEASIBLE
            ratios = np.where(cand, np.abs(self.d) / np.where(cand, np.abs(row), 1.0), math.inf)
            rmin = ratios.min()
            ties = np.flatnonzero(ratios <= rmin + 1e-12)
            j = int(ties[np.argmax(np.abs(row[ties]))])
            dx = (self.beta[r] - target) / row[j]
            enter_val = (self.ub[j] if self.at_upper[j] else 0.0) + dx
            self.beta -= self.T[:, j] * dx
            out = self.basis[r]
            self.at_upper[out] = target > 0.0
            self._pivot(r, j)
            self.beta[r] = enter_val
            self.at_upper[j] = False
        return ITER_LIMIT


def _phase1(std: _Standard, max_iter):
    m, N = std.A.shape
    # rows whose slack has coefficient +1 can start with the slack basic
    basis = np.full(m, -1, dtype=int)
    for r in range(m):
        nz = np.flatnonzero(std.A[r, std.ny:] == 1.0)
        for k in nz:
            col = std.ny + k
            if np.count_nonzero(std.A[:, col]) == 1:
                basis[r] = col
                break
    need = np.flatnonzero(basis < 0)
    n_art = need.size
    A = np.hstack([std.A, np.zeros((m, n_art))])
    for k, r in enumerate(need):
        A[r, N + k] = 1.0
        basis[r] = N + k
    ub = np.concatenate([std.ub, np.full(n_art, math.inf)])
    cost = np.concatenate([np.zeros(N), np.ones(n_art)])
    tab = Tableau(std, A, std.b.copy(), basis, np.zeros(N + n_art, dtype=bool), ub, cost)
    if n_art == 0:
        return tab, OPTIMAL
    status = tab.primal(max_iter)
    if status != OPTIMAL:
        return tab, status
    infeas = float(tab.beta[tab.basis >= N].sum()) if n_art else 0.0
    scale = 1.0 + float(np.abs(std.b).max(initial=0.0))
    if infeas > 1e-9 * scale:
        return tab, INFEASIBLE
    # drive artificials out of the basis
    keep_rows = np.ones(m, dtype=bool)
    for r in range(m):
        if tab.basis[r] >= N:
            row = tab.T[r, :N]
            cand = np.flatnonzero((np.abs(row) > 1e-7) & ~tab.is_basic[:N])
            if cand.size:
                j = int(cand[np.argmax(np.abs(row[cand]))])
                val = tab.ub[j] if tab.at_upper[j] else 0.0
                tab._pivot(r, j)
                tab.beta[r] = val
                tab.at_upper[j] = False
            else:
                keep_rows[r] = False
    tab.T = tab.T[keep_rows][:, :N]
    tab.beta = tab.beta[keep_rows]
    tab.basis = tab.basis[keep_rows]
    tab.at_upper = tab.at_upper[:N]
    tab.ub = tab.ub[:N]
    tab.shift = tab.shift[:N]
    return tab, OPTIMAL


def _finish(model, std, tab, status, t0, iterations):
    if status != OPTIMAL:
        return SolveResult(status, None, math.nan, 0, iterations, time.perf_counter() - t0)
    y = tab.values()
    x = std.to_x(y, model.n)
    viol = model.violation(x)
    if viol > EPS_FEAS:
        # refactor from the final basis to clean accumulated error
        y = _refactor(std, tab)
        if y is not None:
            x = std.to_x(y, model.n)
            viol = model.violation(x)
    if viol > EPS_FEAS:
        return SolveResult(ITER_LIMIT, None, math.nan, 0, iterations,
                           time.perf_counter() - t0,
                           message=f"numerical trouble: final violation {viol:.3e}")
    obj = float(model.c @ x)
    return SolveResult(OPTIMAL, x, obj, 0, iterations, time.perf_counter() - t0)


def _refactor(std, tab):
    y = tab._nonbasic_values() + tab.shift
    y[tab.basis] = 0.0
    B = std.A[:, tab.basis]
    # rows removed in phase 1 are dependent; least squares handles them
    rhs = std.b - std.A @ y
    try:
        sol, *_ = np.linalg.lstsq(B, rhs, rcond=None)
    except np.linalg.LinAlgError:
        return None
    y[tab.basis] = sol
    return y


def _max_iter(m, N):
    return 50 * (m + N) + 1000


def solve_standard(model: LpModel):
    """Solve ``model`` and also return the final tableau (for warm starts)."""
    t0 = time.perf_counter()
    std = _Standard(model)
    if model.sense == "max":
        std.c = -std.c
    m, N = std.A.shape
    max_iter = _max_iter(m, N)
    tab, status = _phase1(std, max_iter)
    iters = tab.iterations
    if status == OPTIMAL:
        tab.cost = std.c
        status = tab.primal(max_iter)
        iters = tab.iterations
    res = _finish(model, std, tab, status, t0, iters)
    return res, (tab if status == OPTIMAL else None), std


def solve_lp(model: LpModel) -> SolveResult:
    """Solve an LP to optimality (or report infeasible / unbounded / iter_limit)."""
    res, _, _ = solve_standard(model)
    return res
