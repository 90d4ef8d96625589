import math

import numpy as np
import pytest

from stlmpc.encode import (EPS_CERT, INCONCLUSIVE, INFEASIBLE, ROBUST, CegisOptions, CostSpec,
                           build_problem, build_problem1, build_problem2, cegis_solve,
                           encode_energy, energy_pwl_value, find_counterexample, pwl_square)
from stlmpc.geometry import HPolytope, Region
from stlmpc.optim import OPTIMAL, INFEASIBLE as LP_INFEASIBLE, ModelBuilder, solve_milp
from stlmpc.stl import bool_sat, horizon, parse, robustness

from oracles import random_formula, temporal_text


def chain(xlo=-10.0, xhi=10.0, ulo=-1.0, uhi=1.0, w=0.0, n=1):
    A = np.eye(n)
    B = np.eye(n)
    return _sys(A, B, [xlo] * n, [xhi] * n, [ulo] * n, [uhi] * n, w)


def _sys(A, B, xlo, xhi, ulo, uhi, w):
    from stlmpc.system import LinearSystem
    n = len(xlo)
    return LinearSystem(A, B, HPolytope.box(xlo, xhi), HPolytope.box(ulo, uhi),
                        HPolytope.box(np.full(n, -w), np.full(n, w)))


def simulate(sys, x0, U, W=None):
    X = [np.asarray(x0, float)]
    for t, u in enumerate(U):
        w = None if W is None else W[t]
        X.append(sys.step(X[-1], np.atleast_1d(u), w))
    return np.array(X)


def nominal(sys, T):
    return [np.zeros((T, sys.n))]


RHO = CostSpec(1.0, 0.0)


def solve(prob):
    if prob.infeasible_reason:
        return None, None
    res = solve_milp(prob.model)
    return res, (prob.decode_u(res.x) if res.status == OPTIMAL else None)


def test_hand_built_g_window():
    # x1 = x0 + u0, x0 = 1, U = [-3, 3]; G[0,1](x >= 0) binds u0 >= -1
    sys = chain(ulo=-3.0, uhi=3.0)
    f = parse("G[0,1](x1 >= 0)", dim=1)
    prob = build_problem1(sys, f, {0: [1.0]}, 0, 1, RHO, nominal(sys, 1))
    u = prob.uidx[0, 0]
    prob.model.lo[u] = prob.model.hi[u] = -1.0
    assert solve_milp(prob.model).status == OPTIMAL
    prob.model.lo[u] = -3.0
    prob.model.hi[u] = -1.01
    assert solve_milp(prob.model).status == LP_INFEASIBLE


def test_pinned_rho_on_hand_trace():
    # x = (0, 1, 2) with u pinned to 1
    sys = chain(ulo=1.0, uhi=1.0)
    f = parse("F[0,2](x1 >= 1.5)", dim=1)
    prob = build_problem1(sys, f, {0: [0.0]}, 0, 2, RHO, nominal(sys, 2))
    res, _ = solve(prob)
    assert res.status == OPTIMAL
    assert prob.rho(res.x) == pytest.approx(0.5, abs=1e-6)


def _pinned_case(rng, dim):
    ref = random_formula(rng, dim, tmax=6)
    names = ["x1", "x2"][:dim]
    f = parse(temporal_text(ref, names), dim=dim)
    T = horizon(f)[1]
    sys = chain(-50.0, 50.0, -1.0, 1.0, n=dim)
    x0 = np.round(rng.uniform(-2, 2, dim), 2)
    U = np.round(rng.uniform(-1, 1, (T, dim)), 2)
    prob = build_problem1(sys, f, {0: x0}, 0, T, RHO, nominal(sys, T), eps_rob=-1e6)
    for t in range(T):
        for i in range(dim):
            v = prob.uidx[t, i]
            prob.model.lo[v] = prob.model.hi[v] = U[t, i]
    res, _ = solve(prob)
    return f, simulate(sys, x0, U), prob, res


def test_pinned_rho_matches_robustness():
    rng = np.random.default_rng(7)
    for _ in range(60):
        f, X, prob, res = _pinned_case(rng, int(rng.integers(1, 3)))
        assert res.status == OPTIMAL
        assert prob.rho(res.x) == pytest.approx(robustness(X, f), abs=1e-6)


def test_encoding_soundness_random():
    """Optimal decoded traces satisfy the formula and realize the encoded rho."""
    rng = np.random.default_rng(8)
    feasible = 0
    for _ in range(120):
        dim = int(rng.integers(1, 3))
        ref = random_formula(rng, dim, tmax=5)
        f = parse(temporal_text(ref, ["x1", "x2"][:dim]), dim=dim)
        T = horizon(f)[1]
        sys = chain(-5.0, 5.0, -1.0, 1.0, n=dim)
        x0 = np.round(rng.uniform(-2, 2, dim), 2)
        prob = build_problem1(sys, f, {0: x0}, 0, T, RHO, nominal(sys, T))
        res, U = solve(prob)
        if res is None or res.status != OPTIMAL:
            assert res is None or res.status == LP_INFEASIBLE
            continue
        feasible += 1
        X = simulate(sys, x0, U)
        assert robustness(X, f) >= -1e-7
        assert robustness(X, f) == pytest.approx(prob.rho(res.x), abs=1e-6)
        assert np.all(np.abs(X) <= 5 + 1e-7)
    assert feasible > 30


def test_infeasible_region_task():
    sys = chain()
    f = parse("F[0,2](x1 >= 1 & x1 <= 0)", dim=1)
    prob = build_problem1(sys, f, {0: [0.0]}, 0, 2, RHO, nominal(sys, 2))
    res = solve_milp(prob.model)
    assert res.status == LP_INFEASIBLE


def test_prefix_decides_formula():
    sys = chain()
    f = parse("G[0,3](x1 >= 0)", dim=1)
    prob = build_problem(sys, f, {0: [1.0], 1: [-1.0]}, 1, 3, RHO, nominal(sys, 2))
    assert prob.infeasible_reason or solve_milp(prob.model).status == LP_INFEASIBLE
    # a prefix state alone decides F[0,0]
    prob = build_problem(sys, parse("F[0,0](x1 >= 2)", dim=1), {0: [1.0]}, 0, 0, RHO, nominal(sys, 0))
    assert prob.infeasible_reason


# --- energy -------------------------------------------------------------------------------

def test_pwl_square_bound():
    lo, hi, seg = -3.0, 3.0, 8
    h = (hi - lo) / seg
    p, slopes = pwl_square(lo, hi, seg)
    assert np.allclose(np.diff(p), h)
    for u in np.linspace(lo, hi, 601):
        err = energy_pwl_value(u, lo, hi, seg) - u * u
        assert -1e-12 <= err <= h * h / 4 + 1e-12
    for q in p:
        assert energy_pwl_value(q, lo, hi, seg) == pytest.approx(q * q)
    # secant through 1.5 and 2.25
    assert energy_pwl_value(2.0, lo, hi, seg) == pytest.approx(4.125)


def test_energy_encoding_pinned():
    for u0, expect in ((0.0, 0.0), (2.0, 4.125), (-3.0, 9.0)):
        mb = ModelBuilder()
        u = mb.add_var(-3.0, 3.0)
        off = encode_energy(mb, [u], ([-3.0], [3.0]), 1.0)
        mb.lo[u] = mb.hi[u] = u0
        res = solve_milp(mb.build("min"))
        assert res.objective + off == pytest.approx(expect, abs=1e-9)
    mb = ModelBuilder()
    u = mb.add_var(-3.0, 3.0)
    assert encode_energy(mb, [u], ([-3.0], [3.0]), 0.0) == 0.0
    assert mb.n == 1


def test_cost_spec_validation():
    with pytest.raises(ValueError):
        CostSpec(1.0, -1.0)
    with pytest.raises(ValueError):
        CostSpec(1.0, math.inf)
    with pytest.raises(ValueError):
        CostSpec(kind="average")
    assert CostSpec(2.0, 0.5).evaluate(1.0, [1.0, -1.0]) == pytest.approx(-1.0)


# --- terminal -----------------------------------------------------------------------------

def test_terminal_two_parts():
    sys = chain(-5, 5)
    f = parse("G[0,3](x1 >= -5)", dim=1)
    term = Region([HPolytope.box([-4.0], [-3.5]), HPolytope.box([3.5], [4.0])], 1)
    for x0 in (-1.0, 1.0, 0.6):
        prob = build_problem2(sys, f, {0: [x0]}, 0, 3, CostSpec(0.0, 1.0), term, nominal(sys, 3))
        res, U = solve(prob)
        assert res.status == OPTIMAL
        xT = simulate(sys, [x0], U)[-1]
        assert term.contains(xT, tol=1e-7)
    # out of reach
    short = parse("G[0,2](x1 >= -5)", dim=1)
    prob = build_problem2(sys, short, {0: [0.0]}, 0, 2, RHO, term, nominal(sys, 2))
    assert solve(prob)[0].status == LP_INFEASIBLE
    with pytest.raises(ValueError):
        build_problem2(sys, f, {0: [0.0]}, 0, 2, RHO, term, nominal(sys, 2))


def test_terminal_equal_to_x_is_vacuous():
    sys = chain(-5, 5)
    f = parse("F[0,3](x1 >= 2)", dim=1)
    a = build_problem1(sys, f, {0: [0.0]}, 0, 3, RHO, nominal(sys, 3))
    b = build_problem2(sys, f, {0: [0.0]}, 0, 3, RHO, Region.of(sys.X), nominal(sys, 3))
    ra, rb = solve_milp(a.model), solve_milp(b.model)
    assert ra.objective == pytest.approx(rb.objective)
    empty = build_problem2(sys, f, {0: [0.0]}, 0, 3, RHO, Region.empty(1), nominal(sys, 3))
    assert empty.infeasible_reason


def test_two_copies_share_inputs():
    sys = chain(w=0.1)
    f = parse("F[1,3](x1 >= 1)", dim=1)
    one = build_problem1(sys, f, {0: [0.0]}, 0, 3, RHO, nominal(sys, 3), tighten=False)
    bank = nominal(sys, 3) + [np.full((3, 1), -0.1)]
    two = build_problem1(sys, f, {0: [0.0]}, 0, 3, RHO, bank, tighten=False)
    assert one.uidx.size == two.uidx.size == 3
    assert two.stats["copies"] == 2
    assert two.stats["robustness_binaries"] == 2 * one.stats["robustness_binaries"]
    res, U = solve(two)
    for w in bank:
        X = simulate(sys, [0.0], U, w)
        assert robustness(X, f) >= EPS_CERT - 1e-9 or np.allclose(w, 0)


# --- adversary and CEGIS ------------------------------------------------------------------

def test_counterexample_toy():
    sys = chain(w=0.1)
    f = parse("G[1,1](x1 >= 0 & x1 <= 1)", dim=1)
    cx = find_counterexample(sys, f, {0: [0.0]}, 0, 1, [[1.0]])
    assert cx is not None and cx.kind == "robustness"
    assert cx.value == pytest.approx(-0.1)
    assert cx.w[0, 0] == pytest.approx(0.1)
    assert find_counterexample(sys, f, {0: [0.0]}, 0, 1, [[0.5]], eps_rob=0.05) is None


def test_counterexample_zero_w():
    sys = chain()
    f = parse("G[1,2](x1 >= 0 & x1 <= 1)", dim=1)
    assert find_counterexample(sys, f, {0: [0.0]}, 0, 2, [[1.0], [0.0]]) is None


def test_counterexample_state_and_terminal():
    sys = chain(-1.0, 1.0, w=0.1)
    cx = find_counterexample(sys, None, {0: [0.5]}, 0, 1, [[0.45]])
    assert cx is not None and cx.kind == "state"
    term = Region.of(HPolytope.box([0.0], [0.5]))
    cx = find_counterexample(sys, None, {0: [0.0]}, 0, 1, [[0.45]], terminal=term)
    assert cx is not None and cx.kind == "terminal"
    assert find_counterexample(sys, None, {0: [0.0]}, 0, 1, [[0.25]], terminal=term) is None


def _interval_worst(sys, x0, U, f):
    """Worst-case robustness over the vertices of W^H (exact for these 1-D toys)."""
    import itertools
    wl, wh = sys.w_bounds()
    worst = math.inf
    for ws in itertools.product((wl[0], wh[0]), repeat=len(U)):
        X = simulate(sys, x0, U, np.array(ws)[:, None])
        worst = min(worst, robustness(X, f))
    return worst


def test_cegis_toy_converges():
    sys = chain(w=0.1)
    f = parse("G[1,2](x1 >= 0 & x1 <= 1)", dim=1)
    res = cegis_solve(sys, f, {0: [0.0]}, 0, 2, RHO)
    assert res.status == ROBUST
    assert res.state.iterations <= 3
    assert _interval_worst(sys, [0.0], res.u, f) >= 0


def test_cegis_bank_grows_and_cost_worsens():
    sys = chain(w=0.1)
    f = parse("G[1,3](x1 >= 0.5 & x1 <= 2)", dim=1)
    res = cegis_solve(sys, f, {0: [0.0]}, 0, 3, CostSpec(0.0, 1.0))
    assert res.status == ROBUST
    hist = res.state.history
    assert [h["bank"] for h in hist] == list(range(1, len(hist) + 1))
    objs = [h["objective"] for h in hist]
    assert all(b >= a - 1e-9 for a, b in zip(objs, objs[1:]))
    assert _interval_worst(sys, [0.0], res.u, f) >= 0


def test_cegis_zero_w_single_iteration():
    sys = chain()
    f = parse("F[1,3](x1 >= 2)", dim=1)
    res = cegis_solve(sys, f, {0: [0.0]}, 0, 3, RHO)
    assert res.status == ROBUST and res.state.iterations == 1
    prob = build_problem1(sys, f, {0: [0.0]}, 0, 3, RHO, nominal(sys, 3))
    assert res.objective == pytest.approx(solve_milp(prob.model).objective + prob.offset)


def test_cegis_statuses():
    sys = chain(w=0.1)
    bad = parse("G[1,1](x1 >= 5)", dim=1)
    assert cegis_solve(sys, bad, {0: [0.0]}, 0, 1, RHO).status == INFEASIBLE
    # robust margin wider than the target is achievable nominally only
    thin = parse("G[1,3](x1 >= 0 & x1 <= 0.3)", dim=1)
    res = cegis_solve(sys, thin, {0: [0.0]}, 0, 3, RHO, opts=CegisOptions(max_iter=2))
    assert res.status in (INCONCLUSIVE, INFEASIBLE)
    if res.status == INCONCLUSIVE:
        assert res.u is not None


def test_case_study_stage_two():
    from stlmpc.scenario import load_scenario
    from stlmpc.feasible import terminal_sets
    sc = load_scenario("builtin:robot")
    dec = sc.decomposition()
    plan = terminal_sets(dec, sc.system)
    center, r = plan.terminal(1).parts[0].chebyshev_center()
    assert r > 0
    st = dec.stages[1]
    x13 = sc.system.step(center, np.zeros(sc.system.m))
    res = cegis_solve(sc.system, st.formula.formula(), {13: x13}, 13, st.T, sc.cost,
                      opts=sc.cegis_options())
    assert res.status == ROBUST
    assert res.rho > 0
