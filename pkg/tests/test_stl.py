import itertools

import numpy as np
import pytest

from stlmpc.stl import (And, BPred, Predicate, DecompositionError, F, FragmentError, G, STLSyntaxError,
                        TraceTooShort, UntilA, bool_sat, bool_to_region, conjuncts, decompose,
                        horizon, parse, parse_bool, robustness, to_segments, to_text)

from oracles import (bool_holds, bool_text, random_bool, random_formula, random_trace,
                     temporal_horizon_end, temporal_rob, temporal_sat, temporal_text)

NAMES = ["x1", "x2"]


def test_parse_single_predicate():
    f = parse("G[0,2](x1 >= 0)", dim=3)
    assert isinstance(f, G) and (f.a, f.b) == (0, 2)
    assert f.phi.pred.a == (1.0, 0.0, 0.0) and f.phi.pred.b == 0.0


def test_parse_conjunction_with_bindings():
    p1 = parse_bool("x1 >= 1")
    p2 = parse_bool("x1 <= 4")
    f = parse("F[2,7](p1) & G[3,12](p2)", bindings={"p1": p1, "p2": p2})
    assert isinstance(f, And)
    assert [type(c).__name__ for c in conjuncts(f)] == ["F", "G"]


def test_parse_errors():
    with pytest.raises(FragmentError) as e:
        parse("F[0,3](G[0,2] x1 >= 0)")
    assert e.value.span is not None
    with pytest.raises(STLSyntaxError) as e:
        parse("F[0,2](x1 >= ) ")
    assert e.value.pos is not None
    with pytest.raises(STLSyntaxError):
        parse("F[0,2](foo)")
    with pytest.raises(STLSyntaxError):
        parse("G[3,1](x1 >= 0)")


def test_parse_derived_operators():
    f = parse("G[0,0](x1 >= 1 -> x2 >= 1)")
    X = np.array([[0.0, 0.0]])
    assert bool_sat(X, f)                       # vacuous implication
    assert not bool_sat(np.array([[2.0, 0.0]]), f)
    g = parse("F[0,0](x1 >= 1 | x2 >= 1)")
    assert bool_sat(np.array([[0.0, 2.0]]), g)


def test_text_round_trip():
    rng = np.random.default_rng(9)
    for _ in range(50):
        ref = random_formula(rng, 2)
        f = parse(temporal_text(ref, NAMES))
        g = parse(to_text(f))
        X = random_trace(rng, 2, temporal_horizon_end(ref) + 1)
        assert robustness(X, f) == pytest.approx(robustness(X, g), abs=1e-12)


def test_horizon_examples():
    p = parse_bool("x1 >= 0")
    q = parse_bool("x1 <= 3")
    b = {"p": p, "q": q}
    assert horizon(parse("F[2,7] p & G[3,12] q", bindings=b)) == (2, 12)
    assert horizon(parse("G[0,0] p", bindings=b)) == (0, 0)
    assert horizon(parse("F[5,5] p & F[1,9] q", bindings=b)) == (1, 9)


def test_pinned_traces():
    X = np.array([[0.0], [1.0], [2.0]])
    assert bool_sat(X, parse("F[0,2](x1 >= 1.5)"))
    assert not bool_sat(X, parse("G[0,2](x1 >= 0.5)"))
    assert robustness(X, parse("F[0,2](x1 >= 1.5)")) == pytest.approx(0.5)
    assert robustness(X, parse("G[0,2](x1 >= -1)")) == pytest.approx(1.0)


def test_trace_too_short():
    with pytest.raises(TraceTooShort):
        bool_sat(np.zeros((2, 1)), parse("F[0,3](x1 >= 0)"))


def test_semantics_match_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        ref = random_formula(rng, 2)
        f = parse(temporal_text(ref, NAMES))
        T = temporal_horizon_end(ref)
        X = random_trace(rng, 2, T + 3)
        for k in (0, 1):
            if k + T >= len(X):
                continue
            assert bool_sat(X, f, k) == temporal_sat(ref, X, k)
            assert robustness(X, f, k) == pytest.approx(temporal_rob(ref, X, k), abs=1e-9)


def test_sign_soundness():
    rng = np.random.default_rng(1)
    for _ in range(300):
        ref = random_formula(rng, 2)
        f = parse(temporal_text(ref, NAMES))
        X = random_trace(rng, 2, temporal_horizon_end(ref) + 1)
        r = robustness(X, f)
        if abs(r) > 1e-9:
            assert (r > 0) == bool_sat(X, f)


def test_horizon_dominance():
    """Satisfaction never reads beyond k + T."""
    rng = np.random.default_rng(2)
    for _ in range(100):
        ref = random_formula(rng, 2)
        f = parse(temporal_text(ref, NAMES))
        T = horizon(f)[1]
        X = random_trace(rng, 2, T + 4)
        assert bool_sat(X, f) == bool_sat(X[:T + 1], f)


def test_bool_to_region_matches_grid():
    rng = np.random.default_rng(3)
    pts = np.array(list(itertools.product(np.arange(-2, 2.01, 0.25), repeat=2)))
    for _ in range(30):
        ref = random_bool(rng, 2, depth=3)
        phi = parse_bool(bool_text(ref, NAMES))
        reg = bool_to_region(phi, 2)
        for x in pts:
            # grid points on a strict boundary are skipped (closed with eps_strict)
            truth = bool_holds(ref, x)
            got = reg.contains(x)
            if truth != got:
                assert _near_boundary(ref, x)


def _near_boundary(p, x, tol=1e-5):
    if p[0] == "pred":
        return abs(np.dot(p[1], x) + p[2]) < tol
    return any(_near_boundary(q, x, tol) for q in p[1:] if isinstance(q, tuple))


def test_segments_simple():
    seg = to_segments(parse("G[0,2](x1 >= 0 | x1 <= -3)"))
    assert seg.N == 1
    s = seg.seg(1)
    assert (s.op, s.a, s.b) == ("G", 0, 2)
    assert len(s.region.parts) == 2
    seg2 = to_segments(parse("F[2,7](x1 >= 0) & G[3,12](x1 <= 3)"))
    assert seg2.indices == frozenset({1, 2})


def test_standard_until_splits():
    seg = to_segments(parse("(x1 >= 0) U[2,4] (x1 >= 1)"))
    assert [(s.op, s.a, s.b) for s in seg.segments] == [("G", 0, 1), ("U", 2, 4)]
    assert isinstance(seg.seg(2).formula(), UntilA)


def test_segment_fidelity():
    rng = np.random.default_rng(4)
    for _ in range(300):
        ref = random_formula(rng, 2)
        f = parse(temporal_text(ref, NAMES))
        seg = to_segments(f, dim=2)
        X = random_trace(rng, 2, temporal_horizon_end(ref) + 1)
        assert seg.bool_sat(X) == bool_sat(X, f)
        assert seg.robustness(X) == pytest.approx(robustness(X, f), abs=1e-12)


def test_decompose_four_stages():
    b = {n: parse_bool(t) for n, t in (("p", "x1 >= 0"), ("q", "x1 >= 1"), ("r", "x1 >= 2"))}
    f = parse("G[0,100] p & F[21,50] q & F[81,100] r", bindings=b)
    dec = decompose(to_segments(f), [20, 50, 80])
    got = [[(s.op, s.a, s.b) for s in st.formula.segments] for st in dec.stages]
    assert got == [[("G", 0, 20)],
                   [("G", 21, 50), ("F", 21, 50)],
                   [("G", 51, 80)],
                   [("G", 81, 100), ("F", 81, 100)]]
    assert [(st.S, st.T) for st in dec.stages] == [(0, 20), (21, 50), (51, 80), (81, 100)]


def test_decompose_trivial_and_straddle():
    f = parse("F[0,6](x1 >= 0) & G[14,15](x1 <= 1) & F[22,25](x1 >= 2)")
    dec = decompose(to_segments(f), [])
    assert dec.N == 1
    dec = decompose(to_segments(f), [12])
    assert [[(s.op, s.a, s.b) for s in st.formula.segments] for st in dec.stages] == \
        [[("F", 0, 6)], [("G", 14, 15), ("F", 22, 25)]]
    assert [(st.S, st.T) for st in dec.stages] == [(0, 12), (13, 25)]
    with pytest.raises(DecompositionError) as e:
        decompose(to_segments(f), [3])
    assert e.value.segment == 1
    with pytest.raises(DecompositionError):
        decompose(to_segments(f), [12, 12])


def test_decomposition_fidelity():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 200:
        ref = random_formula(rng, 2, tmax=8, max_conj=3)
        f = parse(temporal_text(ref, NAMES))
        seg = to_segments(f, dim=2)
        S, T = seg.horizon()
        if T - S < 2:
            continue
        cut = int(rng.integers(S + 1, T))
        try:
            dec = decompose(seg, [cut])
        except DecompositionError:
            continue
        for _ in range(5):
            X = random_trace(rng, 2, T + 1)
            staged = all(st.formula.bool_sat(X) for st in dec.stages)
            assert staged == bool_sat(X, f)
        checked += 1


def test_predicate_needs_coefficient():
    with pytest.raises(ValueError):
        Predicate((0.0, 0.0), 1.0)
    # a constant comparison folds to a Boolean constant
    f = parse("G[0,1](0*x1 >= 1)")
    assert not bool_sat(np.zeros((2, 1)), f)
    assert bool_sat(np.zeros((2, 1)), parse("G[0,1](0*x1 >= -1)"))
