import itertools
import json

import numpy as np
import pytest

from stlmpc.geometry import (EPS_STRICT, GeometryError, HPolytope, Region, fm_eliminate,
                             minkowski_sum_box, normalize, one_step, polygon_vertices,
                             pontryagin_diff, project, prune, region_difference,
                             region_difference_poly, region_intersect, region_subset,
                             region_union, robust_one_step, sample, scale_box)
from stlmpc.system import LinearSystem

box = HPolytope.box


def grid(lo, hi, step):
    axes = [np.arange(l, h + 1e-9, step) for l, h in zip(lo, hi)]
    return np.array(list(itertools.product(*axes)))


def lp_feasible(A, b):
    """Independent feasibility oracle (HiGHS)."""
    opt = pytest.importorskip("scipy.optimize")
    n = A.shape[1]
    r = opt.linprog(np.zeros(n), A_ub=A, b_ub=b, bounds=[(None, None)] * n, method="highs")
    return r.status == 0


def test_intersect_boxes():
    p = box([0, 0], [2, 2]).intersect(box([1, 1], [3, 3]))
    lo, hi = p.box_bounds()
    assert np.allclose(lo, [1, 1]) and np.allclose(hi, [2, 2])
    assert box([0, 0], [1, 1]).intersect(box([2, 2], [3, 3])).is_empty()


def test_intersect_matches_grid():
    rng = np.random.default_rng(0)
    pts = grid([-1, -1], [5, 5], 0.25)
    for _ in range(20):
        a = box(*np.sort(rng.uniform(-1, 5, (2, 2)), axis=0))
        b = box(*np.sort(rng.uniform(-1, 5, (2, 2)), axis=0))
        c = a.intersect(b)
        assert np.array_equal(c.contains(pts), a.contains(pts) & b.contains(pts))


def test_dimension_mismatch():
    with pytest.raises(GeometryError):
        box([0], [1]).intersect(box([0, 0], [1, 1]))
    with pytest.raises(GeometryError):
        box([0], [1]).contains([0.0, 0.0])


def test_empty_and_membership():
    p = HPolytope([[1.0], [-1.0]], [0.0, -1.0])     # x <= 0 and x >= 1
    assert p.is_empty()
    assert box([-1, -1], [1, 1]).contains([0, 0])
    assert box([0], [1]).contains([1 + 5e-10])
    assert not box([0], [1]).contains([1 + 1e-8])


def test_chebyshev_center():
    c, r = box([0, 0], [2, 4]).chebyshev_center()
    assert r == pytest.approx(1.0)
    assert c[0] == pytest.approx(1.0)
    assert 1.0 - 1e-9 <= c[1] <= 3.0 + 1e-9


def test_normalize_idempotent_and_redundancy():
    p = HPolytope([[2, 0], [1, 0], [0, 1], [-1, 0], [0, -3], [1, 1]], [4, 3, 1, 0, 0, 10])
    q = normalize(p)
    assert q.nrows == 4          # x <= 2 wins over x <= 3; x + y <= 10 is redundant
    assert np.allclose(np.linalg.norm(q.A, axis=1), 1.0)
    r = normalize(q)
    assert np.array_equal(q.A, r.A) and np.array_equal(q.b, r.b)


def test_region_difference_annulus():
    outer, inner = box([0, 0], [4, 4]), box([1, 1], [2, 2])
    d = region_difference_poly(outer, inner)
    assert 1 <= len(d.parts) <= 4
    pts = grid([-0.5, -0.5], [4.5, 4.5], 0.05)
    truth = outer.contains(pts) & ~inner.contains(pts)
    got = d.contains(pts)
    # ignore the eps_strict sliver on the inner boundary
    near = np.zeros(len(pts), bool)
    for i, x in enumerate(pts):
        near[i] = inner.contains(x, tol=2 * EPS_STRICT)
    assert np.array_equal(got[~near], truth[~near])


def test_region_difference_edge_cases():
    p = box([0, 0], [1, 1])
    assert len(region_difference_poly(p, HPolytope.empty(2)).parts) == 1
    assert region_difference_poly(p, p).is_empty()
    assert region_subset(Region.of(box([0.2, 0.2], [0.8, 0.8])), Region.of(p))
    assert not region_subset(Region.of(box([0.2, 0.2], [1.8, 0.8])), Region.of(p))


def test_region_union_intersect():
    r = region_union(Region.of(box([0], [1])), Region.of(box([2], [3])))
    s = region_intersect(r, Region.of(box([0.5], [2.5])))
    assert s.contains([0.7]) and s.contains([2.2]) and not s.contains([1.5])
    assert len(r) == 2


def test_pontryagin_box():
    p = pontryagin_diff(box([0] * 4, [10] * 4), box([-0.01] * 4, [0.01] * 4))
    lo, hi = p.box_bounds()
    assert np.allclose(lo, 0.01) and np.allclose(hi, 9.99)
    q = box([0, 0], [1, 2])
    z = pontryagin_diff(q, box([0, 0], [0, 0]))
    assert np.allclose(z.A, normalize(q).A) and np.allclose(z.b, normalize(q).b)


def test_pontryagin_vertex_oracle():
    rng = np.random.default_rng(1)
    pts = grid([-2, -2], [2, 2], 0.2)
    for _ in range(10):
        A = rng.normal(size=(6, 2))
        p = HPolytope(A, np.abs(rng.normal(size=6)) + 0.5)
        hw = rng.uniform(0.05, 0.3, size=2)
        w = box(-hw, hw)
        e = pontryagin_diff(p, w)
        verts = np.array(list(itertools.product(*zip(-hw, hw))))
        truth = np.array([all(p.contains(x + v) for v in verts) for x in pts])
        assert np.array_equal(e.contains(pts), truth)


def test_pontryagin_unbounded_w():
    with pytest.raises(GeometryError):
        pontryagin_diff(box([0], [1]), HPolytope([[1.0]], [1.0]))


def test_minkowski_box():
    s = minkowski_sum_box(box([-1], [1]), box([-2], [2]))
    assert np.allclose(s.box_bounds()[0], -3) and np.allclose(s.box_bounds()[1], 3)
    W = box([-0.01] * 4, [0.01] * 4)
    s = minkowski_sum_box(W, scale_box(W, np.eye(4)))
    assert np.allclose(s.box_bounds()[1], 0.02)


def test_minkowski_rejects_non_box():
    tri = HPolytope([[1, 1], [-1, 0], [0, -1]], [1, 0, 0])
    with pytest.raises(GeometryError):
        minkowski_sum_box(tri, box([0, 0], [1, 1]))
    s = minkowski_sum_box(tri, box([0, 0], [1, 1]), allow_outer=True)
    assert s.meta["outer"]
    assert np.allclose(s.box_bounds()[1], [2, 2])


def test_magnified_geometric_sum():
    W = box([-0.01] * 2, [0.01] * 2)
    sys = LinearSystem(np.eye(2), np.eye(2), box([-10] * 2, [10] * 2), box([-1] * 2, [1] * 2), W,
                       lipschitz_mode="lipschitz", L=1.2)
    h = sys.magnified(2).box_bounds()[1]
    assert np.allclose(h, 0.01 * (1 + 1.2 + 1.44))
    sys1 = LinearSystem(np.eye(2), np.eye(2), box([-10] * 2, [10] * 2), box([-1] * 2, [1] * 2),
                        W, lipschitz_mode="lipschitz", L=1.0)
    assert np.allclose(sys1.magnified(3).box_bounds()[1], 0.04)


def test_exact_magnification_uses_matrix_powers():
    A = np.array([[1, 0.5], [0, 1]])
    W = box([-0.1, -0.1], [0.1, 0.1])
    sys = LinearSystem(A, np.eye(2), box([-10] * 2, [10] * 2), box([-1] * 2, [1] * 2), W,
                       lipschitz_mode="exact")
    # W + A W: half-widths (0.1 + 0.15, 0.1 + 0.1)
    assert np.allclose(sys.magnified(1).box_bounds()[1], [0.25, 0.2])


def test_fm_projection_matches_lifted_lp():
    rng = np.random.default_rng(4)
    for _ in range(4):
        A = rng.normal(size=(8, 3))
        b = np.abs(rng.normal(size=8)) + 0.3
        p = HPolytope(A, b)
        q = project(p, [0, 1])
        pts = grid([-1.5, -1.5], [1.5, 1.5], 0.3)
        for x in pts:
            # exists z: A[:, :2] x + A[:, 2] z <= b
            lifted = lp_feasible(A[:, 2:3], b - A[:, :2] @ x)
            assert q.contains(x, tol=1e-7) == lifted


def test_fm_eliminate_simple():
    # triangle x >= 0, y >= 0, x + y <= 1 -> x in [0, 1]
    p = HPolytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
    q = fm_eliminate(p, 1)
    lo, hi = q.box_bounds()
    assert lo[0] == pytest.approx(0) and hi[0] == pytest.approx(1)


def test_project_axis_range():
    with pytest.raises(GeometryError):
        project(box([0, 0], [1, 1]), [0, 5])


def test_polygon_vertices_square():
    v = polygon_vertices(box([0, 0], [1, 2]))
    assert len(v) == 4
    assert {tuple(np.round(x, 9)) for x in v} == {(0, 0), (1, 0), (1, 2), (0, 2)}


def sys1d(w=0.0):
    return LinearSystem([[1.0]], [[1.0]], box([-5], [5]), box([-1], [1]), box([-w], [w]))


def test_one_step_interval():
    r = one_step(sys1d(), Region.of(box([0], [2])))
    lo, hi = r.bounding_box()
    assert lo[0] == pytest.approx(-1) and hi[0] == pytest.approx(3)
    assert one_step(sys1d(), Region.empty(1)).is_empty()


def test_robust_one_step_interval():
    r = robust_one_step(sys1d(0.1), Region.of(box([0], [2])), box([-0.1], [0.1]))
    lo, hi = r.bounding_box()
    assert lo[0] == pytest.approx(-0.9) and hi[0] == pytest.approx(2.9)
    z = robust_one_step(sys1d(), Region.of(box([0], [2])), box([0], [0]))
    assert np.allclose(z.bounding_box(), one_step(sys1d(), Region.of(box([0], [2]))).bounding_box())


def test_one_step_point_oracle():
    """Υ(X) for the double integrator against per-point LP feasibility."""
    A = np.array([[1, 0.5], [0, 1]])
    B = np.array([[0.125], [0.5]])
    X = box([0, -2.5], [10, 2.5])
    sys = LinearSystem(A, B, X, box([-3], [3]), box([0, 0], [0, 0]))
    target = box([4, -1], [6, 1])
    r = one_step(sys, Region.of(target))
    for x in grid([0, -2.5], [10, 2.5], 0.5):
        # exists u in [-3, 3]: target.A (A x + B u) <= target.b
        G = np.vstack([target.A @ B, [[1.0], [-1.0]]])
        g = np.r_[target.b - target.A @ A @ x, 3, 3]
        assert r.contains(x, tol=1e-7) == (X.contains(x) and lp_feasible(G, g))


def test_robust_one_step_vertex_oracle():
    rng = np.random.default_rng(6)
    A = np.array([[1.0, 0.2], [0.0, 0.9]])
    B = np.eye(2)
    sys = LinearSystem(A, B, box([-3, -3], [3, 3]), box([-0.5, -0.5], [0.5, 0.5]),
                       box([-0.1, -0.1], [0.1, 0.1]))
    wmag = box([-0.1, -0.1], [0.1, 0.1])
    verts = np.array(list(itertools.product([-0.1, 0.1], repeat=2)))
    for _ in range(3):
        lo = rng.uniform(-2, 0, 2)
        target = box(lo, lo + rng.uniform(0.5, 2, 2))
        r = robust_one_step(sys, Region.of(target), wmag)
        for x in sample(r, 20, rng):
            # the LP over u must satisfy every vertex disturbance at once
            G = np.vstack([np.vstack([target.A for _ in verts]), sys.U.A])
            g = np.concatenate([target.b - target.A @ (A @ x + v) for v in verts] + [sys.U.b])
            assert lp_feasible(G, g)


def test_robust_one_step_union_is_flagged_inner():
    r = Region([box([0], [1]), box([1.5], [2])], 1)
    out = robust_one_step(sys1d(0.1), r, box([-0.1], [0.1]))
    assert out.meta.get("inner")


def test_one_step_monotone():
    sys = sys1d()
    small = one_step(sys, Region.of(box([0], [1])))
    big = one_step(sys, Region.of(box([-1], [2])))
    pts = grid([-5], [5], 0.1)
    assert np.all(big.contains(pts) | ~small.contains(pts))


def test_prune_merges_and_drops():
    r = Region([box([0], [1]), box([1], [2]), box([0.2], [0.5]), box([3], [3 + 1e-12])], 1)
    p = prune(r)
    assert len(p.parts) == 1
    assert np.allclose(p.bounding_box(), ([0], [2]))


def test_region_json_round_trip():
    r = Region([normalize(box([0, 0], [1, 1])), normalize(box([2, 0], [3, 1]))], 2)
    back = Region.from_dict(json.loads(r.dumps()))
    assert back.dumps() == r.dumps()


def test_region_difference_multi():
    r = region_difference(Region.of(box([0], [3])), Region([box([1], [2])], 1))
    assert r.contains([0.5]) and r.contains([2.5]) and not r.contains([1.5])
