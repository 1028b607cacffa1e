import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doekit.geometry import (EmptyPolytope, Polytope, UnboundedPolytope, aggregate_range,
                             chebyshev_center, ellipsoid_boundary, ellipsoid_support, ellipsoid_volume,
                             geometric_mean_size, pull_inside, residual_polytope, sample_polytope,
                             volume_estimate)


def facet_ball(n_facets):
    """2D polygon with ``n_facets`` edges tangent to the unit circle; area ``m tan(pi / m)``."""
    th = 2 * np.pi * np.arange(n_facets) / n_facets
    return Polytope(np.c_[np.cos(th), np.sin(th)], np.ones(n_facets)), n_facets * math.tan(math.pi / n_facets)


def half_cube(n):
    """``[0, 1]^n`` cut by ``sum x <= n / 2``: exactly half the cube by symmetry."""
    box = Polytope.box(np.zeros(n), np.ones(n))
    return Polytope(np.vstack([box.F, np.ones((1, n))]), np.r_[box.g, n / 2])


def vertex_oracle(poly):
    """All vertices by brute-force facet intersection."""
    n = poly.n
    verts = []
    for rows in itertools.combinations(range(len(poly)), n):
        F = poly.F[list(rows)]
        if abs(np.linalg.det(F)) < 1e-12:
            continue
        x = np.linalg.solve(F, poly.g[list(rows)])
        if poly.contains(x, tol=1e-9):
            verts.append(x)
    return np.array(verts)


@pytest.mark.parametrize("n", [2, 4, 8])
def test_volume_of_boxes(n):
    lo = -np.arange(1, n + 1) / n
    hi = np.ones(n) * 0.7
    poly = Polytope.box(lo, hi)
    vol, _ = volume_estimate(poly, 50_000, seed=1)
    assert vol == pytest.approx(np.prod(hi - lo), rel=0.05)


@pytest.mark.parametrize("n", [2, 3, 8])
def test_volume_of_half_cubes(n):
    vol, _ = volume_estimate(half_cube(n), 50_000, seed=2)
    assert vol == pytest.approx(0.5, rel=0.05)


def test_volume_of_facet_ball():
    poly, area = facet_ball(64)
    vol, _ = volume_estimate(poly, 50_000, seed=3)
    assert vol == pytest.approx(area, rel=0.07)
    vol, _ = volume_estimate(poly, 50_000, seed=3, method="hit-and-run")
    assert vol == pytest.approx(area, rel=0.07)


def test_stderr_shrinks_with_budget():
    poly = half_cube(3)
    _, se1 = volume_estimate(poly, 10_000, seed=4)
    _, se4 = volume_estimate(poly, 40_000, seed=4)
    assert 0.35 <= se4 / se1 <= 0.65


def test_volume_is_deterministic():
    poly = half_cube(7)
    assert volume_estimate(poly, 20_000, seed=9) == volume_estimate(poly, 20_000, seed=9)


def test_volume_errors():
    with pytest.raises(ValueError):
        volume_estimate(half_cube(2), 0)
    with pytest.raises(UnboundedPolytope):
        volume_estimate(Polytope(np.array([[1.0, 0.0]]), [1.0]), 100)
    with pytest.raises(EmptyPolytope):
        volume_estimate(Polytope(np.array([[1.0], [-1.0]]), [-1.0, -1.0]), 100)


def test_chebyshev_square_and_simplex():
    x, r = chebyshev_center(Polytope.box([0, 0], [1, 1]))
    np.testing.assert_allclose(x, [0.5, 0.5], atol=1e-8)
    assert r == pytest.approx(0.5, abs=1e-8)
    simplex = Polytope(np.array([[-1.0, 0], [0, -1], [1, 1]]), [0, 0, 1])
    x, r = chebyshev_center(simplex)
    rr = 1 / (2 + math.sqrt(2))
    assert r == pytest.approx(rr, abs=1e-8)
    np.testing.assert_allclose(x, [rr, rr], atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.sampled_from([2, 3]))
def test_aggregate_range_matches_vertex_oracle(seed, n):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(4 * n, n))
    poly = Polytope(F, 1.0 + rng.random(4 * n))
    try:
        V = vertex_oracle(poly)
        lo, hi = aggregate_range(poly)
    except UnboundedPolytope:
        return
    box_p = rng.random(3)
    box_m = -rng.random(3)
    lo2, hi2 = aggregate_range(poly, (box_p, box_m))
    s = V.sum(axis=1)
    assert lo == pytest.approx(s.min(), abs=1e-8) and hi == pytest.approx(s.max(), abs=1e-8)
    assert lo2 == pytest.approx(s.min() + box_m.sum(), abs=1e-8)
    assert hi2 == pytest.approx(s.max() + box_p.sum(), abs=1e-8)
    d = rng.normal(size=n)
    lo_d, hi_d = aggregate_range(poly, direction=d)
    assert lo_d == pytest.approx((V @ d).min(), abs=1e-8)
    assert hi_d == pytest.approx((V @ d).max(), abs=1e-8)


def test_aggregate_range_box_only():
    assert aggregate_range(None, ([1.0, 2.0], [-3.0, 0.0])) == (-3.0, 3.0)
    assert aggregate_range(None, ([1.0, 2.0], [-3.0, 0.0]), direction=[-1.0, 1.0]) == (-1.0, 5.0)


def test_ellipsoid_formulas():
    W = np.diag([2.0, 3.0])
    assert ellipsoid_volume(W) == pytest.approx(6 * math.pi)
    assert ellipsoid_support(W, [1.0, 0.0], [1.0, 0.0]) == pytest.approx((-1.0, 3.0))
    assert ellipsoid_volume(np.zeros((0, 0))) == 1.0
    assert ellipsoid_volume(np.zeros((2, 2))) == 0.0


def test_geometric_mean_size():
    assert geometric_mean_size(8.0, 2.0, 4) == pytest.approx(2.0)
    assert geometric_mean_size(0.0, 2.0, 2) == 0.0
    with pytest.raises(ValueError):
        geometric_mean_size(1.0, 1.0, 0)


def test_reduced_keeps_tightest_duplicate():
    poly = Polytope(np.array([[1.0, 0], [2.0, 0], [0, 0], [0, 1]]), [1.0, 1.0, 0.5, 2.0])
    red = poly.reduced()
    assert len(red) == 2
    assert red.contains([0.5, 2.0]) and not red.contains([0.6, 0.0])
    with pytest.raises(EmptyPolytope):
        Polytope(np.zeros((1, 2)), [-1.0]).reduced()


def test_document_round_trip():
    poly, _ = facet_ball(8)
    back = Polytope.from_document(poly.to_document())
    np.testing.assert_array_equal(back.F, poly.F)


def test_samplers_stay_inside():
    poly = half_cube(4)
    X = sample_polytope(poly, 500, np.random.default_rng(0))
    assert X.shape == (500, 4) and np.all(poly.contains(X))
    # hit-and-run mean of the half cube is biased toward the origin corner
    assert X.sum(axis=1).mean() < 2.0
    far = np.full((3, 4), 5.0)
    inside = pull_inside(poly, far, np.full(4, 0.25))
    assert np.all(poly.contains(inside)) and np.all(np.abs(poly.slack(inside)).min(axis=1) < 1e-12)


def test_basecase_ellipsoid_inside_residual_polytope(basecase):
    _, design, sol = basecase
    poly = residual_polytope(design.dp, sol)
    assert poly.n == 3
    pts = ellipsoid_boundary(sol.W, sol.center, 5000, np.random.default_rng(0))
    assert np.all(poly.slack(pts) >= -1e-6)
    assert poly.contains(np.zeros(3))
    lo, hi = aggregate_range(poly)
    assert lo <= sol.center.sum() <= hi
