import copy
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doekit.constraints import (Rows, assemble, build_constraints, customer_rows, rhs_b_q,
                                thermal_rows, voltage_rows)
from doekit.feeder import Sensitivities, build_sensitivities, load_feeder

from conftest import random_feeder_doc


def _sens_1(R=0.2, X=0.1):
    return Sensitivities(np.array([[R]]), np.array([[X]]), np.array([[1.0]]), np.array([1.0]))


def test_voltage_rows_single_node():
    rows = voltage_rows(_sens_1(), 0.95 ** 2, 1.05 ** 2)
    np.testing.assert_allclose(rows.A[:, 0], [0.2, -0.2])
    np.testing.assert_allclose(rows.B[:, 0], [0.1, -0.1])
    np.testing.assert_allclose(rows.c, [0.1025, 0.0975])


def test_voltage_upper_at_v0_has_zero_slack():
    rows = voltage_rows(_sens_1(), 0.9025, 1.0)
    assert rows.c[0] == 0.0


def test_voltage_row_count(small_system):
    f, s, _ = small_system(1, n_nodes=9)
    assert len(voltage_rows(s, 0.9, 1.1)) == 2 * f.n


def test_voltage_rows_errors():
    with pytest.raises(ValueError, match="inverted"):
        voltage_rows(_sens_1(), 1.1, 0.9)
    with pytest.raises(ValueError, match="outside"):
        voltage_rows(_sens_1(), 1.01, 1.1)


def test_thermal_square():
    rows = thermal_rows(_sens_1(), 1.0, rho=2)
    np.testing.assert_allclose(rows.A[:, 0], [1, 0, -1, 0], atol=1e-15)
    np.testing.assert_allclose(rows.B[:, 0], [0, 1, 0, -1], atol=1e-15)
    np.testing.assert_allclose(rows.c, math.cos(math.pi / 4))


def test_thermal_rho_too_small():
    with pytest.raises(ValueError):
        thermal_rows(_sens_1(), 1.0, rho=1)


@settings(max_examples=25, deadline=None)
@given(rho=st.integers(2, 40), S=st.floats(0.1, 10.0), seed=st.integers(0, 1000))
def test_thermal_polygon_inside_disc(rho, S, seed):
    rows = thermal_rows(_sens_1(), S, rho)
    pts = np.random.default_rng(seed).uniform(-1.5 * S, 1.5 * S, (4000, 2))
    inside = np.all(pts[:, :1] * rows.A[:, 0] + pts[:, 1:] * rows.B[:, 0] <= rows.c, axis=1)
    assert np.all(np.hypot(pts[inside, 0], pts[inside, 1]) <= S * (1 + 1e-12))


def _polygon_area(a, b, c):
    """Shoelace area of the polygon {a x + b y <= c} from adjacent facet intersections."""
    verts = []
    m = len(c)
    for k in range(m):
        j = (k + 1) % m
        verts.append(np.linalg.solve([[a[k], b[k]], [a[j], b[j]]], [c[k], c[j]]))
    v = np.array(verts)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def test_thermal_rho32_area():
    rows = thermal_rows(_sens_1(), 1.0, rho=32)
    assert _polygon_area(rows.A[:, 0], rows.B[:, 0], rows.c) >= 0.995 * math.pi


def test_customer_rows_scaling(two_node_doc):
    f = load_feeder(two_node_doc)
    rows = customer_rows(f)
    np.testing.assert_allclose(rows.c, [0.5, 0.5, 0.2, 0.2])
    np.testing.assert_allclose(rows.A[:, 0], [1, -1, 0, 0])
    np.testing.assert_allclose(rows.B[:, 0], [0, 0, 1, -1])


def test_customer_zero_limit_is_degenerate(two_node_doc):
    doc = copy.deepcopy(two_node_doc)
    doc["customers"][0]["p_max_kw"] = 0.0
    rows = customer_rows(load_feeder(doc))
    assert rows.c[0] == rows.c[1] == 0.0


def test_node_without_customer_is_pinned(two_node_doc):
    doc = copy.deepcopy(two_node_doc)
    doc["nodes"].append({"id": "b"})
    doc["lines"].append({"from": "a", "to": "b", "r_pu": 0.1, "x_pu": 0.1, "s_max_kva": 10})
    f = load_feeder(doc)
    rows = customer_rows(f)
    b = f.index("b")
    sel = [k for k, t in enumerate(rows.tags) if t[1] == b]
    assert len(sel) == 4
    np.testing.assert_array_equal(rows.c[sel], 0.0)


def test_customer_extra_facets(two_node_doc):
    rows = customer_rows(load_feeder(two_node_doc), extra={0: [(1.0, 1.0, 0.6)]})
    assert len(rows) == 5 and rows.tags[-1] == ("customer", 0, "extra0")


def test_assemble_counts(two_node_doc):
    f = load_feeder(two_node_doc)
    s = build_sensitivities(f)
    cs = build_constraints(f, s, rho=2)
    assert len(cs) == 2 + 4 + 4
    np.testing.assert_array_equal(cs.H, np.hstack([cs.A, cs.B]))


def test_assemble_dimension_mismatch():
    a = Rows(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros(1), (("x",),))
    b = Rows(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros(1), (("y",),))
    with pytest.raises(ValueError, match="mismatch"):
        assemble(a, b)


def test_basecase_row_formula_and_tags(basecase):
    _, design, _ = basecase
    f, cs = design.feeder, design.cs
    rho = 8
    assert len(cs) == 2 * f.n + 2 * rho * len(f.lines) + 4 * f.n
    fam = cs.family()
    counts = {k: int(np.sum(fam == k)) for k in ("voltage", "thermal", "customer")}
    assert sum(counts.values()) == len(cs)
    assert counts == {"voltage": 2 * f.n, "thermal": 2 * rho * f.n, "customer": 4 * f.n}


def test_slater_point_for_zero_load(small_system):
    _, _, cs = small_system(2, n_nodes=6)
    assert np.all(cs.violation(np.zeros(cs.n), np.zeros(cs.n)) <= 0)
    net = cs.network
    assert np.all(cs.c[net] > 0)


def test_rhs_zero_offset(small_system):
    _, _, cs = small_system(4)
    np.testing.assert_array_equal(rhs_b_q(cs, np.zeros(2 * cs.n), np.zeros(cs.n)), cs.c)


def test_rhs_fixed_load_shift(small_system):
    _, _, cs = small_system(4)
    i = 2
    s_fixed = np.zeros(2 * cs.n)
    s_fixed[i] = -0.1  # 1 kW consumption on a 10 kVA base
    expected = cs.c + 0.1 * cs.A[:, i] * cs.network
    np.testing.assert_allclose(rhs_b_q(cs, s_fixed, np.zeros(cs.n)), expected)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_rhs_linearity(seed):
    rng = np.random.default_rng(seed)
    f = load_feeder(random_feeder_doc(rng, 5))
    cs = build_constraints(f, build_sensitivities(f))
    s1, s2 = rng.normal(size=(2, 2 * cs.n))
    q1, q2 = rng.normal(size=(2, cs.n))
    a, b = rng.normal(size=2)
    lhs = rhs_b_q(cs, a * s1 + b * s2, a * q1 + b * q2) - cs.c
    rhs = a * (rhs_b_q(cs, s1, q1) - cs.c) + b * (rhs_b_q(cs, s2, q2) - cs.c)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    np.testing.assert_allclose(rhs_b_q(cs, s1, q1) - rhs_b_q(cs, s1, 0 * q1), -cs.B @ q1, atol=1e-12)


def test_rhs_dimension_mismatch(small_system):
    _, _, cs = small_system(4)
    with pytest.raises(ValueError):
        rhs_b_q(cs, np.zeros(3), np.zeros(cs.n))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_stacked_points_satisfy_each_family(seed):
    rng = np.random.default_rng(seed)
    f = load_feeder(random_feeder_doc(rng, 5))
    s = build_sensitivities(f)
    cs = build_constraints(f, s)
    lim = np.maximum(f.p_max, 1e-9)
    P = rng.uniform(-1, 1, (500, f.n)) * lim
    Q = rng.uniform(-1, 1, (500, f.n)) * np.maximum(f.q_max, 1e-9)
    ok = np.all(P @ cs.A.T + Q @ cs.B.T <= cs.c, axis=1)
    v = P[ok] @ s.R.T + Q[ok] @ s.X.T + s.v0
    assert np.all(v <= 1.05 ** 2 + 1e-12) and np.all(v >= 0.95 ** 2 - 1e-12)
    flows = np.hypot(P[ok] @ s.M.T, Q[ok] @ s.M.T)
    assert np.all(flows <= f.s_max + 1e-12)
    assert np.all(np.abs(P[ok]) <= f.p_max + 1e-12)
