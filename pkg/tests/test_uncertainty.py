import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doekit.constraints import rhs_b_q
from doekit.uncertainty import (UncertaintyModel, brute_force_delta, delta_vector, tighten_rhs,
                                worst_case_delta, worst_case_deltas)

rows = st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=8)
budgets = st.floats(0, 9, allow_nan=False)


def test_examples():
    assert worst_case_delta([3, 1, 2], 0) == 0.0
    assert worst_case_delta([3, 1, 2], 1.5) == pytest.approx(4.0)
    assert brute_force_delta([3, 1, 2], 1.5) == pytest.approx(4.0)
    assert worst_case_delta([-3, 1, 2], 3) == pytest.approx(6.0)


def test_errors():
    with pytest.raises(ValueError):
        worst_case_delta([1.0], -0.1)
    with pytest.raises(ValueError):
        brute_force_delta(np.ones(13), 1.0)


def test_zero_row():
    for g in (0, 0.5, 2, 3):
        assert brute_force_delta(np.zeros(3), g) == 0.0
        assert worst_case_delta(np.zeros(3), g) == 0.0


@settings(max_examples=300, deadline=None)
@given(h=rows, gamma=budgets)
def test_closed_form_equals_vertex_oracle(h, gamma):
    assert abs(worst_case_delta(h, gamma) - brute_force_delta(h, gamma)) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(h=rows, gamma=st.integers(0, 8))
def test_integer_budget_vertices(h, gamma):
    # the max over {0, +-1} sign vectors with at most gamma nonzeros matches
    mag = np.sort(np.abs(h))[::-1]
    assert worst_case_delta(h, gamma) == pytest.approx(mag[:gamma].sum())


@settings(max_examples=100, deadline=None)
@given(h=rows, seed=st.integers(0, 1000))
def test_monotone_concave_piecewise_linear(h, seed):
    g = np.linspace(0, len(h) + 1, 4 * (len(h) + 1) + 1)
    d = np.array([worst_case_delta(h, x) for x in g])
    assert np.all(np.diff(d) >= -1e-12)
    # concavity: slopes nonincreasing
    slopes = np.diff(d) / np.diff(g)
    assert np.all(np.diff(slopes) <= 1e-9)
    # linear between integers
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, len(h)))
    t = rng.random()
    mid = worst_case_delta(h, k + t)
    assert mid == pytest.approx((1 - t) * worst_case_delta(h, k) + t * worst_case_delta(h, k + 1))


@settings(max_examples=100, deadline=None)
@given(h=rows, gamma=budgets, seed=st.integers(0, 1000))
def test_sign_and_permutation_invariance(h, gamma, seed):
    rng = np.random.default_rng(seed)
    h = np.asarray(h)
    flipped = h * rng.choice([-1.0, 1.0], len(h))
    permuted = rng.permutation(h)
    base = worst_case_delta(h, gamma)
    assert worst_case_delta(flipped, gamma) == pytest.approx(base, abs=1e-12)
    assert worst_case_delta(permuted, gamma) == pytest.approx(base, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 1000), gamma=budgets)
def test_rowwise_matches_scalar(seed, gamma):
    HD = np.random.default_rng(seed).normal(size=(6, 7))
    np.testing.assert_allclose(worst_case_deltas(HD, gamma),
                               [worst_case_delta(r, gamma) for r in HD], atol=1e-12)


def test_tighten_nominal_and_zero_deviation(small_system):
    f, _, cs = small_system(3)
    q = np.random.default_rng(0).normal(size=cs.n) * 0.01
    um0 = UncertaintyModel(f.s_fixed, 0.1 * np.abs(f.s_fixed), 0.0)
    np.testing.assert_allclose(tighten_rhs(cs, um0, q), rhs_b_q(cs, f.s_fixed, q))
    um_zero = UncertaintyModel(f.s_fixed, np.zeros(2 * cs.n), 5.0)
    np.testing.assert_allclose(tighten_rhs(cs, um_zero, q), rhs_b_q(cs, f.s_fixed, q))


def test_tighten_monotone_in_gamma(small_system):
    f, _, cs = small_system(8, n_nodes=5)
    dev = 0.3 * np.abs(f.s_fixed)
    q = np.zeros(cs.n)
    prev = None
    for g in np.arange(0, 2 * cs.n + 0.5, 0.5):
        um = UncertaintyModel(f.s_fixed, dev, float(g))
        b = tighten_rhs(cs, um, q)
        if prev is not None:
            assert np.all(b <= prev + 1e-15)
        prev = b
    # row-wise agreement with the vertex oracle (2N = 10 components)
    um = UncertaintyModel(f.s_fixed, dev, 3.5)
    HD = cs.H_fixed * dev[None, :]
    oracle = np.array([brute_force_delta(r, 3.5) for r in HD])
    np.testing.assert_allclose(delta_vector(cs, um), oracle, atol=1e-12)


def test_q_deviation_flag(small_system):
    f, _, _ = small_system(2)
    um = UncertaintyModel.proportional(f.s_fixed, 0.2, 3, q_deviations=False)
    n = len(f.s_fixed) // 2
    assert np.all(um.deviation[n:] == 0) and np.any(um.deviation[:n] > 0)


def test_model_validation():
    with pytest.raises(ValueError):
        UncertaintyModel(np.zeros(4), -np.ones(4), 1.0)
    with pytest.raises(ValueError):
        UncertaintyModel(np.zeros(4), np.ones(4), 5.0)
