import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doekit.fairness import (FairnessConfig, gini, normalize_weights, split_cohort,
                             weight_normalized_allocations)

nonneg = st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=30)


def test_normalize_examples():
    np.testing.assert_allclose(normalize_weights([5, 5]), [0.5, 0.5])
    np.testing.assert_allclose(normalize_weights([3, 5, 7, 5]), [0.15, 0.25, 0.35, 0.25])


def test_normalize_errors():
    with pytest.raises(ValueError):
        normalize_weights([0, 0])
    with pytest.raises(ValueError):
        normalize_weights([1, -1])


@given(w=nonneg)
def test_normalize_sums_to_one(w):
    if sum(w) <= 0:
        return
    assert abs(normalize_weights(w).sum() - 1) <= 1e-12


def test_allocation_example():
    x, kept = weight_normalized_allocations([3.0], [3.0], [0.25], [0.25])
    assert x[0] == pytest.approx(12.0) and kept.all()


def test_allocation_excludes_zero_weight():
    x, kept = weight_normalized_allocations([3.0, 1.0], [3.0, 1.0], [0.5, 0.0], [0.5, 0.0])
    assert len(x) == 1 and not kept[1]
    with pytest.raises(ValueError):
        weight_normalized_allocations([1.0], [1.0], [0.0], [0.0])


def test_gini_examples():
    assert gini([1, 1, 1, 1]) == 0.0
    assert gini([0, 0, 0, 1]) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        gini([0, 0])


@settings(max_examples=200)
@given(x=nonneg, k=st.floats(0.01, 100), seed=st.integers(0, 1000))
def test_gini_properties(x, k, seed):
    x = np.asarray(x)
    if x.mean() <= 1e-9:
        return
    g = gini(x)
    n = len(x)
    assert -1e-12 <= g <= 1 - 1 / n + 1e-12
    assert gini(k * x) == pytest.approx(g, abs=1e-9)
    assert gini(np.random.default_rng(seed).permutation(x)) == pytest.approx(g, abs=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        FairnessConfig(sigma_plus=1.5)
    with pytest.raises(ValueError):
        FairnessConfig(omega_plus={0: -1.0})
    assert not FairnessConfig().active
    assert FairnessConfig(sigma_minus=0.5).active


def test_participant_weights_cohort_last():
    fc = FairnessConfig(0.5, 0.5, {1: 3.0, 2: 5.0, 3: 7.0, 4: 5.0}, {1: 1.0, 2: 1.0, 3: 1.0, 4: 1.0})
    wp, wm = fc.participant_weights([3, 4], [1, 2])
    np.testing.assert_allclose(wp, [3, 5, 12])
    np.testing.assert_allclose(wm, [1, 1, 2])
    fc2 = FairnessConfig(0.5, 0.5, {1: 3.0}, {1: 1.0}, omega_group_plus=5.0, omega_group_minus=2.0)
    wp, wm = fc2.participant_weights([3], [1])
    np.testing.assert_allclose(wp, [3, 5])
    np.testing.assert_allclose(wm, [1, 2])


def test_split_cohort():
    np.testing.assert_allclose(split_cohort(10.0, [1, 3]), [2.5, 7.5])
    np.testing.assert_allclose(split_cohort(6.0, [0, 0, 0]), [2, 2, 2])
