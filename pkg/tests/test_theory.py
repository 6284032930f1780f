import math
from collections import Counter

import numpy as np
import pytest

from poisonbench.aggregators import AggregatorSpec, DomainError, aggregate
from poisonbench.core import ConfigError
from poisonbench.theory import (QuadraticInstance, build_indistinguishable_sets, lower_bound_value, quad_gradient,
                                run_instance, softmax_A_bound, softmax_xi_bound, theorem_error_bound)
from poisonbench.trainer import measure_A, measure_sigma2, measure_xi


def test_quad_gradient_examples():
    inst = QuadraticInstance(10, 9, 1.0, 1.0, 1)
    np.testing.assert_allclose(quad_gradient(inst, 0, np.zeros(2)), [0.9 / math.sqrt(2), 0.0], atol=1e-15)
    x = np.array([0.7, -3.1])
    diff = quad_gradient(inst, 0, x) - quad_gradient(inst, 9, x)
    np.testing.assert_allclose(diff, 0.9 / math.sqrt(2) * np.array([1.0, -1.0]), atol=1e-15)


def test_instance_labels_and_multiset():
    i1, i2 = QuadraticInstance(10, 7, instance_id=1), QuadraticInstance(10, 7, instance_id=2)
    assert i1.labels == [1] * 7 + [2] * 3
    assert i2.labels == [2] * 3 + [1] * 7
    assert Counter(i1.labels) == Counter(i2.labels)


@pytest.mark.parametrize("delta_R", [(0.1, 9), (0.2, 8), (0.3, 7)])
def test_instance_two_minimizer(delta_R):
    d, R = delta_R
    inst = QuadraticInstance(10, R, 1.0, 2.0, 2)
    expect = np.array([-(1 - 2 * d) / (math.sqrt(2) * 2.0), -d / (math.sqrt(2) * 2.0)])
    np.testing.assert_allclose(inst.minimizer(), expect, atol=1e-15)
    np.testing.assert_allclose(inst.objective_gradient(expect), 0.0, atol=1e-15)


@pytest.mark.parametrize("R", [9, 8, 7])
def test_assumption_audit(R):
    d = 1 - R / 10
    for inst_id, xi_e, A_e in ((1, 0.0, 1 - d), (2, max(abs(1 - 2 * d), d), d)):
        inst = QuadraticInstance(10, R, 1.0, 1.0, inst_id)
        model, ws = inst.model(), inst.workers()
        reg = [w for w in ws if not w.poisoned]
        bad = [w for w in ws if w.poisoned]
        for x in (np.zeros(2), np.array([1.5, -0.4])):
            assert measure_xi(model, x, reg) == pytest.approx(xi_e, abs=1e-12)
            assert measure_A(model, x, bad, reg) == pytest.approx(A_e, abs=1e-12)
            assert all(measure_sigma2(model, x, w) <= 1e-24 for w in ws)


def test_lower_bound_value():
    assert lower_bound_value(0.1, 1.0, 1.0) == pytest.approx(0.00125)
    assert lower_bound_value(0.0, 1.0, 1.0) == 0.0
    assert lower_bound_value(0.3, 0.0, 1.0) == 0.0
    assert lower_bound_value(0.2, 3.0, 0.5) == pytest.approx(0.04 * 0.25 / 8)


@pytest.mark.parametrize("R", [9, 8, 7])
def test_lower_bound_realized(R):
    d = 1 - R / 10
    for kind in ("mean", "trimean", "cc", "faba"):
        vals = [run_instance(QuadraticInstance(10, R, 1.0, 1.0, i), AggregatorSpec(kind), 0.1, 500) for i in (1, 2)]
        assert max(vals) >= d * d / 8


def test_softmax_bounds():
    K = 4
    shards = [np.array([[1.0, 0.0]]), np.array([[0.0, 1.0], [0.0, 1.0]])]
    assert softmax_A_bound(shards, K) == pytest.approx(4.0)
    a = np.array([[3.0, 4.0]])
    assert softmax_A_bound([a], 1) == pytest.approx(10.0)
    m = 2.5
    reg = [np.array([[m, 0.0]])] * 9
    up, low = softmax_xi_bound(reg, 10)
    assert up == pytest.approx(2 * math.sqrt(10) * m)
    assert low == pytest.approx(0.8 * m)
    assert softmax_xi_bound([np.zeros((3, 2))] * 3, 5) == (0.0, 0.0)


def test_softmax_bounds_reject_negative_features():
    with pytest.raises(ConfigError, match="worker 1, sample 2"):
        softmax_A_bound([np.ones((3, 2)), np.array([[1.0, 1.0], [0.0, 0.0], [0.0, -1.0]])], 3)


def test_indistinguishable_regime_two():
    s1, s2 = build_indistinguishable_sets(0.4, 0.5, 10, 6)
    np.testing.assert_array_equal(s1.ravel(), [0] * 6 + [1] * 4)
    np.testing.assert_array_equal(s2.ravel(), [1] * 4 + [0] * 6)
    assert sorted(s1.ravel()) == sorted(s2.ravel())
    ybar2 = s2[:6].mean()
    assert ybar2 == pytest.approx(0.4 / 0.6)
    dev2 = np.abs(s2[:6] - ybar2).max()
    assert dev2 == pytest.approx(max(1 - 0.8, 0.4) / 0.6)


def test_indistinguishable_regime_one():
    s1, s2 = build_indistinguishable_sets(0.5, 1.0, 10, 5)
    np.testing.assert_array_equal(s1.ravel(), [0] * 5 + [2] * 5)
    assert sorted(s1.ravel()) == sorted(s2.ravel())


def test_indistinguishable_domain():
    with pytest.raises(DomainError):
        build_indistinguishable_sets(0.3, 0.9, 10, 7)  # rho above the lower bound 0.75


@pytest.mark.parametrize("case", [(10, 5, 1.0), (10, 4, 1.0), (10, 7, 0.5), (10, 6, 0.9)])
def test_aggregators_cannot_tell_sets_apart(case):
    W, R, rho = case
    s1, s2 = build_indistinguishable_sets(1 - R / W, rho, W, R)
    for spec in (AggregatorSpec("mean"), AggregatorSpec("faba"), AggregatorSpec("cc", cc_start="zero"),
                 AggregatorSpec("trimean", assumed_regular=max(R, W // 2 + 1))):
        o1, o2 = aggregate(spec, s1, R), aggregate(spec, s2, R)
        assert np.array_equal(o1, o2)
        viol = [abs(o[0] - s[:R].mean()) > rho * np.abs(s[:R] - s[:R].mean()).max() for o, s in ((o1, s1), (o2, s2))]
        assert any(viol)


def test_error_bound_limits():
    big = 1e18
    assert theorem_error_bound("ragg", 0.3, 2.0, 1.0, 1.0, 1.0, 9, big) == pytest.approx(15 * 0.09 * 4, rel=1e-6)
    assert theorem_error_bound("mean", 0.1, 3.0, 1.0, 1.0, 1.0, 9, big) == pytest.approx(15 * 0.01 * 9, rel=1e-6)
    L, F0, T = 2.0, 3.0, 50
    assert theorem_error_bound("ragg", 0.0, 1.0, 0.0, F0, L, 9, T) == pytest.approx(32 * L * F0 / T)
    assert theorem_error_bound("ragg", 0.0, 1.0, 0.0, F0, L, 9, T, grad0_norm=2.0) == pytest.approx(
        32 * L * F0 / T - 2.0 / T)
    with pytest.raises(ConfigError):
        theorem_error_bound("krum", 0.1, 1.0, 1.0, 1.0, 1.0, 9, 10)


def test_error_bound_decreases_in_T():
    vals = [theorem_error_bound("mean", 0.2, 1.0, 1.0, 1.0, 1.0, 8, T) for T in (10, 100, 1000, 10_000)]
    assert vals == sorted(vals, reverse=True)
