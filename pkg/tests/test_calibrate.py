import numpy as np
import pytest
from hypothesis import given, strategies as st

from otdc.calibrate import (
    CalibrationConfig,
    barycenter_map,
    geometric_repair,
    objective,
    search_lambda,
)
from otdc.fairness import ScoreTable, auc, dsp


def two_groups(a, b, labels_a=None, labels_b=None):
    a, b = list(a), list(b)
    la = labels_a if labels_a is not None else [k % 2 for k in range(len(a))]
    lb = labels_b if labels_b is not None else [k % 2 for k in range(len(b))]
    ids = [f"a{k}" for k in range(len(a))] + [f"b{k}" for k in range(len(b))]
    return ScoreTable(ids, a + b, ["a"] * len(a) + ["b"] * len(b), list(la) + list(lb))


def shifted_table(seed=0, n=200, shift=0.2):
    """Group b scores are group a scores minus ``shift``, clipped at 0."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    a = np.clip(0.35 + 0.4 * labels + rng.normal(0, 0.15, n), 0, 1)
    b = np.clip(a - shift, 0, 1)
    return two_groups(a, b, labels, labels)


# barycenter map --------------------------------------------------------------


def test_point_masses_meet_in_the_middle():
    t = two_groups([0.2] * 3, [0.8] * 3)
    s_hat = barycenter_map(t, alpha=0.5)
    assert np.allclose(s_hat.scores, 0.5)
    half = geometric_repair(t, s_hat, 0.5)
    assert np.allclose(half.scores, [0.35] * 3 + [0.65] * 3)


def test_identical_groups_are_a_fixed_point():
    rng = np.random.default_rng(1)
    x = rng.random(50)
    t = two_groups(x, x[::-1])
    s_hat = barycenter_map(t, quantile_grid=1000)
    assert np.max(np.abs(s_hat.scores - t.scores)) <= 1 / 1000 + 1e-12


def test_full_calibration_evens_out_rates():
    rng = np.random.default_rng(2)
    for _ in range(10):
        n = int(rng.integers(5, 300))
        t = two_groups(rng.random(n), rng.random(n) ** 2)
        assert dsp(barycenter_map(t)) <= 1e-6


def test_ties_stay_tied():
    t = two_groups([0.1, 0.4, 0.4, 0.9], [0.3, 0.5, 0.6, 0.7])
    s_hat = barycenter_map(t)
    assert s_hat.scores[1] == s_hat.scores[2]


def test_within_group_auc_survives_full_calibration():
    rng = np.random.default_rng(3)
    for _ in range(10):
        t = shifted_table(int(rng.integers(1 << 30)), n=int(rng.integers(20, 400)))
        s_hat = barycenter_map(t)
        for g in ("a", "b"):
            assert auc(s_hat, g) == auc(t, g)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=30),
       st.lists(st.floats(0, 1), min_size=2, max_size=30),
       st.floats(0, 1))
def test_repair_preserves_ids_and_order_within_groups(a, b, lam):
    t = two_groups(a, b)
    s = geometric_repair(t, barycenter_map(t), lam)
    assert s.ids == t.ids and np.array_equal(s.groups, t.groups)
    assert np.all((s.scores >= 0) & (s.scores <= 1))
    for g in ("a", "b"):
        before, after = t.select(g), s.select(g)
        i, j = np.triu_indices(before.size, 1)
        assert np.all(after[i][before[i] < before[j]] <= after[j][before[i] < before[j]] + 1e-12)


def test_geometric_repair_endpoints_and_errors():
    t = shifted_table()
    s_hat = barycenter_map(t)
    assert geometric_repair(t, s_hat, 0.0) is t
    assert geometric_repair(t, s_hat, 1.0) is s_hat
    with pytest.raises(ValueError):
        geometric_repair(t, s_hat, 1.1)
    other = ScoreTable([i + "x" for i in t.ids], t.scores, t.groups, t.labels)
    with pytest.raises(ValueError):
        geometric_repair(t, other, 0.5)


def test_single_group_is_rejected():
    t = ScoreTable(["x", "y"], [0.1, 0.9], ["a", "a"], [0, 1])
    with pytest.raises(ValueError):
        barycenter_map(t)


# lambda search ---------------------------------------------------------------


def test_unbiased_input_keeps_lambda_zero():
    rng = np.random.default_rng(4)
    x = rng.random(40)
    labels = rng.integers(0, 2, 40)
    labels[:2] = [0, 1]
    t = two_groups(x, x, labels, labels)
    res = search_lambda(t)
    assert res.lambda_star == 0.0
    assert res.calibrated is t
    assert res.mean_abs_change == 0.0


def test_search_reduces_the_shifted_bias():
    t = shifted_table()
    res = search_lambda(t)
    assert res.metrics_after["DSP-EO"] <= res.metrics_before["DSP-EO"]
    assert res.objective_after < 0.5 * res.objective_before
    assert res.lambda_star > 0


def test_targeted_search_distorts_auc_less_than_pr_calibration():
    t = shifted_table(seed=5)
    base = auc(t)
    targeted = search_lambda(t, CalibrationConfig(("TPR", "FPR")))
    full_pr = barycenter_map(t)
    assert base - auc(targeted.calibrated) <= base - auc(full_pr) + 1e-12


@given(st.integers(0, 2**32 - 1), st.sampled_from([("PR",), ("TPR",), ("TPR", "FPR")]))
def test_search_never_increases_objective(seed, targets):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 40))
    labels = rng.integers(0, 2, 2 * n)
    labels[[0, 1, n, n + 1]] = [0, 1, 0, 1]
    t = two_groups(rng.random(n), rng.random(n) * rng.random(), labels[:n], labels[n:])
    res = search_lambda(t, CalibrationConfig(targets, lambda_grid=11))
    assert res.objective_after <= res.objective_before
    assert res.objective_before == objective(t, targets)
    assert res.lambda_star == res.lambdas[np.argmin(res.objectives)]
    assert res.calibrated.ids == t.ids


def test_config_validation():
    assert CalibrationConfig(("tpr", "TPR")).gamma_targets == ("TPR",)
    for bad in (dict(gamma_targets=()), dict(gamma_targets=("AUC",)), dict(alpha=2.0),
                dict(lambda_grid=1), dict(quantile_grid=1)):
        with pytest.raises(ValueError):
            CalibrationConfig(**bad)
