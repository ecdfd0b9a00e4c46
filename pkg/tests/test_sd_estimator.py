import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confounder_forge.causal.data import Dataset, Observation
from confounder_forge.sd_estimator import (
    EstimationError,
    PooledSd,
    bootstrap_interval,
    group_values,
    pooled_sd,
)


# --------------------------------------------------------------- pooled sd


def test_single_group_equals_its_sd():
    vals = [1.0, 4.0, 2.5, 0.5]
    assert abs(pooled_sd({"g": vals}) - np.std(vals, ddof=1)) <= 1e-14


def test_equal_sds_pool_to_same_value():
    a = [0.0, 2.0]
    b = [10.0, 12.0]
    c = [5.0, 7.0]
    s = np.std(a, ddof=1)
    assert abs(pooled_sd({"a": a, "b": b, "c": c}) - s) <= 1e-12


def test_hand_computed_pooled_value():
    got = pooled_sd({"first": [0.0, 1.0, 2.0], "second": [0.0, 2.0]})
    assert abs(got - math.sqrt(4.0 / 3.0)) <= 1e-12


@given(
    shift_a=st.floats(-50, 50),
    shift_b=st.floats(-50, 50),
)
@settings(max_examples=50)
def test_pooled_sd_mean_shift_invariant(shift_a, shift_b):
    a = np.array([0.1, 1.7, -2.3, 0.9])
    b = np.array([5.0, 6.5, 4.2])
    base = pooled_sd({"a": a, "b": b})
    shifted = pooled_sd({"a": a + shift_a, "b": b + shift_b})
    assert abs(base - shifted) <= 1e-10


def test_small_group_excluded_with_warning():
    with pytest.warns(UserWarning, match="excluded"):
        got = pooled_sd({"tiny": [1.0], "full": [0.0, 1.0, 2.0]})
    assert abs(got - 1.0) <= 1e-14


def test_all_groups_too_small_is_an_error():
    with pytest.raises(EstimationError):
        with pytest.warns(UserWarning):
            pooled_sd({"a": [1.0], "b": []})


# ---------------------------------------------------------------- grouping


def toy_dataset():
    rows = [
        Observation(1, (2.0,), 10.0),   # treated complier
        Observation(1, (3.0,), 11.0),   # treated complier
        Observation(1, (0.0,), 12.0),   # treated never-taker
        Observation(1, (0.0,), 13.0),   # treated never-taker
        Observation(0, (0.0,), 14.0),   # control, unknown
        Observation(0, (0.0,), None),   # control, missing outcome
    ]
    return Dataset(rows)


def test_outcome_grouping_splits_treated_compliers_from_rest():
    groups, dropped = group_values(toy_dataset(), "y", "treated_compliers_vs_rest")
    assert sorted(groups) == ["others", "treated_compliers"]
    assert groups["treated_compliers"] == [10.0, 11.0]
    assert groups["others"] == [12.0, 13.0, 14.0]
    assert dropped == 1


def test_exposure_grouping_natural_zero_keeps_never_takers():
    groups, dropped = group_values(
        toy_dataset(), "w", "treated_compliers_vs_treated_never_takers"
    )
    assert groups["treated_compliers"] == [2.0, 3.0]
    assert groups["treated_never_takers"] == [0.0, 0.0]
    assert dropped == 0


def test_exposure_grouping_simulation_rule_is_compliers_only():
    groups, _ = group_values(toy_dataset(), "w", "treated_compliers_only")
    assert sorted(groups) == ["treated_compliers"]


def test_unknown_variable_and_grouping_rejected():
    with pytest.raises(EstimationError):
        group_values(toy_dataset(), "nope", "treated_compliers_only")
    with pytest.raises(EstimationError):
        group_values(toy_dataset(), "y", "by_site")


# --------------------------------------------------------------- bootstrap


def normal_outcome_dataset(rng, n=320, sd=2.0):
    rows = []
    for i in range(n):
        z = 1 if i < n // 2 else 0
        w = 1.0 if z == 1 and i % 10 != 0 else 0.0
        y = sd * rng.standard_normal()
        rows.append(Observation(z, (w,), y))
    return Dataset(rows)


def test_bootstrap_point_matches_complete_data_pooled_sd():
    rng = np.random.Generator(np.random.Philox(key=np.array([1, 0], dtype=np.uint64)))
    data = normal_outcome_dataset(rng)
    res = bootstrap_interval(data, "y", "treated_compliers_vs_rest", B=25, seed=3)
    groups, _ = group_values(data, "y", "treated_compliers_vs_rest")
    assert abs(res.point - pooled_sd(groups)) <= 1e-14
    assert res.dropped_missing == 0
    assert res.interval_95[0] <= res.point <= res.interval_95[1]


def test_bootstrap_deterministic_under_seed():
    rng = np.random.Generator(np.random.Philox(key=np.array([2, 0], dtype=np.uint64)))
    data = normal_outcome_dataset(rng, n=80)
    a = bootstrap_interval(data, "y", "treated_compliers_vs_rest", B=40, seed=9)
    b = bootstrap_interval(data, "y", "treated_compliers_vs_rest", B=40, seed=9)
    c = bootstrap_interval(data, "y", "treated_compliers_vs_rest", B=40, seed=10)
    assert a == b
    assert a.interval_95 != c.interval_95


def test_degenerate_single_value_data_zero_width():
    rows = [Observation(1, (1.0,), 5.0) for _ in range(6)]
    rows += [Observation(0, (0.0,), 5.0) for _ in range(6)]
    data = Dataset(rows)
    res = bootstrap_interval(data, "y", "treated_compliers_vs_rest", B=2, seed=1)
    assert res.point == 0.0
    assert res.interval_95 == (0.0, 0.0)


def test_rare_group_survives_via_redraws():
    # two compliers among forty treated subjects: ~40% of raw resamples lose
    # the complier pair, but ten redraws make an outright skip vanishingly rare
    rows = [Observation(1, (1.5,), 1.0), Observation(1, (2.5,), 2.0)]
    rows += [Observation(1, (0.0,), float(i)) for i in range(38)]
    rows += [Observation(0, (0.0,), float(i)) for i in range(10)]
    data = Dataset(rows)
    res = bootstrap_interval(
        data, "w", "treated_compliers_vs_treated_never_takers", B=60, seed=17
    )
    assert res.skipped == 0
    assert np.isfinite(res.interval_95).all()


def test_skipped_replicates_counted_without_redraws(monkeypatch):
    from confounder_forge import sd_estimator as mod

    monkeypatch.setattr(mod, "MAX_REDRAWS", 0)
    rows = [Observation(1, (1.5,), 1.0), Observation(1, (2.5,), 2.0)]
    rows += [Observation(1, (0.0,), float(i)) for i in range(38)]
    rows += [Observation(0, (0.0,), float(i)) for i in range(10)]
    data = Dataset(rows)
    res = bootstrap_interval(
        data, "w", "treated_compliers_vs_treated_never_takers", B=60, seed=17
    )
    assert 0 < res.skipped < 60
    assert np.isfinite(res.interval_95).all()


def test_b_below_two_rejected():
    rows = [Observation(1, (1.0,), 1.0), Observation(1, (2.0,), 2.0)]
    data = Dataset(rows)
    with pytest.raises(EstimationError):
        bootstrap_interval(data, "y", "treated_compliers_only", B=1, seed=0)


def test_every_replicate_degenerate_is_an_error():
    # two compliers plus one never-taker in the treated arm: a 3-draw
    # resample can never give both groups two members, so every replicate
    # is redrawn to exhaustion and skipped
    rows = [
        Observation(1, (1.0,), 1.0),
        Observation(1, (2.0,), 2.0),
        Observation(1, (0.0,), 3.0),
    ]
    data = Dataset(rows)
    with pytest.warns(UserWarning):
        with pytest.raises(EstimationError):
            bootstrap_interval(
                data, "w", "treated_compliers_vs_treated_never_takers", B=5, seed=0
            )


def test_interval_endpoints_are_order_statistics():
    rng = np.random.Generator(np.random.Philox(key=np.array([5, 0], dtype=np.uint64)))
    data = normal_outcome_dataset(rng, n=60)
    res = bootstrap_interval(data, "y", "treated_compliers_vs_rest", B=30, seed=21)
    assert res.interval_95[0] < res.interval_95[1]
    assert res.skipped == 0


def test_coverage_meta_trial():
    hits = 0
    for trial in range(100):
        rng = np.random.Generator(
            np.random.Philox(key=np.array([1000 + trial, 0], dtype=np.uint64))
        )
        data = normal_outcome_dataset(rng, n=320, sd=2.0)
        res = bootstrap_interval(data, "y", "treated_compliers_vs_rest", B=100,
                                 seed=trial)
        lo, hi = res.interval_95
        if lo <= 2.0 <= hi:
            hits += 1
    assert hits >= 90


def test_pooled_sd_result_validates_interval():
    with pytest.raises(ValueError):
        PooledSd(point=1.0, interval_95=(2.0, 1.0), groups=())
