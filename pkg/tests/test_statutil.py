# -*- coding: utf-8 -*-
"""
Test cases for functions on ``statutil`` module

"""
import numpy as np
import pytest
from scipy.stats import ttest_ind

import tabopt.checkutil as chk
import tabopt.statutil as stt


#%% Scores
def test_unified_score():
    assert stt.to_unified_score("rmse", 0.5, 1.0) == 0.75
    assert stt.to_unified_score("roc_auc", 0.7) == 0.7
    rng = np.random.default_rng(0)
    labels = rng.normal(size=200)
    pred = labels + 0.3*rng.normal(size=200)
    rmse = np.sqrt(np.mean((pred - labels)**2))
    sse = np.sum((pred - labels)**2)
    sst = np.sum((labels - labels.mean())**2)
    assert np.isclose(stt.to_unified_score("rmse", rmse, np.std(labels)),
                      1 - sse/sst)
    with pytest.raises(ValueError):
        stt.to_unified_score("rmse", 0.5, 0.0)
    with pytest.raises(ValueError):
        stt.to_unified_score("mae", 0.5, 1.0)


def test_delta_score():
    delta, per_dataset = stt.delta_score({"a": 0.808}, {"a": 0.800})
    assert np.isclose(delta, 1.0)
    assert np.isclose(per_dataset["a"], 1.0)

    delta, per_dataset = stt.delta_score({"a": 0.9, "b": 0.5, "c": 0.7},
                                         {"a": 0.9, "b": -0.2, "d": 0.7})
    assert delta == 0.0
    assert list(per_dataset) == ["a"]
    assert stt.delta_score({"a": 0.5}, {"b": 0.5}) == (None, {})


#%% Ranks
def test_tier_ranks():
    ranks = stt.tier_ranks({"A": (0.90, 0.01), "B": (0.895, 0.02),
                            "C": (0.85, 0.01)})
    assert ranks == {"A": 1, "B": 1, "C": 2}
    # B becomes the reference once it opens rank 2
    ranks = stt.tier_ranks({"A": (0.9, 0.01), "B": (0.8, 0.1),
                            "C": (0.75, 0.0), "D": (0.69, 0.0)})
    assert ranks == {"A": 1, "B": 2, "C": 2, "D": 3}
    assert stt.tier_ranks({"A": (0.5, 0.0)}) == {"A": 1}
    with pytest.raises(ValueError):
        stt.tier_ranks({})


def test_dominated_method():
    """A method below every other mean minus std ranks strictly last"""
    rng = np.random.default_rng(1)
    for _ in range(1000):
        stats = {"m{}".format(cont): (rng.uniform(0.6, 0.9),
                                      rng.uniform(0, 0.05))
                 for cont in range(6)}
        before = stt.tier_ranks(stats)
        stats["worst"] = (0.5, 0.01)
        ranks = stt.tier_ranks(stats)
        others = {name: rank for name, rank in ranks.items()
                  if name != "worst"}
        assert ranks["worst"] > max(others.values())
        assert others == before
        assert min(ranks.values()) == 1


def test_mean_ranks():
    per_dataset = {
        "d1": {"A": (0.9, 0.01), "B": (0.8, 0.01)},
        "d2": {"A": (0.7, 0.01), "B": (0.7, 0.01)},
        "d3": {"A": (0.6, 0.01)},
        "d4": {}}
    mean, ranks = stt.mean_ranks(per_dataset)
    assert ranks["d1"] == {"A": 1, "B": 2}
    assert "d4" not in ranks
    assert mean == {"A": 1.0, "B": 1.5}


#%% Welch test
def test_welch_against_oracles():
    """Incomplete beta p-values against quadrature and SciPy"""
    rng = np.random.default_rng(2)
    for _ in range(100):
        n_a, n_b = rng.integers(2, 12, size=2)
        a = rng.normal(0, rng.uniform(0.1, 2), size=n_a)
        b = rng.normal(rng.uniform(-1, 1), rng.uniform(0.1, 2), size=n_b)
        t_stat, dof, p_value = stt.welch_test(a, b)
        assert abs(p_value - chk.quadrature_p_value(t_stat, dof)) < 1e-6
        ref = ttest_ind(a, b, equal_var=False)
        assert np.isclose(t_stat, ref.statistic)
        assert np.isclose(p_value, ref.pvalue)


def test_welch_edge_cases():
    assert stt.welch_test([1.0, 1.0], [1.0, 1.0]) == (0.0, np.inf, 1.0)
    t_stat, _, p_value = stt.welch_test([2.0, 2.0], [1.0, 1.0])
    assert t_stat == np.inf and p_value == 0.0
    with pytest.raises(ValueError):
        stt.welch_test([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        stt.welch_test([1.0, np.nan], [1.0, 2.0])


def test_welch_wtl():
    assert stt.welch_wtl(chk.WELCH_A, chk.WELCH_A) == "tie"
    wins = stt.welch_wtl([0.91, 0.92, 0.93, 0.92], [0.80, 0.81, 0.79, 0.80])
    assert wins == "win"
    assert stt.welch_wtl([0.80, 0.81, 0.79, 0.80],
                         [0.91, 0.92, 0.93, 0.92]) == "loss"
    assert stt.welch_wtl([0.80, 0.90, 0.70], [0.81, 0.79, 0.85]) == "tie"


#%% Overheads and percentiles
def test_time_overhead():
    assert stt.time_overhead({"a": 4.0, "b": 3.0},
                             {"a": 2.0, "b": 1.5}) == 2.0
    assert stt.time_overhead({"a": 4.0}, {"a": 0.0}) is None
    assert stt.time_overhead({"a": 4.0}, {"b": 1.0}) is None


def test_percentiles():
    """Linear interpolation against an explicit sort"""
    rng = np.random.default_rng(3)
    for size in [1, 2, 5, 17, 100]:
        values = rng.normal(size=size)
        ordered = np.sort(values)
        result = stt.percentiles(values)
        assert list(result) == [10, 25, 50, 75, 90]
        for level, value in result.items():
            pos = (size - 1)*level/100
            low = int(np.floor(pos))
            high = min(low + 1, size - 1)
            expected = ordered[low] + (pos - low)*(ordered[high] -
                                                   ordered[low])
            assert np.isclose(value, expected)
    assert stt.percentiles([]) == {10: None, 25: None, 50: None, 75: None,
                                   90: None}
