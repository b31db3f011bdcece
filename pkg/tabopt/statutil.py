# -*- coding: utf-8 -*-
"""
Benchmark statistics
--------------------

Scores and comparisons used to aggregate benchmark results: unified
scores, relative improvement over a baseline, tiered ranks, Welch
tests and time overheads.

"""
import logging
import numpy as np
from scipy.special import betainc

from tabopt.constants import PERCENTILE_METHOD, PERCENTILES, WELCH_ALPHA

logger = logging.getLogger(__name__)


#%% Scores
def to_unified_score(metric, value, test_label_std=None):
    """Higher-is-better score, with RMSE converted to R^2

    Regression uses ``R^2 = 1 - (RMSE/std)^2`` with the standard
    deviation of the test labels.

    Examples
    --------
    >>> to_unified_score("rmse", 0.5, 1.0)
    0.75
    >>> to_unified_score("accuracy", 0.9)
    0.9

    """
    if metric in ("accuracy", "roc_auc"):
        return float(value)
    elif metric == "rmse":
        if test_label_std is None or not test_label_std > 0:
            raise ValueError("R^2 needs a positive test label std.")
        return float(1 - (value/test_label_std)**2)
    raise ValueError("You entered an invalid metric.")


def delta_score(method_scores, baseline_scores):
    """Relative improvement over the baseline, in percent

    Parameters
    ----------
    method_scores : dict
        Mean unified score per dataset.
    baseline_scores : dict
        Mean unified score of the baseline per dataset.

    Returns
    -------
    delta : float
        Mean over the shared datasets with a positive baseline score,
        or None when there is none.
    per_dataset : dict
        Percent improvement per dataset.

    Examples
    --------
    >>> delta, _ = delta_score({"a": 0.9}, {"a": 0.9})
    >>> delta
    0.0

    """
    per_dataset = {}
    for name in sorted(set(method_scores) & set(baseline_scores)):
        base = baseline_scores[name]
        if not base > 0:
            logger.warning("Dataset %s excluded from the delta score: "
                           "baseline score %s is not positive.", name, base)
            continue
        per_dataset[name] = 100*(method_scores[name]/base - 1)
    if not per_dataset:
        return None, per_dataset
    return float(np.mean(list(per_dataset.values()))), per_dataset


#%% Ranks
def tier_ranks(stats):
    """Tiered ranks of methods on one dataset

    Methods are walked in order of decreasing mean. A method keeps the
    current rank unless it is worse than the current reference, which
    happens when ``mu_ref - sigma_ref > mu``. A worse method opens the
    next rank and becomes the new reference.

    Parameters
    ----------
    stats : dict
        ``(mean, std)`` per method.

    Returns
    -------
    ranks : dict
        Rank per method, starting at 1.

    Examples
    --------
    >>> tier_ranks({"A": (0.90, 0.01), "B": (0.895, 0.02),
    ...             "C": (0.85, 0.01)})
    {'A': 1, 'B': 1, 'C': 2}

    """
    if not stats:
        raise ValueError("Tier ranks need at least one method.")
    order = sorted(stats, key=lambda name: -stats[name][0])
    ranks = {}
    rank = 1
    ref_mu, ref_sigma = stats[order[0]]
    for name in order:
        mu, sigma = stats[name]
        if ref_mu - ref_sigma > mu:
            rank += 1
            ref_mu, ref_sigma = mu, sigma
        ranks[name] = rank
    return ranks


def mean_ranks(per_dataset):
    """Arithmetic mean of per-dataset tier ranks

    Parameters
    ----------
    per_dataset : dict
        ``{dataset: {method: (mean, std)}}``.

    Returns
    -------
    mean : dict
        Mean rank per method over the datasets where it is ranked.
    ranks : dict
        ``{dataset: {method: rank}}``.

    """
    ranks = {name: tier_ranks(stats) for name, stats in per_dataset.items()
             if stats}
    collected = {}
    for dataset_ranks in ranks.values():
        for method, rank in dataset_ranks.items():
            collected.setdefault(method, []).append(rank)
    return ({method: float(np.mean(vals))
             for method, vals in collected.items()}, ranks)


#%% Welch test
def welch_test(a, b):
    """Two-sided Welch t-test

    The degrees of freedom follow Welch-Satterthwaite and the p-value
    is ``I_x(df/2, 1/2)`` with ``x = df/(df + t^2)``.

    Returns
    -------
    t_stat : float
        t statistic of ``mean(a) - mean(b)``.
    dof : float
        Degrees of freedom.
    p_value : float
        Two-sided p-value.

    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("The Welch test needs at least 2 samples each.")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("The Welch test needs finite samples.")
    var_a = a.var(ddof=1)/a.size
    var_b = b.var(ddof=1)/b.size
    diff = a.mean() - b.mean()
    if var_a + var_b == 0:
        if diff == 0:
            return 0.0, np.inf, 1.0
        return float(np.sign(diff)*np.inf), np.inf, 0.0
    t_stat = diff/np.sqrt(var_a + var_b)
    dof = (var_a + var_b)**2/(var_a**2/(a.size - 1) +
                              var_b**2/(b.size - 1))
    p_value = betainc(dof/2, 0.5, dof/(dof + t_stat**2))
    return float(t_stat), float(dof), float(p_value)


def welch_wtl(a, b, alpha=WELCH_ALPHA):
    """Win, tie or loss of sample ``a`` against sample ``b``

    Examples
    --------
    >>> welch_wtl([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    'tie'
    >>> welch_wtl([5.0, 5.0], [1.0, 1.0])
    'win'

    """
    t_stat, _, p_value = welch_test(a, b)
    if p_value < alpha:
        return "win" if t_stat > 0 else "loss"
    return "tie"


#%% Overheads and percentiles
def time_overhead(method_times, baseline_times):
    """Mean ratio of per-dataset tuning wall time to the baseline's

    Returns None when no dataset has both times.

    Examples
    --------
    >>> time_overhead({"a": 4.0, "b": 3.0}, {"a": 2.0, "b": 1.5})
    2.0

    """
    ratios = [method_times[name]/baseline_times[name]
              for name in sorted(set(method_times) & set(baseline_times))
              if baseline_times[name] > 0]
    if not ratios:
        return None
    return float(np.mean(ratios))


def percentiles(values, levels=PERCENTILES):
    """Percentiles with linear interpolation between closest ranks"""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return {int(level): None for level in levels}
    result = np.percentile(values, levels, method=PERCENTILE_METHOD)
    return {int(level): float(val) for level, val in zip(levels, result)}


if __name__ == "__main__":
    import doctest
    doctest.testmod()
