# -*- coding: utf-8 -*-
"""
Postprocessor subroutines
-------------------------

This module aggregates run records into method summaries and writes
the report files:

    - ``report.md``: summary and per-dataset tables.
    - ``report.csv``: per-dataset metrics of every method.
    - ``plotdata.json``: rank distributions and delta-score percentiles.

Methods are identified as ``<model>:<method>``, e.g. ``mlp:adamw_ema``.

"""
import json
import logging
import os
from dataclasses import dataclass, field, asdict
import numpy as np
import pandas as pd

from tabopt import constants
from tabopt import statutil as st
from tabopt import trainutil as trn
from tabopt import tuneutil as tun

logger = logging.getLogger(__name__)

REPORT_FILES = ("report.md", "report.csv", "plotdata.json")


def method_key(model, method):
    return "{}:{}".format(model, method)


def arch_baseline(key):
    """AdamW on the same architecture as ``key``"""
    return method_key(key.split(":")[0], "adamw")


#%% Loading
def load_results(folder):
    """Run records, tuning records and dataset descriptions of a folder

    Returns
    -------
    results : list of RunResult
        Runs found in every ``runs.jsonl`` below ``folder``.
    tuning : list of dict
        Trial records of every ``tuning.jsonl`` below ``folder``.
    datasets : dict
        ``dataset.json`` descriptions by dataset name.

    """
    results = trn.read_runs(folder)
    tuning = []
    datasets = {}
    for root, _, names in sorted(os.walk(folder)):
        if "tuning.jsonl" in names:
            tuning.extend(tun.read_tuning(os.path.join(root,
                                                       "tuning.jsonl")))
        if "dataset.json" in names:
            with open(os.path.join(root, "dataset.json"), "r",
                      encoding="utf-8") as fin:
                info = json.load(fin)
            datasets[info["name"]] = info
    return results, tuning, datasets


#%% Aggregation
@dataclass
class MethodSummary:
    key: str
    delta: float = None
    delta_vs_arch: float = None
    mean_rank: float = None
    wtl: list = field(default_factory=lambda: [0, 0, 0])
    wtl_arch: list = field(default_factory=lambda: [0, 0, 0])
    overhead: float = None
    n_datasets: int = 0


@dataclass
class AggregateReport:
    """Method summaries, per-dataset rows and plot data"""
    baseline: str
    methods: list
    rows: list
    ranks: dict
    deltas: dict
    datasets: list = field(default_factory=list)
    n_failed: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["methods"] = [MethodSummary(**item) for item in data["methods"]]
        return cls(**data)


def _seed_scores(results):
    """Unified test scores per (method key, dataset), ordered by seed"""
    cells = {}
    for result in sorted(results, key=lambda res: res.seed):
        if result.status != "ok":
            continue
        key = method_key(result.model, result.method)
        score = st.to_unified_score(result.metric, result.test_score,
                                    result.test_label_std)
        cells.setdefault((key, result.dataset), []).append(
            (result, score))
    return cells


def _wtl(cells, key, other, datasets):
    counts = [0, 0, 0]
    outcome = {"win": 0, "tie": 1, "loss": 2}
    for name in datasets:
        if (other, name) not in cells:
            continue
        a = [score for _, score in cells[(key, name)]]
        b = [score for _, score in cells[(other, name)]]
        counts[outcome[st.welch_wtl(a, b)]] += 1
    return counts


def _tuning_times(tuning):
    times = {}
    for record in tuning:
        key = (method_key(record["model"], record["method"]),
               record["dataset"])
        times[key] = times.get(key, 0.0) + record["wall_time_seconds"]
    return times


def aggregate(results, baseline="mlp:adamw", tuning=(), datasets=None,
              min_seeds=constants.N_SEEDS):
    """Aggregate run records against a baseline method

    A (method, dataset) cell enters the comparisons only when it has at
    least ``min_seeds`` successful seeds; incomplete cells are dropped
    with a warning.

    Parameters
    ----------
    results : list of RunResult
        Run records.
    baseline : str (optional)
        Baseline method key.
    tuning : list of dict (optional)
        Trial records for the time overheads.
    datasets : dict (optional)
        Dataset descriptions by name.
    min_seeds : int (optional)
        Seeds needed for a complete cell.

    Returns
    -------
    report : AggregateReport
        Aggregated results.

    """
    if min_seeds < 2:
        raise ValueError("At least 2 seeds per dataset are needed.")
    n_failed = sum(result.status != "ok" for result in results)
    if n_failed:
        logger.warning("%d failed runs left out of the aggregate.", n_failed)
    cells = _seed_scores(results)
    for (key, name), scores in sorted(cells.items()):
        if len(scores) < min_seeds:
            logger.warning("%s on %s has %d of %d seeds and is left out.",
                           key, name, len(scores), min_seeds)
    cells = {cell: scores for cell, scores in cells.items()
             if len(scores) >= min_seeds}
    keys = sorted({key for key, _ in cells})
    if baseline not in keys:
        raise ValueError("Missing baseline method {} in the results."
                         .format(baseline))
    keys.remove(baseline)
    keys.insert(0, baseline)
    names = sorted({name for _, name in cells})
    means = {cell: float(np.mean([score for _, score in scores]))
             for cell, scores in cells.items()}
    rows = []
    stats = {name: {} for name in names}
    for key in keys:
        for name in names:
            if (key, name) not in cells:
                continue
            scores = cells[(key, name)]
            raw = [res.test_score for res, _ in scores]
            unified = [score for _, score in scores]
            std = float(np.std(unified, ddof=1))
            stats[name][key] = (means[(key, name)], std)
            rows.append({"dataset": name, "method": key,
                         "metric": scores[0][0].metric,
                         "n_seeds": len(scores),
                         "mean_score": float(np.mean(raw)),
                         "std_score": float(np.std(raw, ddof=1)),
                         "mean_unified": means[(key, name)],
                         "std_unified": std})
    avg_ranks, ranks = st.mean_ranks(stats)
    times = _tuning_times(tuning)
    base_means = {name: means[(baseline, name)] for name in names
                  if (baseline, name) in means}
    base_times = {name: times[(baseline, name)] for name in names
                  if (baseline, name) in times}
    summaries = {}
    deltas = {}
    for key in keys:
        own = [name for name in names if (key, name) in cells]
        shared = [name for name in own if name in base_means]
        delta, per_dataset = st.delta_score(
            {name: means[(key, name)] for name in shared}, base_means)
        deltas[key] = per_dataset
        method_times = {name: times[(key, name)] for name in shared
                        if (key, name) in times}
        summaries[key] = MethodSummary(
            key=key, delta=delta, mean_rank=avg_ranks.get(key),
            wtl=_wtl(cells, key, baseline, shared),
            wtl_arch=_wtl(cells, key, arch_baseline(key), own),
            overhead=st.time_overhead(method_times, base_times),
            n_datasets=len(shared))
    for key, summary in summaries.items():
        arch = summaries.get(arch_baseline(key))
        if (arch is not None and summary.delta is not None and
                arch.delta is not None):
            summary.delta_vs_arch = summary.delta - arch.delta
    for row in rows:
        row["delta"] = deltas[row["method"]].get(row["dataset"])
    info = [datasets[name] for name in sorted(datasets or {})]
    return AggregateReport(baseline=baseline,
                           methods=[summaries[key] for key in keys],
                           rows=rows, ranks=ranks, deltas=deltas,
                           datasets=info, n_failed=n_failed)


#%% Report files
def _fmt(value, pattern="{:.2f}"):
    return "-" if value is None else pattern.format(value)


def _signed(value):
    return "-" if value is None else "{:+.2f}".format(value)


def markdown_report(report):
    """Markdown text of the report"""
    lines = ["# Benchmark report", "",
             "Baseline: `{}`".format(report.baseline), "",
             "| Method | Delta score (%) | Gain over arch AdamW | "
             "Mean rank | W/T/L | W/T/L (arch AdamW) | Time overhead |",
             "|---|---|---|---|---|---|---|"]
    for summary in report.methods:
        overhead = _fmt(summary.overhead, "{:.2f}x")
        lines.append("| {} | {} | {} | {} | {} | {} | {} |".format(
            summary.key, _fmt(summary.delta), _signed(summary.delta_vs_arch),
            _fmt(summary.mean_rank), "/".join(map(str, summary.wtl)),
            "/".join(map(str, summary.wtl_arch)), overhead))
    lines += ["", "## Per-dataset scores", "",
              "| Dataset | Method | Metric | Seeds | Mean (std) | "
              "Delta (%) |",
              "|---|---|---|---|---|---|"]
    for row in report.rows:
        lines.append("| {} | {} | {} | {} | {:.4f} ({:.4f}) | {} |".format(
            row["dataset"], row["method"], row["metric"], row["n_seeds"],
            row["mean_score"], row["std_score"], _fmt(row["delta"])))
    if report.datasets:
        lines += ["", "## Datasets", "",
                  "| Dataset | # Train | # Val | # Test | # Num | # Bin | "
                  "# Cat | Task | Batch size |",
                  "|---|---|---|---|---|---|---|---|---|"]
        for info in report.datasets:
            lines.append("| {name} | {n_train} | {n_val} | {n_test} | "
                         "{n_num} | {n_bin} | {n_cat} | {task_type} | "
                         "{batch_size} |".format(**info))
    if report.n_failed:
        lines += ["", "Failed runs left out: {}".format(report.n_failed)]
    return "\n".join(lines) + "\n"


def plot_data(report):
    """Rank distributions and delta-score percentiles per method"""
    distribution = {}
    for dataset_ranks in report.ranks.values():
        for key, rank in dataset_ranks.items():
            counts = distribution.setdefault(key, {})
            counts[str(rank)] = counts.get(str(rank), 0) + 1
    return {"schema_version": constants.SCHEMA_VERSION,
            "baseline": report.baseline,
            "percentile_method": constants.PERCENTILE_METHOD,
            "percentiles": list(constants.PERCENTILES),
            "delta_percentiles": {
                key: {str(level): val for level, val in
                      st.percentiles(list(per_dataset.values())).items()}
                for key, per_dataset in report.deltas.items()},
            "rank_distribution": {key: dict(sorted(counts.items()))
                                  for key, counts in
                                  sorted(distribution.items())},
            "mean_rank": {summary.key: summary.mean_rank
                          for summary in report.methods}}


def emit_report(report, folder, force=False):
    """Write ``report.md``, ``report.csv`` and ``plotdata.json``

    Existing report files are kept unless ``force`` is set.
    """
    os.makedirs(folder, exist_ok=True)
    paths = [os.path.join(folder, name) for name in REPORT_FILES]
    existing = [path for path in paths if os.path.exists(path)]
    if existing and not force:
        raise FileExistsError("Report files already exist: {}. Use --force "
                              "to overwrite.".format(existing))
    with open(paths[0], "w", encoding="utf-8", newline="\n") as fout:
        fout.write(markdown_report(report))
    columns = ["dataset", "method", "metric", "n_seeds", "mean_score",
               "std_score", "mean_unified", "std_unified", "delta"]
    frame = pd.DataFrame(report.rows, columns=columns)
    frame.to_csv(paths[1], index=False, float_format="%.6f",
                 lineterminator="\n")
    with open(paths[2], "w", encoding="utf-8", newline="\n") as fout:
        json.dump(plot_data(report), fout, indent=2, sort_keys=True)
        fout.write("\n")
    logger.info("Report written to %s", folder)
    return paths


def write_aggregate(report, path):
    with open(path, "w", encoding="utf-8") as fout:
        json.dump(report.to_dict(), fout, indent=2, sort_keys=True)


def read_aggregate(path):
    if not os.path.isfile(path):
        raise FileNotFoundError("Missing file {}.".format(path))
    with open(path, "r", encoding="utf-8") as fin:
        return AggregateReport.from_dict(json.load(fin))


if __name__ == "__main__":
    import doctest
    doctest.testmod()
