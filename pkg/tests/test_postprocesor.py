# -*- coding: utf-8 -*-
"""
Test cases for functions on ``postprocesor`` module

"""
import json
import logging

import numpy as np
import pandas as pd
import pytest

import tabopt.postprocesor as pos
import tabopt.trainutil as trn
import tabopt.tuneutil as tun


def runs(key, dataset, scores, metric="accuracy", label_std=None):
    model, method = key.split(":")
    return [trn.RunResult(dataset, model, method, seed, metric,
                          best_val_score=score, test_score=score,
                          best_epoch=5, epochs_run=21,
                          test_label_std=label_std)
            for seed, score in enumerate(scores)]


def dataset_info(name):
    return {"name": name, "n_train": 640, "n_val": 160, "n_test": 200,
            "n_num": 8, "n_bin": 1, "n_cat": 1, "task_type": "binclass",
            "batch_size": 128}


def benchmark_results():
    results = []
    results += runs("mlp:adamw", "d1", [0.80, 0.81, 0.79])
    results += runs("mlp:adamw", "d2", [0.60, 0.61, 0.59])
    results += runs("mlp:adamw", "d3", [0.50, 0.51, 0.49], "rmse", 1.0)
    results += runs("mlp:muon", "d1", [0.807, 0.808, 0.809])
    results += runs("mlp:muon", "d2", [0.60, 0.61, 0.59])
    results += runs("mlp:muon", "d3", [0.50, 0.51, 0.49], "rmse", 1.0)
    results += runs("tabm_packed:adamw", "d1", [0.82, 0.83, 0.81])
    results += runs("tabm_packed:lion", "d1", [0.83, 0.84, 0.82])
    # Incomplete cell and a failed run
    results += runs("mlp:lion", "d1", [0.9, 0.9])
    results.append(trn.RunResult("d1", "mlp", "adamw", 3, "accuracy",
                                 status="failed"))
    return results


TUNING = [
    {"model": "mlp", "method": "adamw", "dataset": "d1",
     "wall_time_seconds": 6.0},
    {"model": "mlp", "method": "adamw", "dataset": "d1",
     "wall_time_seconds": 4.0},
    {"model": "mlp", "method": "muon", "dataset": "d1",
     "wall_time_seconds": 20.0}]


def make_report():
    datasets = {name: dataset_info(name) for name in ("d1", "d2", "d3")}
    return pos.aggregate(benchmark_results(), tuning=TUNING,
                         datasets=datasets, min_seeds=3)


#%% Aggregation
def test_method_keys():
    assert pos.method_key("mlp", "adamw_ema") == "mlp:adamw_ema"
    assert pos.arch_baseline("tabm_packed:lion") == "tabm_packed:adamw"


def test_aggregate_summaries(caplog):
    with caplog.at_level(logging.WARNING):
        report = make_report()
    assert "mlp:lion on d1 has 2 of 3 seeds" in caplog.text
    assert report.n_failed == 1
    summaries = {summary.key: summary for summary in report.methods}
    assert list(summaries) == ["mlp:adamw", "mlp:muon", "tabm_packed:adamw",
                               "tabm_packed:lion"]
    assert summaries["mlp:adamw"].delta == 0.0
    assert summaries["mlp:adamw"].wtl == [0, 3, 0]
    assert np.isclose(summaries["mlp:muon"].delta, 1/3)
    assert np.isclose(report.deltas["mlp:muon"]["d1"], 1.0)
    assert summaries["mlp:muon"].n_datasets == 3
    assert summaries["mlp:muon"].overhead == 2.0
    assert summaries["tabm_packed:adamw"].overhead is None
    assert np.isclose(summaries["tabm_packed:adamw"].delta, 2.5)
    assert np.isclose(summaries["tabm_packed:lion"].delta_vs_arch, 1.25)
    assert summaries["tabm_packed:lion"].wtl == [1, 0, 0]
    assert summaries["tabm_packed:lion"].wtl_arch == [0, 1, 0]
    assert summaries["mlp:muon"].delta_vs_arch is not None


def test_aggregate_rows():
    report = make_report()
    rows = {(row["method"], row["dataset"]): row for row in report.rows}
    row = rows[("mlp:adamw", "d3")]
    assert row["metric"] == "rmse"
    assert row["n_seeds"] == 3
    assert np.isclose(row["mean_score"], 0.5)
    assert np.isclose(row["mean_unified"],
                      np.mean([1 - 0.5**2, 1 - 0.51**2, 1 - 0.49**2]))
    assert row["delta"] == 0.0
    assert ("mlp:lion", "d1") not in rows
    assert report.ranks["d1"]["tabm_packed:lion"] == 1
    assert report.ranks["d1"]["mlp:adamw"] >= 2
    assert [info["name"] for info in report.datasets] == ["d1", "d2", "d3"]


def test_aggregate_errors():
    results = runs("mlp:adamw", "d1", [0.8, 0.81])
    with pytest.raises(ValueError):
        pos.aggregate(results, min_seeds=1)
    with pytest.raises(ValueError, match="baseline"):
        pos.aggregate(runs("mlp:muon", "d1", [0.8, 0.81]), min_seeds=2)
    with pytest.raises(ValueError, match="baseline"):
        pos.aggregate(results, min_seeds=3)


#%% Report files
def test_markdown_report():
    text = pos.markdown_report(make_report())
    assert text.startswith("# Benchmark report\n")
    assert "| mlp:muon | 0.33 | " in text
    assert "| tabm_packed:lion | 3.75 | +1.25 |" in text
    assert "| d1 | 640 | 160 | 200 | 8 | 1 | 1 | binclass | 128 |" in text
    assert "Failed runs left out: 1" in text


def test_emit_report(tmp_path):
    """Reports are byte-stable and are not overwritten silently"""
    report = make_report()
    first = pos.emit_report(report, str(tmp_path / "a"))
    second = pos.emit_report(make_report(), str(tmp_path / "b"))
    for path_a, path_b in zip(first, second):
        with open(path_a, "rb") as fin_a, open(path_b, "rb") as fin_b:
            assert fin_a.read() == fin_b.read()
    with pytest.raises(FileExistsError):
        pos.emit_report(report, str(tmp_path / "a"))
    pos.emit_report(report, str(tmp_path / "a"), force=True)

    frame = pd.read_csv(tmp_path / "a" / "report.csv")
    assert list(frame.columns) == ["dataset", "method", "metric", "n_seeds",
                                   "mean_score", "std_score", "mean_unified",
                                   "std_unified", "delta"]
    assert len(frame) == 8
    with open(tmp_path / "a" / "plotdata.json") as fin:
        plot = json.load(fin)
    assert plot["percentiles"] == [10, 25, 50, 75, 90]
    assert plot["delta_percentiles"]["mlp:muon"]["50"] == 0.0
    assert plot["rank_distribution"]["tabm_packed:lion"] == {"1": 1}


def test_aggregate_file(tmp_path):
    report = make_report()
    path = str(tmp_path / "aggregate.json")
    pos.write_aggregate(report, path)
    loaded = pos.read_aggregate(path)
    assert pos.markdown_report(loaded) == pos.markdown_report(report)
    with pytest.raises(FileNotFoundError):
        pos.read_aggregate(str(tmp_path / "missing.json"))


def test_load_results(tmp_path):
    folder = tmp_path / "results"
    trn.write_runs(str(folder / "d1" / "mlp_adamw"),
                   runs("mlp:adamw", "d1", [0.8, 0.81]))
    with open(folder / "d1" / "mlp_adamw" / "dataset.json", "w") as fout:
        json.dump(dataset_info("d1"), fout)
    trial = tun.TrialRecord(0, {"lr": 1e-3}, objective=0.8,
                            wall_time_seconds=2.0)
    tun.write_tuning(str(folder / "d1" / "tune"),
                     tun.best_of([trial]), "d1", "mlp", "adamw")
    results, tuning, datasets = pos.load_results(str(folder))
    assert len(results) == 2
    assert tuning[0]["wall_time_seconds"] == 2.0
    assert datasets["d1"]["n_train"] == 640
