# -*- coding: utf-8 -*-
"""
Integration tests for tabopt

"""
import json
import os

import numpy as np
import pandas as pd
import pytest

import tabopt.postprocesor as pos
import tabopt.tabopt_CLI as cli
import tabopt.trainutil as trn


def read_bytes(path):
    with open(path, "rb") as fin:
        return fin.read()


def test_benchmark_workflow(tmp_path):
    """Synthetic data, tuning, multi-seed training, aggregate and report"""
    data = str(tmp_path / "data")
    runs = tmp_path / "runs"
    assert cli.main(["gen-data", "--n", "400", "--seed", "1",
                     "--out", data]) == 0

    tune_dir = str(runs / "mlp_adamw_tune")
    assert cli.main(["tune", "--data", data, "--out", tune_dir,
                     "--budget", "2", "--max-epochs", "2"]) == 0
    with open(os.path.join(tune_dir, "best_config.json")) as fin:
        best = json.load(fin)
    assert best["method"] == "adamw"
    assert best["trial"] in (0, 1)

    assert cli.main(["train", "--data", data, "--out",
                     str(runs / "mlp_adamw"), "--best-config",
                     os.path.join(tune_dir, "best_config.json"),
                     "--seeds", "0..2", "--max-epochs", "3"]) == 0
    assert cli.main(["train", "--data", data, "--out",
                     str(runs / "mlp_muon"), "--optimizer", "muon",
                     "--seeds", "0..2", "--max-epochs", "3"]) == 0
    results = trn.read_runs(str(runs / "mlp_muon"))
    assert [result.seed for result in results] == [0, 1, 2]
    assert all(result.status == "ok" for result in results)

    report_dir = tmp_path / "report"
    assert cli.main(["aggregate", "--runs", str(runs), "--out",
                     str(report_dir), "--min-seeds", "3"]) == 0
    frame = pd.read_csv(report_dir / "report.csv")
    assert sorted(frame["method"]) == ["mlp:adamw", "mlp:muon"]
    with open(report_dir / "report.md") as fin:
        text = fin.read()
    assert "| mlp:adamw | 0.00 |" in text
    assert "two_gaussians_seed1" in text

    # Existing reports are kept unless forced
    assert cli.main(["aggregate", "--runs", str(runs), "--out",
                     str(report_dir), "--min-seeds", "3"]) == 1
    assert cli.main(["aggregate", "--runs", str(runs), "--out",
                     str(report_dir), "--min-seeds", "3", "--force"]) == 0

    again_dir = tmp_path / "again"
    assert cli.main(["report", "--aggregate",
                     str(report_dir / "aggregate.json"), "--out",
                     str(again_dir)]) == 0
    for name in ("report.md", "report.csv", "plotdata.json"):
        assert read_bytes(report_dir / name) == read_bytes(again_dir / name)


def test_missing_baseline(tmp_path):
    data = str(tmp_path / "data")
    runs = tmp_path / "runs"
    assert cli.main(["gen-data", "--n", "100", "--out", data]) == 0
    assert cli.main(["train", "--data", data, "--out", str(runs / "lion"),
                     "--optimizer", "lion", "--seeds", "0,1",
                     "--max-epochs", "2"]) == 0
    assert cli.main(["aggregate", "--runs", str(runs),
                     "--min-seeds", "2"]) == 1


@pytest.mark.slow
def test_protocol_two_gaussians(tmp_path):
    """Tune 20 trials, retrain 10 seeds and aggregate three methods"""
    data = str(tmp_path / "data")
    runs = tmp_path / "runs"
    assert cli.main(["gen-data", "--kind", "two_gaussians", "--n", "2000",
                     "--separation", "6", "--out", data]) == 0
    for method in ("adamw", "muon", "adamw_ema"):
        tune_dir = str(runs / "mlp_{}_tune".format(method))
        assert cli.main(["tune", "--data", data, "--out", tune_dir,
                         "--optimizer", method, "--budget", "20"]) == 0
        train_dir = str(runs / "mlp_{}".format(method))
        assert cli.main(["train", "--data", data, "--out", train_dir,
                         "--optimizer", method, "--best-config",
                         os.path.join(tune_dir, "best_config.json"),
                         "--seeds", "0..9"]) == 0
        results = trn.read_runs(train_dir)
        assert len(results) == 10
        assert all(result.status == "ok" for result in results)
        assert np.mean([result.test_score for result in results]) > 0.95

    report_dir = tmp_path / "report"
    assert cli.main(["aggregate", "--runs", str(runs), "--out",
                     str(report_dir)]) == 0
    report = pos.read_aggregate(str(report_dir / "aggregate.json"))
    summaries = {summary.key: summary for summary in report.methods}
    assert set(summaries) == {"mlp:adamw", "mlp:muon", "mlp:adamw_ema"}
    assert summaries["mlp:adamw"].delta == 0.0
    for summary in summaries.values():
        assert sum(summary.wtl) == 1
