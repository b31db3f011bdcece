# -*- coding: utf-8 -*-
from __future__ import absolute_import
from tabopt.tabopt_CLI import main

__all__ = ["checkutil",
           "constants",
           "emautil",
           "modelutil",
           "nnutil",
           "optimutil",
           "postprocesor",
           "preprocesor",
           "statutil",
           "trainutil",
           "tuneutil",
           "main"]

__version__ = "0.1.0"


__citation__ = """@software{tabopt,
 title = {tabopt: Optimizer benchmarking for tabular deep learning},
 year = 2026,
 keywords = {Python, Deep learning, Optimization, Tabular data, Benchmarking},
 abstract = {tabopt tunes and retrains tabular deep learning models with
   a range of first-order optimizers and weight averaging, and compares
   them across datasets with relative scores, tiered ranks and Welch
   tests. Datasets are folders with a JSON description and CSV splits.}
}"""
