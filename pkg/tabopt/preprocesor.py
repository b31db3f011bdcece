# -*- coding: utf-8 -*-
"""
Preprocessor subroutines
-------------------------

This module contains functions to read tabular datasets with
predefined splits, to fit and apply the feature preprocessing and to
generate synthetic datasets.

A dataset folder holds ``meta.json`` and the ``train.csv``,
``val.csv`` and ``test.csv`` splits. Every CSV has a header row and a
``label`` column.

"""
import json
import os
from dataclasses import dataclass, field, asdict
import numpy as np
import pandas as pd
from scipy.special import ndtri

from tabopt.constants import (MAX_QUANTILES, MIN_SYNTHETIC_ROWS,
                              QUANTILE_JITTER, SPLIT_FRACTIONS,
                              SYNTHETIC_BATCH_SIZE)
from tabopt.nnutil import make_rng

TASK_TYPES = ("binclass", "multiclass", "regression")
METRICS = ("accuracy", "roc_auc", "rmse")
META_KEYS = ("name", "task_type", "metric", "batch_size", "num_features",
             "bin_features", "cat_features", "skip_quantile_norm")
SPLITS = ("train", "val", "test")
SYNTHETIC_KINDS = ("two_gaussians", "linear_regression", "friedman")
LABEL = "label"


#%% Dataset records
@dataclass
class DatasetMeta:
    """Dataset description as stored in ``meta.json``"""
    name: str
    task_type: str
    metric: str
    batch_size: int
    num_features: list = field(default_factory=list)
    bin_features: list = field(default_factory=list)
    cat_features: list = field(default_factory=list)
    skip_quantile_norm: bool = False

    def __post_init__(self):
        if self.task_type not in TASK_TYPES:
            raise ValueError("Unknown task_type {}.".format(self.task_type))
        if self.metric not in METRICS:
            raise ValueError("Unknown metric {}.".format(self.metric))
        if ((self.metric == "rmse") != (self.task_type == "regression") or
                (self.metric == "roc_auc" and self.task_type != "binclass")):
            raise ValueError("metric/task mismatch: {} for {}."
                             .format(self.metric, self.task_type))
        if int(self.batch_size) != self.batch_size or self.batch_size <= 0:
            raise ValueError("The batch size should be a positive integer.")
        columns = self.columns
        if len(set(columns)) != len(columns) or LABEL in columns:
            raise ValueError("Feature column lists should be disjoint and "
                             "should not contain the label.")

    @property
    def columns(self):
        return (list(self.num_features) + list(self.bin_features) +
                list(self.cat_features))

    @property
    def is_regression(self):
        return self.task_type == "regression"

    @classmethod
    def from_dict(cls, data):
        keys = set(data)
        if keys != set(META_KEYS):
            msg = "meta.json keys should be exactly {}; got {}."
            raise ValueError(msg.format(sorted(META_KEYS), sorted(keys)))
        return cls(**data)

    def to_dict(self):
        return asdict(self)


@dataclass
class Split:
    """Raw features of one split, grouped by feature role"""
    x_num: np.ndarray
    x_bin: np.ndarray
    x_cat: np.ndarray
    y: np.ndarray

    @property
    def n_rows(self):
        return self.y.shape[0]


@dataclass
class SplitData:
    """The three predefined splits and the train category vocabularies"""
    train: Split
    val: Split
    test: Split
    categories: list = field(default_factory=list)


#%% Reading and writing
def readin(folder):
    """Read a dataset folder

    Parameters
    ----------
    folder : str
        Path to the dataset folder.

    Returns
    -------
    meta : DatasetMeta
        Dataset description.
    data : SplitData
        Train, validation and test splits.

    """
    meta_path = os.path.join(folder, "meta.json")
    if not os.path.isfile(meta_path):
        raise FileNotFoundError("Missing file {}.".format(meta_path))
    with open(meta_path, "r", encoding="utf-8") as fin:
        meta = DatasetMeta.from_dict(json.load(fin))
    splits = {}
    for split in SPLITS:
        splits[split] = read_split(meta, os.path.join(folder,
                                                      split + ".csv"))
    categories = category_vocabularies(splits["train"])
    return meta, SplitData(categories=categories, **splits)


load_dataset = readin


def read_split(meta, path):
    """Read and type one CSV split according to ``meta``"""
    if not os.path.isfile(path):
        raise FileNotFoundError("Missing file {}.".format(path))
    frame = pd.read_csv(path, dtype={col: str for col in meta.cat_features},
                        keep_default_na=False)
    expected = set(meta.columns + [LABEL])
    if set(frame.columns) != expected or len(frame.columns) != len(expected):
        msg = "Column mismatch between meta.json and header of {}: {}."
        raise ValueError(msg.format(path, sorted(set(frame.columns) ^
                                                 expected)))
    x_num = _numeric_block(frame, meta.num_features, path)
    x_bin = _numeric_block(frame, meta.bin_features, path)
    if np.any((x_bin != 0) & (x_bin != 1)):
        raise ValueError("Binary features in {} should be 0 or 1."
                         .format(path))
    x_cat = frame[meta.cat_features].to_numpy(dtype=str).reshape(
        len(frame), len(meta.cat_features))
    y = _numeric_block(frame, [LABEL], path)[:, 0]
    if not meta.is_regression:
        if np.any(y != np.round(y)) or (y.size and y.min() < 0):
            raise ValueError("Class labels in {} should be non-negative "
                             "integers.".format(path))
        y = y.astype(int)
    return Split(x_num=x_num, x_bin=x_bin, x_cat=x_cat, y=y)


def _numeric_block(frame, columns, path):
    block = np.zeros((len(frame), len(columns)))
    for cont, col in enumerate(columns):
        try:
            block[:, cont] = pd.to_numeric(frame[col], errors="raise")
        except (ValueError, TypeError):
            msg = "Non-numeric value in numeric column {} of {}."
            raise ValueError(msg.format(col, path))
    return block


def category_vocabularies(train):
    """Category values per categorical column, by first occurrence"""
    return [list(pd.unique(train.x_cat[:, col]))
            for col in range(train.x_cat.shape[1])]


def echomod(meta, data, folder):
    """Write a dataset folder readable by :func:`readin`"""
    os.makedirs(folder, exist_ok=True)
    with open(os.path.join(folder, "meta.json"), "w",
              encoding="utf-8") as fout:
        json.dump(meta.to_dict(), fout, indent=2)
    for name in SPLITS:
        split = getattr(data, name)
        frame = pd.DataFrame(split.x_num, columns=meta.num_features)
        for cont, col in enumerate(meta.bin_features):
            frame[col] = split.x_bin[:, cont].astype(int)
        for cont, col in enumerate(meta.cat_features):
            frame[col] = split.x_cat[:, cont]
        frame[LABEL] = split.y
        frame.to_csv(os.path.join(folder, name + ".csv"), index=False)


save_dataset = echomod


def describe_dataset(meta, data):
    """Split sizes and feature-role counts of a dataset"""
    return {"name": meta.name,
            "n_train": data.train.n_rows,
            "n_val": data.val.n_rows,
            "n_test": data.test.n_rows,
            "n_num": len(meta.num_features),
            "n_bin": len(meta.bin_features),
            "n_cat": len(meta.cat_features),
            "task_type": meta.task_type,
            "batch_size": meta.batch_size}


#%% Preprocessing
@dataclass(frozen=True)
class Preprocessor:
    """Fitted feature and label transformation

    Everything here is computed from the train split only.
    """
    n_num: int
    n_bin: int
    quantile_refs: tuple
    quantile_targets: np.ndarray
    skip_quantile_norm: bool
    vocabularies: tuple
    label_mean: float = 0.0
    label_std: float = 1.0

    @property
    def n_features(self):
        """Width of the encoded matrix"""
        return (self.n_num + self.n_bin +
                sum(len(vocab) + 1 for vocab in self.vocabularies))


def fit_preprocessor(meta, train, seed):
    """Fit the preprocessing on the train split

    Numeric columns get a quantile map onto standard-normal quantiles,
    computed after adding a small deterministic jitter
    ``QUANTILE_JITTER * std * N(0, 1)`` that breaks ties. Categorical
    columns get a one-hot vocabulary plus an unknown bucket. Regression
    labels are standardized.

    Parameters
    ----------
    meta : DatasetMeta
        Dataset description.
    train : Split
        Train split.
    seed : int
        Seed for the jitter.

    Returns
    -------
    prep : Preprocessor
        Fitted preprocessing.

    """
    n_train = train.n_rows
    if n_train == 0:
        raise ValueError("The train split is empty.")
    n_quant = min(MAX_QUANTILES, n_train)
    levels = np.linspace(0, 1, n_quant)
    bound = ndtri(1 - 1/(2*n_train))
    targets = np.clip(ndtri(levels), -bound, bound)
    refs = []
    if not meta.skip_quantile_norm:
        rng = make_rng(seed, "quantile-jitter")
        for col in range(train.x_num.shape[1]):
            values = train.x_num[:, col]
            noise = rng.standard_normal(n_train)
            jittered = values + QUANTILE_JITTER*values.std()*noise
            refs.append(np.quantile(jittered, levels))
    label_mean, label_std = 0.0, 1.0
    if meta.is_regression:
        label_mean = float(np.mean(train.y))
        label_std = float(np.std(train.y)) or 1.0
    vocabs = category_vocabularies(train)
    return Preprocessor(n_num=train.x_num.shape[1],
                        n_bin=train.x_bin.shape[1],
                        quantile_refs=tuple(refs),
                        quantile_targets=targets,
                        skip_quantile_norm=meta.skip_quantile_norm,
                        vocabularies=tuple(tuple(vocab) for vocab in vocabs),
                        label_mean=label_mean, label_std=label_std)


def quantile_map(values, refs, targets):
    """Monotone map of ``values`` through reference quantiles

    Tied reference values map to the average of their target
    quantiles, and values outside the reference range are clamped.

    Examples
    --------
    >>> quantile_map(np.array([-5., 0., 0.5, 5.]), np.array([0., 1.]),
    ...              np.array([-1., 1.]))
    array([-1., -1.,  0.,  1.])

    """
    if refs[-1] - refs[0] == 0:
        return np.zeros_like(values, dtype=float)
    forward = np.interp(values, refs, targets)
    reverse = -np.interp(-values, -refs[::-1], -targets[::-1])
    return 0.5*(forward + reverse)


def transform(prep, split, raw_numeric=False):
    """Encode a split with a fitted preprocessor

    The encoded columns are, in order: numeric (quantile-normalized,
    or raw when ``raw_numeric`` is set), binary (unchanged) and one-hot
    blocks with a trailing unknown bucket per categorical column.

    Parameters
    ----------
    prep : Preprocessor
        Fitted preprocessing.
    split : Split
        Raw split.
    raw_numeric : bool (optional)
        Skip the quantile map for numeric columns. By default it is
        False.

    Returns
    -------
    x : ndarray (n_rows, n_features)
        Encoded features.

    """
    if (split.x_num.shape[1] != prep.n_num or
            split.x_bin.shape[1] != prep.n_bin or
            split.x_cat.shape[1] != len(prep.vocabularies)):
        raise ValueError("Column set mismatch with the fitted preprocessor.")
    n_rows = split.n_rows
    if raw_numeric or prep.skip_quantile_norm:
        num = np.array(split.x_num, dtype=float)
    else:
        num = np.zeros((n_rows, prep.n_num))
        for col, refs in enumerate(prep.quantile_refs):
            num[:, col] = quantile_map(split.x_num[:, col], refs,
                                       prep.quantile_targets)
    blocks = [num, np.array(split.x_bin, dtype=float)]
    for col, vocab in enumerate(prep.vocabularies):
        index = {value: cont for cont, value in enumerate(vocab)}
        onehot = np.zeros((n_rows, len(vocab) + 1))
        positions = [index.get(value, len(vocab))
                     for value in split.x_cat[:, col]]
        onehot[np.arange(n_rows), positions] = 1
        blocks.append(onehot)
    return np.hstack(blocks)


def normalize_labels(prep, y):
    """Standardize regression labels (identity for classification)"""
    return (np.asarray(y, dtype=float) - prep.label_mean)/prep.label_std


def denormalize_labels(prep, y):
    """Inverse of :func:`normalize_labels`"""
    return np.asarray(y, dtype=float)*prep.label_std + prep.label_mean


#%% Synthetic datasets
def make_synthetic(kind, n, seed, noise=0.0, separation=6.0):
    """Generate a synthetic dataset with a 64/16/20 split

    Parameters
    ----------
    kind : str
        ``two_gaussians`` (binary classification, class means
        ``separation`` standard deviations apart), ``linear_regression``
        or ``friedman``.
    n : int
        Number of rows (at least 50).
    seed : int
        Generation seed.
    noise : float (optional)
        Standard deviation of the label noise for the regression kinds.
    separation : float (optional)
        Distance between class means for ``two_gaussians``.

    Returns
    -------
    meta : DatasetMeta
        Dataset description.
    data : SplitData
        Splits.

    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError("You entered an invalid synthetic dataset kind.")
    if n < MIN_SYNTHETIC_ROWS:
        raise ValueError("n too small: at least {} rows are needed."
                         .format(MIN_SYNTHETIC_ROWS))
    rng = make_rng(seed, "synthetic", kind)
    x_bin = np.zeros((n, 0))
    x_cat = np.zeros((n, 0), dtype=str)
    if kind == "two_gaussians":
        n_num = 8
        direction = rng.standard_normal(n_num)
        direction /= np.linalg.norm(direction)
        y = rng.integers(0, 2, size=n)
        shift = (2*y - 1)*separation/2
        x_num = rng.standard_normal((n, n_num)) + shift[:, None]*direction
        x_bin = rng.integers(0, 2, size=(n, 1)).astype(float)
        x_cat = rng.choice(np.array(["a", "b", "c"]), size=(n, 1))
    elif kind == "linear_regression":
        n_num = 8
        x_num = rng.standard_normal((n, n_num))
        coefs = rng.standard_normal(n_num)
        y = x_num @ coefs + rng.standard_normal()
        y = y + noise*rng.standard_normal(n)
    else:
        n_num = 10
        x_num = rng.uniform(size=(n, n_num))
        y = (10*np.sin(np.pi*x_num[:, 0]*x_num[:, 1]) +
             20*(x_num[:, 2] - 0.5)**2 + 10*x_num[:, 3] + 5*x_num[:, 4])
        y = y + noise*rng.standard_normal(n)
    order = rng.permutation(n)
    n_train = int(round(SPLIT_FRACTIONS[0]*n))
    n_val = int(round(SPLIT_FRACTIONS[1]*n))
    parts = np.split(order, [n_train, n_train + n_val])
    splits = [Split(x_num=x_num[idx], x_bin=x_bin[idx], x_cat=x_cat[idx],
                    y=y[idx]) for idx in parts]
    name = "{}_seed{}".format(kind, seed)
    if noise:
        name += "_noise{:g}".format(noise)
    regression = kind != "two_gaussians"
    meta = DatasetMeta(
        name=name,
        task_type="regression" if regression else "binclass",
        metric="rmse" if regression else "accuracy",
        batch_size=min(SYNTHETIC_BATCH_SIZE, n_train),
        num_features=["num_{}".format(col) for col in range(n_num)],
        bin_features=["bin_{}".format(col) for col in range(x_bin.shape[1])],
        cat_features=["cat_{}".format(col) for col in range(x_cat.shape[1])],
        skip_quantile_norm=False)
    data = SplitData(train=splits[0], val=splits[1], test=splits[2],
                     categories=category_vocabularies(splits[0]))
    return meta, data


if __name__ == "__main__":
    import doctest
    doctest.testmod()
