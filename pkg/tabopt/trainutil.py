# -*- coding: utf-8 -*-
"""
Training protocol
-----------------

Minibatch training with global gradient clipping and early stopping on
the validation metric, evaluation of the selected checkpoint on the
test split and the multi-seed protocol.

Run records are written as JSON lines. ``runs.jsonl`` holds only
deterministic fields; wall times go to the sibling ``timings.jsonl``.

"""
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from datetime import datetime
import numpy as np
from scipy.stats import rankdata

from tabopt import constants
from tabopt import emautil as ema
from tabopt import modelutil as mdl
from tabopt import nnutil as nn
from tabopt import optimutil as opt
from tabopt import preprocesor as pre

logger = logging.getLogger(__name__)

DTYPES = {"float64": np.float64, "float32": np.float32}


#%% Records
@dataclass
class TrainConfig:
    """Training protocol settings"""
    patience: int = constants.PATIENCE
    clip_threshold: float = constants.CLIP_THRESHOLD
    max_epochs: int = constants.MAX_EPOCHS
    batch_size: int = None
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("The patience should be at least 1.")
        if not self.clip_threshold > 0:
            raise ValueError("The clipping threshold should be positive.")
        if self.max_epochs < 1:
            raise ValueError("The maximum number of epochs should be at "
                             "least 1.")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("The batch size should be positive.")
        if self.dtype not in DTYPES:
            raise ValueError("The dtype should be float64 or float32.")


@dataclass
class RunResult:
    """Outcome of one (dataset, model, method, seed) training run

    Scores are reported in the metric's own orientation (RMSE is
    positive). Failed runs have ``status="failed"`` and no scores.
    """
    dataset: str
    model: str
    method: str
    seed: int
    metric: str
    status: str = "ok"
    best_val_score: float = None
    test_score: float = None
    best_epoch: int = 0
    epochs_run: int = 0
    test_label_std: float = None
    wall_time_seconds: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def run_id(self):
        return "{}|{}|{}|{}".format(self.dataset, self.model, self.method,
                                    self.seed)

    def to_record(self):
        """Deterministic JSON-ready record without timing"""
        record = asdict(self)
        del record["wall_time_seconds"]
        record["run_id"] = self.run_id
        record["schema_version"] = constants.SCHEMA_VERSION
        record["constants"] = constants.as_dict()
        return record

    @classmethod
    def from_record(cls, record, wall_time=0.0):
        known = {name: record[name] for name in cls.__dataclass_fields__
                 if name in record}
        known["wall_time_seconds"] = wall_time
        return cls(**known)


@dataclass(frozen=True)
class EncodedSplit:
    """Encoded features and labels of one split"""
    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class TaskData:
    """A dataset ready for training

    Train labels are normalized; validation and test labels are kept
    raw, so metrics are computed on the original scale.
    """
    name: str
    task_type: str
    metric: str
    train: EncodedSplit
    val: EncodedSplit
    test: EncodedSplit
    prep: pre.Preprocessor
    n_num: int
    out_dim: int
    batch_size: int
    test_label_std: float


def prepare_data(meta, data, model_kind="mlp",
                 seed=constants.PREPROCESSING_SEED):
    """Fit the preprocessing and encode the three splits

    Parameters
    ----------
    meta : DatasetMeta
        Dataset description.
    data : SplitData
        Raw splits.
    model_kind : str (optional)
        ``mlp_ple`` keeps the raw numeric block for the embeddings.
    seed : int (optional)
        Seed of the quantile jitter.

    Returns
    -------
    task : TaskData
        Encoded dataset.

    """
    if model_kind not in mdl.MODEL_KINDS:
        raise ValueError("You entered an invalid model kind.")
    prep = pre.fit_preprocessor(meta, data.train, seed)
    raw = model_kind == "mlp_ple"
    encoded = {}
    for name in pre.SPLITS:
        split = getattr(data, name)
        encoded[name] = pre.transform(prep, split, raw_numeric=raw)
    if meta.is_regression:
        out_dim = 1
        y_train = pre.normalize_labels(prep, data.train.y)
    else:
        labels = np.concatenate([data.train.y, data.val.y, data.test.y])
        out_dim = max(int(labels.max()) + 1, 2)
        y_train = data.train.y
    return TaskData(name=meta.name, task_type=meta.task_type,
                    metric=meta.metric,
                    train=EncodedSplit(encoded["train"], y_train),
                    val=EncodedSplit(encoded["val"], data.val.y),
                    test=EncodedSplit(encoded["test"], data.test.y),
                    prep=prep, n_num=prep.n_num, out_dim=out_dim,
                    batch_size=meta.batch_size,
                    test_label_std=float(np.std(data.test.y)))


#%% Metrics
def evaluate(metric, predictions, labels):
    """Score predictions with ``accuracy``, ``roc_auc`` or ``rmse``

    Parameters
    ----------
    metric : str
        Metric name.
    predictions : ndarray
        Class probabilities ``(n, n_classes)`` (or class-1 scores for
        ``roc_auc``) or regression values on the original scale.
    labels : ndarray (n,)
        True labels.

    Returns
    -------
    score : float
        Metric value. ROC-AUC uses midranks for tied scores.

    Examples
    --------
    >>> evaluate("roc_auc", np.array([0.1, 0.4, 0.35, 0.8]),
    ...          np.array([0, 0, 1, 1]))
    0.75
    >>> evaluate("rmse", np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    0.0

    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if metric == "accuracy":
        if predictions.ndim == 2:
            predictions = np.argmax(predictions, axis=1)
        return float(np.mean(predictions == labels))
    elif metric == "roc_auc":
        if predictions.ndim == 2:
            predictions = predictions[:, 1]
        positive = labels == 1
        n_pos = int(positive.sum())
        n_neg = labels.size - n_pos
        if n_pos == 0 or n_neg == 0:
            raise ValueError("undefined AUC: labels hold a single class.")
        ranks = rankdata(predictions)
        rank_sum = ranks[positive].sum() - n_pos*(n_pos + 1)/2
        return float(rank_sum/(n_pos*n_neg))
    elif metric == "rmse":
        diff = np.asarray(predictions, dtype=float) - labels
        return float(np.sqrt(np.mean(diff*diff)))
    raise ValueError("You entered an invalid metric.")


def oriented(metric, score):
    """Higher-is-better version of a metric value"""
    return -score if metric == "rmse" else score


def _metric_value(data, model_cfg, params, split):
    pred = mdl.predict(model_cfg, params, split.x.astype(params.dtype),
                       data.task_type)
    if data.task_type == "regression":
        pred = pre.denormalize_labels(data.prep, pred)
    return evaluate(data.metric, pred, split.y)


def _validation_score(data, model_cfg, params):
    """Validation metric value for the current weights"""
    return _metric_value(data, model_cfg, params, data.val)


#%% Early stopping
class EarlyStopping:
    """Track the best validation score over epochs

    An epoch improves only if its score is strictly greater than the
    best so far. Training stops once ``patience`` epochs in a row fail
    to improve.

    Examples
    --------
    >>> stopper = EarlyStopping(2)
    >>> [stopper.update(score) for score in [1.0, 1.0, 2.0, 0.0, 0.0]]
    [True, False, True, False, False]
    >>> stopper.best_epoch, stopper.epochs_run, stopper.should_stop
    (3, 5, True)

    """

    def __init__(self, patience):
        self.patience = patience
        self.best_score = -np.inf
        self.best_epoch = 0
        self.epochs_run = 0

    def update(self, score):
        self.epochs_run += 1
        if score > self.best_score:
            self.best_score = score
            self.best_epoch = self.epochs_run
            return True
        return False

    @property
    def should_stop(self):
        return self.epochs_run - self.best_epoch >= self.patience


#%% Training
def _evaluated(spec, state, params, tracker):
    if tracker is not None:
        return ema.eval_params(tracker)
    return opt.eval_params(spec, state, params)


def train_one(data, model_cfg, spec, train_cfg):
    """Train one model with early stopping and score it on the test split

    Parameters
    ----------
    data : TaskData
        Encoded dataset.
    model_cfg : model configuration
        Architecture.
    spec : OptimizerSpec
        Optimizer, with ``ema_decay`` set for weight averaging.
    train_cfg : TrainConfig
        Protocol settings and seed.

    Returns
    -------
    result : RunResult
        Run outcome. A non-finite loss, gradient or update ends the run
        with ``status="failed"``.

    """
    start_time = datetime.now()
    seed = train_cfg.seed
    dtype = DTYPES[train_cfg.dtype]
    batch_size = train_cfg.batch_size or data.batch_size
    x_train = data.train.x.astype(dtype)
    y_train = data.train.y
    n_train = x_train.shape[0]
    if batch_size > n_train:
        raise ValueError("The batch size is larger than the train split.")
    result = RunResult(dataset=data.name,
                       model=mdl.config_to_dict(model_cfg)["kind"],
                       method=spec.method, seed=seed, metric=data.metric,
                       test_label_std=data.test_label_std)
    params = mdl.build_model(model_cfg, seed, dtype=dtype)
    state = opt.init_state(spec, params)
    tracker = None
    if spec.ema_decay is not None:
        tracker = ema.init_ema(params, spec.ema_decay)
    shuffle_rng = nn.make_rng(seed, "shuffle")
    dropout_rng = nn.make_rng(seed, "dropout")
    stopper = EarlyStopping(train_cfg.patience)
    best_params = None
    try:
        for _ in range(train_cfg.max_epochs):
            order = shuffle_rng.permutation(n_train)
            for first in range(0, n_train, batch_size):
                batch = order[first:first + batch_size]
                _, grads = mdl.loss_and_grads(model_cfg, params,
                                              x_train[batch], y_train[batch],
                                              data.task_type,
                                              rng=dropout_rng)
                grads = nn.global_grad_clip(grads, train_cfg.clip_threshold)
                opt.step(spec, state, params, grads)
                if tracker is not None:
                    ema.ema_update(tracker, params)
            evaluated = _evaluated(spec, state, params, tracker)
            score = oriented(data.metric,
                             _validation_score(data, model_cfg, evaluated))
            nn.check_finite(score, "validation score")
            if stopper.update(score):
                best_params = evaluated.copy()
            if stopper.should_stop:
                break
    except nn.NonFiniteError as err:
        logger.warning("Run %s failed: %s", result.run_id, err)
        result.status = "failed"
        result.epochs_run = stopper.epochs_run
        result.best_epoch = stopper.best_epoch
        result.wall_time_seconds = _seconds_since(start_time)
        return result
    test_score = _metric_value(data, model_cfg, best_params, data.test)
    result.best_val_score = float(oriented(data.metric, stopper.best_score))
    result.test_score = float(test_score)
    result.best_epoch = stopper.best_epoch
    result.epochs_run = stopper.epochs_run
    result.wall_time_seconds = _seconds_since(start_time)
    logger.info("Run %s: best epoch %d of %d, test %s %.6f",
                result.run_id, result.best_epoch, result.epochs_run,
                data.metric, result.test_score)
    return result


def _seconds_since(start_time):
    return (datetime.now() - start_time).total_seconds()


def _train_job(job):
    data, model_cfg, spec, train_cfg = job
    return train_one(data, model_cfg, spec, train_cfg)


def run_protocol(data, model_cfg, spec, seeds, train_cfg=None, workers=1):
    """Retrain a configuration once per seed

    Parameters
    ----------
    data : TaskData
        Encoded dataset.
    model_cfg : model configuration
        Architecture.
    spec : OptimizerSpec
        Optimizer.
    seeds : list of int
        Run seeds.
    train_cfg : TrainConfig (optional)
        Protocol settings; its seed is replaced by each run seed.
    workers : int (optional)
        Number of worker processes. Results keep the order of ``seeds``.

    Returns
    -------
    results : list of RunResult
        One result per seed.

    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("At least one seed is needed.")
    if train_cfg is None:
        train_cfg = TrainConfig()
    start_time = datetime.now()
    jobs = []
    for seed in seeds:
        cfg = TrainConfig(**dict(asdict(train_cfg), seed=seed))
        jobs.append((data, model_cfg, spec, cfg))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(_train_job, jobs))
    else:
        results = [_train_job(job) for job in jobs]
    n_failed = sum(result.status == "failed" for result in results)
    if n_failed:
        logger.warning("%d of %d runs failed.", n_failed, len(results))
    logger.info("Duration for %d runs: %s", len(results),
                datetime.now() - start_time)
    return results


#%% Run files
def write_runs(folder, results, config=None):
    """Append run records to ``runs.jsonl`` and ``timings.jsonl``"""
    os.makedirs(folder, exist_ok=True)
    with open(os.path.join(folder, "runs.jsonl"), "a",
              encoding="utf-8") as runs_file, \
            open(os.path.join(folder, "timings.jsonl"), "a",
                 encoding="utf-8") as times_file:
        for result in results:
            if config is not None:
                result.config = dict(config)
            runs_file.write(json.dumps(result.to_record(),
                                       sort_keys=True) + "\n")
            times_file.write(json.dumps(
                {"run_id": result.run_id,
                 "wall_time_seconds": result.wall_time_seconds},
                sort_keys=True) + "\n")


def read_runs(path):
    """Read run records from a ``runs.jsonl`` file or a folder tree

    Timings are merged from the sibling ``timings.jsonl`` when present.
    """
    if os.path.isdir(path):
        files = []
        for root, _, names in sorted(os.walk(path)):
            if "runs.jsonl" in names:
                files.append(os.path.join(root, "runs.jsonl"))
        files.sort()
    elif os.path.isfile(path):
        files = [path]
    else:
        raise FileNotFoundError("No run records at {}.".format(path))
    results = []
    for run_path in files:
        times = {}
        times_path = os.path.join(os.path.dirname(run_path),
                                  "timings.jsonl")
        if os.path.isfile(times_path):
            for record in _read_jsonl(times_path):
                times[record["run_id"]] = record["wall_time_seconds"]
        for record in _read_jsonl(run_path):
            if record.get("schema_version") != constants.SCHEMA_VERSION:
                raise ValueError("Unsupported run record version in {}."
                                 .format(run_path))
            results.append(RunResult.from_record(
                record, wall_time=times.get(record["run_id"], 0.0)))
    return results


def _read_jsonl(path):
    with open(path, "r", encoding="utf-8") as fin:
        return [json.loads(line) for line in fin if line.strip()]


if __name__ == "__main__":
    import doctest
    doctest.testmod()
