# -*- coding: utf-8 -*-
"""
Hyperparameter tuning
---------------------

Joint search over model and optimizer hyperparameters with a
tree-structured Parzen estimator (TPE) sampler.

A configuration is a flat dictionary holding both the model
hyperparameters (``n_layers``, ``width``, ...) and the optimizer ones
(``lr``, ``weight_decay``, ...). :func:`split_config` separates them.

"""
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from datetime import datetime
import numpy as np
from scipy.stats import truncnorm

from tabopt import constants
from tabopt import modelutil as mdl
from tabopt import nnutil as nn
from tabopt import optimutil as opt
from tabopt import trainutil as trn

logger = logging.getLogger(__name__)

MODEL_KEYS = ("n_layers", "width", "dropout", "k", "n_bins", "d_embedding")
OPTIMIZER_KEYS = ("lr", "weight_decay", "alpha", "momentum", "dampening",
                  "muon_lr", "beta1", "beta2", "eps", "ema_decay")


#%% Dimensions
@dataclass(frozen=True)
class UniformInt:
    """Integers ``low, low + step, ..., high``"""
    low: int
    high: int
    step: int = 1

    def __post_init__(self):
        if self.low > self.high or self.step < 1:
            raise ValueError("Invalid integer range.")
        if (self.high - self.low) % self.step:
            raise ValueError("The step should divide the integer range.")

    @property
    def grid(self):
        return np.arange(self.low, self.high + 1, self.step)

    def prior_sample(self, rng):
        return int(self.low + self.step*rng.integers(0, len(self.grid)))

    def contains(self, value):
        return (int(value) == value and self.low <= value <= self.high and
                (value - self.low) % self.step == 0)

    def parzen(self, values):
        index = (np.asarray(values) - self.low)//self.step
        return _DiscreteParzen(self.grid, _smoothed_mass(len(self.grid),
                                                         index), int)


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("Invalid range.")

    def prior_sample(self, rng):
        return float(rng.uniform(self.low, self.high))

    def contains(self, value):
        return self.low <= value <= self.high

    def parzen(self, values):
        return _NumericParzen(np.asarray(values, dtype=float),
                              self.low, self.high)


@dataclass(frozen=True)
class LogUniform:
    """Values whose logarithm is uniform in ``[log low, log high]``"""
    low: float
    high: float

    def __post_init__(self):
        if not 0 < self.low < self.high:
            raise ValueError("Invalid log range.")

    def prior_sample(self, rng):
        value = np.exp(rng.uniform(np.log(self.low), np.log(self.high)))
        return float(np.clip(value, self.low, self.high))

    def contains(self, value):
        return self.low <= value <= self.high

    def parzen(self, values):
        return _NumericParzen(np.log(np.asarray(values, dtype=float)),
                              np.log(self.low), np.log(self.high),
                              log=True, bounds=(self.low, self.high))


@dataclass(frozen=True)
class ZeroOr:
    """Zero with probability ``p_zero``, otherwise a draw from ``inner``"""
    inner: object
    p_zero: float = constants.ZERO_OR_PROB

    def prior_sample(self, rng):
        if rng.random() < self.p_zero:
            return 0.0
        return self.inner.prior_sample(rng)

    def contains(self, value):
        return value == 0 or self.inner.contains(value)

    def parzen(self, values):
        values = np.asarray(values, dtype=float)
        nonzero = values[values != 0]
        p_zero = (self.p_zero + (values == 0).sum())/(1 + values.size)
        return _ZeroOrParzen(p_zero, self.inner.parzen(nonzero))


@dataclass(frozen=True)
class Categorical:
    values: tuple

    def prior_sample(self, rng):
        return self.values[int(rng.integers(0, len(self.values)))]

    def contains(self, value):
        return value in self.values

    def parzen(self, values):
        counts = np.array([sum(val == choice for val in values)
                           for choice in self.values], dtype=float)
        mass = (counts + 1/len(self.values))/(len(values) + 1)
        return _DiscreteParzen(self.values, mass, None)


@dataclass(frozen=True)
class Constant:
    value: object

    def prior_sample(self, rng):
        return self.value

    def contains(self, value):
        return value == self.value

    def parzen(self, values):
        return _ConstantParzen(self.value)


def dimension_to_dict(dim):
    """Declarative JSON form of a dimension"""
    data = {"type": type(dim).__name__}
    for name, value in asdict(dim).items():
        if isinstance(dim, ZeroOr) and name == "inner":
            value = dimension_to_dict(dim.inner)
        data[name] = list(value) if isinstance(value, tuple) else value
    return data


#%% Parzen estimators
def silverman_bandwidth(values, span):
    """Silverman's rule ``1.06 std n^(-1/5)``, kept within the span

    The lower bound ``TPE_MIN_BANDWIDTH*span`` only stops the kernels
    from collapsing; it stays well below the spread of a converged
    good set.

    Examples
    --------
    >>> round(silverman_bandwidth(np.array([0.5]), 1.0), 6)
    0.265

    """
    n_obs = max(len(values), 1)
    std = np.std(values) if n_obs > 1 else 0.0
    if std == 0:
        std = span/4
    bandwidth = 1.06*std*n_obs**(-0.2)
    return float(np.clip(bandwidth, constants.TPE_MIN_BANDWIDTH*span, span))


class _NumericParzen:
    """Truncated-normal kernels around observations plus a flat prior"""

    def __init__(self, obs, low, high, log=False, bounds=None):
        self.obs = obs
        self.low = low
        self.high = high
        self.log = log
        self.bounds = bounds
        self.scale = silverman_bandwidth(obs, high - low)

    def _clip(self, u):
        value = np.exp(u) if self.log else u
        if self.bounds is not None:
            value = np.clip(value, *self.bounds)
        return value

    def sample(self, rng, size):
        comp = rng.integers(0, self.obs.size + 1, size=size)
        u = rng.uniform(self.low, self.high, size=size)
        kernel = comp < self.obs.size
        if kernel.any():
            loc = self.obs[comp[kernel]]
            a = (self.low - loc)/self.scale
            b = (self.high - loc)/self.scale
            u[kernel] = truncnorm.rvs(a, b, loc=loc, scale=self.scale,
                                      size=int(kernel.sum()),
                                      random_state=rng)
        return [float(val) for val in self._clip(np.clip(u, self.low,
                                                         self.high))]

    def log_pdf(self, values):
        values = np.asarray(values, dtype=float)
        u = np.log(values) if self.log else values
        density = np.full(u.shape, 1/(self.high - self.low))
        if self.obs.size:
            loc = self.obs[None, :]
            a = (self.low - loc)/self.scale
            b = (self.high - loc)/self.scale
            density = density + truncnorm.pdf(u[:, None], a, b, loc=loc,
                                               scale=self.scale).sum(axis=1)
        return np.log(density/(self.obs.size + 1))


def _smoothed_mass(n_grid, index):
    """Discretized Gaussian kernels on an index grid plus a flat prior"""
    mass = np.full(n_grid, 1/n_grid)
    if len(index):
        grid = np.arange(n_grid)
        bandwidth = max(silverman_bandwidth(index, n_grid), 0.5)
        kernels = np.exp(-0.5*((grid[None, :] - index[:, None]) /
                               bandwidth)**2)
        mass = mass + (kernels/kernels.sum(axis=1, keepdims=True)).sum(0)
    return mass/(len(index) + 1)


class _DiscreteParzen:

    def __init__(self, values, mass, cast):
        self.values = list(values)
        self.mass = mass/mass.sum()
        self.cast = cast

    def sample(self, rng, size):
        picks = rng.choice(len(self.values), size=size, p=self.mass)
        values = [self.values[pick] for pick in picks]
        if self.cast is not None:
            values = [self.cast(val) for val in values]
        return values

    def log_pdf(self, values):
        lookup = {val: np.log(mass) for val, mass in zip(self.values,
                                                          self.mass)}
        return np.array([lookup.get(val, -np.inf) for val in values])


class _ZeroOrParzen:

    def __init__(self, p_zero, inner):
        self.p_zero = p_zero
        self.inner = inner

    def sample(self, rng, size):
        zero = rng.random(size) < self.p_zero
        inner = self.inner.sample(rng, size)
        return [0.0 if flag else val for flag, val in zip(zero, inner)]

    def log_pdf(self, values):
        values = np.asarray(values, dtype=float)
        out = np.full(values.shape, np.log(self.p_zero))
        nonzero = values != 0
        if nonzero.any():
            out[nonzero] = (np.log(1 - self.p_zero) +
                            self.inner.log_pdf(values[nonzero]))
        return out


class _ConstantParzen:

    def __init__(self, value):
        self.value = value

    def sample(self, rng, size):
        return [self.value]*size

    def log_pdf(self, values):
        return np.zeros(len(values))


#%% Search spaces
@dataclass
class SearchSpace:
    """Named dimensions and the trial budget"""
    dims: dict
    budget: int = constants.TUNING_BUDGET
    model_kind: str = None
    method: str = None

    def prior_sample(self, rng):
        return {name: dim.prior_sample(rng) for name, dim in
                self.dims.items()}

    def contains(self, config):
        return (set(config) == set(self.dims) and
                all(dim.contains(config[name])
                    for name, dim in self.dims.items()))

    def to_dict(self):
        return {"model_kind": self.model_kind, "method": self.method,
                "budget": self.budget,
                "dims": {name: dimension_to_dict(dim)
                         for name, dim in self.dims.items()}}


WIDTH = UniformInt(64, 1024, 16)
DROPOUT = ZeroOr(Uniform(0.0, 0.5))
OPTIMIZER_WD = LogUniform(0.005, 5.0)

MODEL_SPACES = {
    "mlp": {"n_layers": UniformInt(1, 6),
            "width": WIDTH,
            "dropout": DROPOUT},
    "mlp_ple": {"n_layers": UniformInt(1, 5),
                "width": WIDTH,
                "dropout": DROPOUT,
                "weight_decay": ZeroOr(LogUniform(0.001, 1.0)),
                "d_embedding": UniformInt(8, 32, 4),
                "n_bins": UniformInt(2, 128)},
    "tabm_packed": {"k": Constant(16),
                    "n_layers": UniformInt(1, 5),
                    "width": WIDTH,
                    "dropout": DROPOUT,
                    "weight_decay": ZeroOr(LogUniform(0.005, 5.0))}}

LR_RANGES = {"adan": (1e-4, 1e-2),
             "lion": (1e-5, 1e-3),
             "signum": (1e-5, 1e-3),
             "schedule_free_adamw": (1e-4, 0.03),
             "sgd": (1e-3, 0.1)}
DEFAULT_LR_RANGE = (3e-5, 1e-3)


def parse_method(method):
    """Split a method id into its rule and EMA flag

    Examples
    --------
    >>> parse_method("muon_ema")
    ('muon', True)
    >>> parse_method("adamw")
    ('adamw', False)

    """
    rule, ema = method, False
    if method.endswith("_ema"):
        rule, ema = method[:-len("_ema")], True
    if rule not in opt.RULES:
        raise ValueError("You entered an invalid optimizer method.")
    if ema and rule == "schedule_free_adamw":
        raise ValueError("Schedule-Free AdamW cannot be combined with EMA.")
    return rule, ema


def optimizer_block(method):
    """Search dimensions of an optimizer method"""
    rule, ema = parse_method(method)
    dims = {}
    if ema:
        dims["ema_decay"] = LogUniform(*constants.EMA_DECAY_RANGE)
    dims["lr"] = LogUniform(*LR_RANGES.get(rule, DEFAULT_LR_RANGE))
    dims["weight_decay"] = OPTIMIZER_WD
    if rule == "ademamix":
        dims["alpha"] = Uniform(1.0, 8.0)
    elif rule == "sgd":
        dims["momentum"] = Constant(constants.SGD_MOMENTUM)
        dims["dampening"] = Constant(constants.SGD_DAMPENING)
    elif rule == "muon":
        dims["beta1"] = Constant(constants.BETAS[0])
        dims["beta2"] = Constant(constants.BETAS[1])
        dims["eps"] = Constant(constants.EPS)
        dims["muon_lr"] = LogUniform(1e-4, 0.03)
    return dims


def space_for(model_kind, method, large=False):
    """Joint search space of a model and an optimizer method

    The optimizer block is added to the model table. Its weight decay
    is replaced by the model table's own when the table has one.

    Parameters
    ----------
    model_kind : str
        ``mlp``, ``mlp_ple`` or ``tabm_packed``.
    method : str
        Optimizer rule, optionally with the ``_ema`` suffix.
    large : bool (optional)
        Large dataset: ``tabm_packed`` gets the reduced budget.

    Returns
    -------
    space : SearchSpace
        Search space with its budget.

    """
    if model_kind not in MODEL_SPACES:
        raise ValueError("You entered an invalid model kind.")
    dims = dict(MODEL_SPACES[model_kind])
    for name, dim in optimizer_block(method).items():
        dims.setdefault(name, dim)
    budget = constants.TUNING_BUDGET
    if large and model_kind == "tabm_packed":
        budget = constants.TUNING_BUDGET_LARGE
    return SearchSpace(dims=dims, budget=budget, model_kind=model_kind,
                       method=method)


DEFAULT_MODEL = {"n_layers": 2, "width": 128, "dropout": 0.0, "k": 16,
                 "n_bins": 16, "d_embedding": 8}
DEFAULT_LR = {"sgd": 0.01, "lion": 1e-4, "signum": 1e-4}


def default_config(model_kind, method):
    """Untuned configuration for a model and a method"""
    rule, ema = parse_method(method)
    config = {name: DEFAULT_MODEL[name] for name in MODEL_SPACES[model_kind]
              if name in DEFAULT_MODEL}
    config["lr"] = DEFAULT_LR.get(rule, 1e-3)
    config["weight_decay"] = 0.0
    if rule == "muon":
        config["muon_lr"] = 0.02
    if ema:
        config["ema_decay"] = 0.99
    return config


def split_config(config, method):
    """Separate a flat configuration into model hyperparameters and an
    :class:`~tabopt.optimutil.OptimizerSpec`

    Examples
    --------
    >>> hparams, spec = split_config({"n_layers": 2, "width": 64,
    ...                               "lr": 0.001, "ema_decay": 0.99},
    ...                              "adamw_ema")
    >>> hparams, spec.method
    ({'n_layers': 2, 'width': 64}, 'adamw_ema')

    """
    rule, ema = parse_method(method)
    unknown = set(config) - set(MODEL_KEYS) - set(OPTIMIZER_KEYS)
    if unknown:
        raise ValueError("Unknown configuration keys: {}."
                         .format(sorted(unknown)))
    hparams = {key: config[key] for key in MODEL_KEYS if key in config}
    extras = {key: config[key] for key in OPTIMIZER_KEYS
              if key in config and key not in ("beta1", "beta2")}
    if "beta1" in config or "beta2" in config:
        extras["betas"] = (config.get("beta1", constants.BETAS[0]),
                           config.get("beta2", constants.BETAS[1]))
    if ema and "ema_decay" not in extras:
        raise ValueError("Method {} needs an ema_decay.".format(method))
    if not ema:
        extras.pop("ema_decay", None)
    return hparams, opt.OptimizerSpec(rule=rule, **extras)


#%% TPE sampler
@dataclass
class TrialRecord:
    """One tuning trial; ``objective`` is set only for ``ok`` trials"""
    index: int
    config: dict
    objective: float = None
    status: str = "ok"
    wall_time_seconds: float = 0.0


def sample(space, history, rng, n_startup=constants.TPE_N_STARTUP,
           gamma=constants.TPE_GAMMA,
           n_candidates=constants.TPE_N_CANDIDATES):
    """Propose the next configuration

    The first ``n_startup`` trials are drawn from the prior. Afterwards
    the finished trials are split at the ``gamma`` quantile of their
    objectives into good and bad sets (failed trials are bad), a Parzen
    estimator is fitted per dimension on each set and the candidate
    maximizing the good/bad density ratio is returned.

    Parameters
    ----------
    space : SearchSpace
        Search space.
    history : list of TrialRecord
        Previous trials.
    rng : numpy.random.Generator
        Sampler stream.

    Returns
    -------
    config : dict
        Proposed configuration.

    """
    ok = [trial for trial in history if trial.status == "ok"]
    if len(history) < n_startup or not ok:
        return space.prior_sample(rng)
    ranked = sorted(ok, key=lambda trial: (-trial.objective, trial.index))
    n_good = max(1, int(math.ceil(gamma*len(ranked))))
    good = ranked[:n_good]
    good_ids = {trial.index for trial in good}
    bad = [trial for trial in history if trial.index not in good_ids]
    candidates = [{} for _ in range(n_candidates)]
    score = np.zeros(n_candidates)
    for name, dim in space.dims.items():
        good_est = dim.parzen([trial.config[name] for trial in good])
        bad_est = dim.parzen([trial.config[name] for trial in bad])
        drawn = good_est.sample(rng, n_candidates)
        for cand, value in zip(candidates, drawn):
            cand[name] = value
        score += good_est.log_pdf(drawn) - bad_est.log_pdf(drawn)
    return candidates[int(np.argmax(score))]


class TrialObjective:
    """Train one configuration with the tuning seed

    Calling the objective returns the oriented validation score, or
    None for a failed run.
    """

    def __init__(self, data, model_kind, method, train_cfg=None):
        self.data = data
        self.model_kind = model_kind
        self.method = method
        self.train_cfg = train_cfg or trn.TrainConfig()

    def model_config(self, hparams):
        return mdl.make_model_config(self.model_kind, hparams,
                                     self.data.train.x, self.data.out_dim,
                                     n_num=self.data.n_num)

    def __call__(self, config):
        hparams, spec = split_config(config, self.method)
        result = trn.train_one(self.data, self.model_config(hparams), spec,
                               self.train_cfg)
        if result.status != "ok":
            return None
        return trn.oriented(result.metric, result.best_val_score)


def _run_trial(job):
    objective, index, config = job
    start_time = datetime.now()
    try:
        value = objective(config)
    except nn.NonFiniteError:
        value = None
    wall_time = (datetime.now() - start_time).total_seconds()
    status = "failed" if value is None or not np.isfinite(value) else "ok"
    return TrialRecord(index=index, config=config,
                       objective=None if status == "failed" else float(value),
                       status=status, wall_time_seconds=wall_time)


@dataclass
class TuningResult:
    best_config: dict
    best_index: int
    best_objective: float
    trials: list = field(default_factory=list)


def best_of(trials):
    """Winner of a trial list, earliest trial on ties"""
    ok = [trial for trial in trials if trial.status == "ok"]
    if not ok:
        raise RuntimeError("All tuning trials failed.")
    best = max(ok, key=lambda trial: (trial.objective, -trial.index))
    return TuningResult(best_config=dict(best.config), best_index=best.index,
                        best_objective=best.objective, trials=list(trials))


def tune(space, objective, budget=None, seed=0, workers=1):
    """Run a budgeted TPE search

    Parameters
    ----------
    space : SearchSpace
        Search space.
    objective : callable
        Maps a configuration to a higher-is-better value or None.
    budget : int (optional)
        Number of trials. By default the space's budget.
    seed : int (optional)
        Sampler seed.
    workers : int (optional)
        Trials run in rounds of ``workers``; a round's proposals ignore
        the trials running beside them.

    Returns
    -------
    result : TuningResult
        Winner and the full trial log.

    """
    budget = space.budget if budget is None else budget
    if budget < 1:
        raise ValueError("The tuning budget should be at least 1.")
    rng = nn.make_rng(seed, "tpe", space.model_kind, space.method)
    start_time = datetime.now()
    trials = []
    executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 \
        else None
    try:
        while len(trials) < budget:
            n_round = min(max(workers, 1), budget - len(trials))
            jobs = [(objective, len(trials) + cont,
                     sample(space, trials, rng)) for cont in range(n_round)]
            if executor is not None:
                records = list(executor.map(_run_trial, jobs))
            else:
                records = [_run_trial(job) for job in jobs]
            for record in records:
                logger.info("Trial %d: %s %s", record.index, record.status,
                            record.objective)
            trials.extend(records)
    finally:
        if executor is not None:
            executor.shutdown()
    n_failed = sum(trial.status == "failed" for trial in trials)
    if n_failed:
        logger.warning("%d of %d tuning trials failed.", n_failed, budget)
    logger.info("Duration for tuning: %s", datetime.now() - start_time)
    return best_of(trials)


#%% Tuning files
def write_tuning(folder, result, dataset, model_kind, method):
    """Write ``tuning.jsonl`` and ``best_config.json``"""
    os.makedirs(folder, exist_ok=True)
    with open(os.path.join(folder, "tuning.jsonl"), "w",
              encoding="utf-8") as fout:
        for trial in result.trials:
            record = asdict(trial)
            record.update(dataset=dataset, model=model_kind, method=method,
                          schema_version=constants.SCHEMA_VERSION)
            fout.write(json.dumps(record, sort_keys=True) + "\n")
    best = {"dataset": dataset, "model": model_kind, "method": method,
            "config": result.best_config, "trial": result.best_index,
            "objective": result.best_objective,
            "constants": constants.as_dict()}
    with open(os.path.join(folder, "best_config.json"), "w",
              encoding="utf-8") as fout:
        json.dump(best, fout, indent=2, sort_keys=True)


def read_tuning(path):
    """Trial records of a ``tuning.jsonl`` file"""
    if not os.path.isfile(path):
        raise FileNotFoundError("Missing file {}.".format(path))
    records = []
    with open(path, "r", encoding="utf-8") as fin:
        for line in fin:
            if line.strip():
                records.append(json.loads(line))
    return records


def best_from_log(path):
    """Replay a trial log to its winner without retraining"""
    trials = [TrialRecord(index=rec["index"], config=rec["config"],
                          objective=rec["objective"], status=rec["status"],
                          wall_time_seconds=rec["wall_time_seconds"])
              for rec in read_tuning(path)]
    return best_of(trials)


def read_best_config(path):
    """Read a ``best_config.json`` file"""
    if not os.path.isfile(path):
        raise FileNotFoundError("Missing file {}.".format(path))
    with open(path, "r", encoding="utf-8") as fin:
        return json.load(fin)


if __name__ == "__main__":
    import doctest
    doctest.testmod()
