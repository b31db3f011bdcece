# -*- coding: utf-8 -*-
"""
tabopt_CLI: command-line interface
----------------------------------

Runs the benchmark workflow from the shell:

    1. ``gen-data``: write a synthetic dataset folder.
    2. ``tune``: joint hyperparameter search for a model and a method.
    3. ``train``: retrain a configuration over several seeds.
    4. ``aggregate``: compare methods and write the report.
    5. ``report``: write the report again from ``aggregate.json``.
    6. ``selftest``: run the numerical oracle checks.

Values in the ``--config`` JSON file override command-line flags, which
override the built-in defaults. ``TABOPT_THREADS`` caps ``--workers``.

Exit codes: 0 on success, 1 for invalid input and 2 for other failures.

"""
import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from datetime import datetime

from tabopt import checkutil as chk
from tabopt import constants
from tabopt import modelutil as mdl
from tabopt import postprocesor as pos
from tabopt import preprocesor as pre
from tabopt import trainutil as trn
from tabopt import tuneutil as tun

logger = logging.getLogger(__name__)

COMMANDS = ("gen-data", "tune", "train", "aggregate", "report", "selftest")
LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"


@dataclass
class CliConfig:
    """Settings of one command"""
    command: str
    data: str = None
    model: str = "mlp"
    optimizer: str = "adamw"
    seeds: str = "0..{}".format(constants.N_SEEDS - 1)
    seed: int = 0
    budget: int = None
    large: bool = False
    workers: int = 1
    out: str = None
    force: bool = False
    verbose: bool = False
    best_config: str = None
    max_epochs: int = constants.MAX_EPOCHS
    dtype: str = "float64"
    kind: str = "two_gaussians"
    n: int = 2000
    noise: float = 0.0
    separation: float = 6.0
    runs: str = None
    baseline: str = "mlp:adamw"
    min_seeds: int = constants.N_SEEDS
    aggregate: str = None

    def validate(self):
        """Check the flags needed by the command"""
        required = {"gen-data": ("out",),
                    "tune": ("data", "out"),
                    "train": ("data", "out"),
                    "aggregate": ("runs",),
                    "report": ("aggregate", "out"),
                    "selftest": ()}
        if self.command not in required:
            raise ValueError("Unknown command {}.".format(self.command))
        missing = [name for name in required[self.command]
                   if getattr(self, name) is None]
        if missing:
            raise ValueError("Command {} needs --{}.".format(
                self.command, ", --".join(name.replace("_", "-")
                                          for name in missing)))
        if self.command in ("tune", "train"):
            if self.model not in mdl.MODEL_KINDS:
                raise ValueError("You entered an invalid model kind.")
            tun.parse_method(self.optimizer)
        if self.workers < 1:
            raise ValueError("The number of workers should be positive.")
        if self.budget is not None and self.budget < 1:
            raise ValueError("The tuning budget should be positive.")


def parse_seeds(text):
    """Seeds written as ``a..b`` (inclusive) or a comma-separated list

    Examples
    --------
    >>> parse_seeds("0..3")
    [0, 1, 2, 3]
    >>> parse_seeds("4,2")
    [4, 2]

    """
    try:
        if ".." in text:
            first, last = text.split("..")
            seeds = list(range(int(first), int(last) + 1))
        else:
            seeds = [int(seed) for seed in text.split(",") if seed.strip()]
    except ValueError:
        raise ValueError("Invalid seed list {}.".format(text))
    if not seeds or min(seeds) < 0:
        raise ValueError("Invalid seed list {}.".format(text))
    return seeds


def capped_workers(workers):
    """Worker count limited by ``TABOPT_THREADS``"""
    limit = os.environ.get("TABOPT_THREADS")
    if limit:
        workers = min(workers, max(int(limit), 1))
    return workers


#%% Argument parsing
def build_parser():
    parser = argparse.ArgumentParser(
        prog="tabopt",
        description="Optimizer benchmark for tabular deep learning.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file overriding the flags")
    common.add_argument("--out", help="Output folder")
    common.add_argument("--force", action="store_true",
                        help="Overwrite existing outputs")
    common.add_argument("--verbose", action="store_true")
    common.add_argument("--workers", type=int, default=1)

    gen = subparsers.add_parser("gen-data", parents=[common],
                                help="Write a synthetic dataset")
    gen.add_argument("--kind", default="two_gaussians",
                     choices=pre.SYNTHETIC_KINDS)
    gen.add_argument("--n", type=int, default=2000)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--noise", type=float, default=0.0)
    gen.add_argument("--separation", type=float, default=6.0)

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--data", help="Dataset folder")
    run.add_argument("--model", default="mlp", choices=mdl.MODEL_KINDS)
    run.add_argument("--optimizer", default="adamw",
                     help="Optimizer method, e.g. adamw or muon_ema")
    run.add_argument("--max-epochs", type=int, default=constants.MAX_EPOCHS)
    run.add_argument("--dtype", default="float64",
                     choices=tuple(trn.DTYPES))

    tune = subparsers.add_parser("tune", parents=[common, run],
                                 help="Tune a model and a method")
    tune.add_argument("--budget", type=int)
    tune.add_argument("--seed", type=int, default=0)
    tune.add_argument("--large", action="store_true",
                      help="Use the reduced budget of large datasets")

    train = subparsers.add_parser("train", parents=[common, run],
                                  help="Retrain over several seeds")
    train.add_argument("--seeds", default="0..{}".format(
        constants.N_SEEDS - 1))
    train.add_argument("--best-config", help="best_config.json from tune")

    agg = subparsers.add_parser("aggregate", parents=[common],
                                help="Compare methods against a baseline")
    agg.add_argument("--runs", help="Folder with run records")
    agg.add_argument("--baseline", default="mlp:adamw")
    agg.add_argument("--min-seeds", type=int, default=constants.N_SEEDS)

    report = subparsers.add_parser("report", parents=[common],
                                   help="Write the report files again")
    report.add_argument("--aggregate", help="aggregate.json file")

    subparsers.add_parser("selftest", parents=[common],
                          help="Run the numerical oracle checks")
    return parser


def make_config(args):
    """CLI settings from parsed flags and the optional config file"""
    values = {key: value for key, value in vars(args).items()
              if key != "config"}
    if args.config:
        if not os.path.isfile(args.config):
            raise FileNotFoundError("Missing file {}.".format(args.config))
        with open(args.config, "r", encoding="utf-8") as fin:
            overrides = json.load(fin)
        for key, value in overrides.items():
            key = key.replace("-", "_")
            if key not in values or key == "command":
                raise ValueError("Unknown setting {} in {}."
                                 .format(key, args.config))
            values[key] = value
    known = {fld.name for fld in fields(CliConfig)}
    cfg = CliConfig(**{key: value for key, value in values.items()
                       if key in known})
    cfg.workers = capped_workers(cfg.workers)
    cfg.validate()
    return cfg


def setup_logging(out_dir=None, verbose=False):
    """Console logging plus ``<out_dir>/tabopt.log``"""
    root = logging.getLogger("tabopt")
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    formatter = logging.Formatter(LOG_FORMAT)
    console = logging.StreamHandler()
    console.setFormatter(formatter)
    root.addHandler(console)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        file_handler = logging.FileHandler(os.path.join(out_dir,
                                                        "tabopt.log"))
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)
    return root


#%% Commands
def _refuse_existing(paths, force):
    existing = [path for path in paths if os.path.exists(path)]
    if existing and not force:
        raise FileExistsError("Output already exists: {}. Use --force to "
                              "overwrite.".format(existing))
    for path in existing:
        os.remove(path)


def gen_data(cfg):
    _refuse_existing([os.path.join(cfg.out, name)
                      for name in ("meta.json", "train.csv", "val.csv",
                                   "test.csv")], cfg.force)
    meta, data = pre.make_synthetic(cfg.kind, cfg.n, cfg.seed,
                                    noise=cfg.noise,
                                    separation=cfg.separation)
    pre.echomod(meta, data, cfg.out)
    logger.info("Dataset %s written to %s", meta.name, cfg.out)


def _load_task(cfg):
    start_time = datetime.now()
    meta, data = pre.readin(cfg.data)
    task = trn.prepare_data(meta, data, cfg.model)
    info = pre.describe_dataset(meta, data)
    logger.info("Number of training rows: %d", info["n_train"])
    logger.info("Number of encoded features: %d", task.train.x.shape[1])
    logger.info("Duration for preprocessing: %s",
                datetime.now() - start_time)
    return task, info


def _train_config(cfg, seed=0):
    return trn.TrainConfig(max_epochs=cfg.max_epochs, dtype=cfg.dtype,
                           seed=seed)


def tune(cfg):
    _refuse_existing([os.path.join(cfg.out, name)
                      for name in ("tuning.jsonl", "best_config.json")],
                     cfg.force)
    task, _ = _load_task(cfg)
    space = tun.space_for(cfg.model, cfg.optimizer, large=cfg.large)
    objective = tun.TrialObjective(task, cfg.model, cfg.optimizer,
                                   _train_config(cfg, cfg.seed))
    result = tun.tune(space, objective, budget=cfg.budget, seed=cfg.seed,
                      workers=cfg.workers)
    tun.write_tuning(cfg.out, result, task.name, cfg.model, cfg.optimizer)
    logger.info("Best trial %d with objective %.6f", result.best_index,
                result.best_objective)


def train(cfg):
    _refuse_existing([os.path.join(cfg.out, name)
                      for name in ("runs.jsonl", "timings.jsonl")],
                     cfg.force)
    seeds = parse_seeds(cfg.seeds)
    task, info = _load_task(cfg)
    if cfg.best_config:
        best = tun.read_best_config(cfg.best_config)
        if (best["model"], best["method"]) != (cfg.model, cfg.optimizer):
            raise ValueError("The best configuration was tuned for {}:{}."
                             .format(best["model"], best["method"]))
        config = best["config"]
    else:
        config = tun.default_config(cfg.model, cfg.optimizer)
    hparams, spec = tun.split_config(config, cfg.optimizer)
    model_cfg = mdl.make_model_config(cfg.model, hparams, task.train.x,
                                      task.out_dim, n_num=task.n_num)
    results = trn.run_protocol(task, model_cfg, spec, seeds,
                               _train_config(cfg), workers=cfg.workers)
    trn.write_runs(cfg.out, results, config=config)
    with open(os.path.join(cfg.out, "dataset.json"), "w",
              encoding="utf-8") as fout:
        json.dump(info, fout, indent=2, sort_keys=True)


def aggregate(cfg):
    out = cfg.out or cfg.runs
    results, tuning, datasets = pos.load_results(cfg.runs)
    report = pos.aggregate(results, baseline=cfg.baseline, tuning=tuning,
                           datasets=datasets, min_seeds=cfg.min_seeds)
    pos.emit_report(report, out, force=cfg.force)
    pos.write_aggregate(report, os.path.join(out, "aggregate.json"))


def report(cfg):
    pos.emit_report(pos.read_aggregate(cfg.aggregate), cfg.out,
                    force=cfg.force)


def selftest(cfg):
    results = chk.run_selftest()
    for result in results:
        print("{:<40} {}".format(result.name,
                                 "pass" if result.passed else "FAIL"))
    if not all(result.passed for result in results):
        raise RuntimeError("Some self-test checks failed.")


def command_fun(command):
    """Return the function running ``command``"""
    command_id = {"gen-data": gen_data,
                  "tune": tune,
                  "train": train,
                  "aggregate": aggregate,
                  "report": report,
                  "selftest": selftest}
    return command_id[command]


def main(argv=None):
    """Run one command and return its exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return 0 if err.code in (0, None) else 1
    try:
        cfg = make_config(args)
    except (ValueError, FileNotFoundError) as err:
        logging.getLogger("tabopt").error("%s", err)
        return 1
    setup_logging(cfg.out, cfg.verbose)
    start_time = datetime.now()
    try:
        command_fun(cfg.command)(cfg)
    except (ValueError, FileNotFoundError, FileExistsError) as err:
        logger.error("%s", err)
        return 1
    except Exception as err:
        logger.exception("Command %s failed: %s", cfg.command, err)
        return 2
    logger.info("Duration for %s: %s", cfg.command,
                datetime.now() - start_time)
    logger.info("Command %s terminated successfully!", cfg.command)
    return 0


if __name__ == "__main__":
    sys.exit(main())
