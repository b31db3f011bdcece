# -*- coding: utf-8 -*-
"""
Pinned constants
----------------

Every tolerance, default and protocol constant used across the package.
The whole table is echoed into run and trial records through
:func:`as_dict`.

"""

SCHEMA_VERSION = 1

#%% Data preprocessing
QUANTILE_JITTER = 1e-3
MAX_QUANTILES = 1000
PREPROCESSING_SEED = 0
SPLIT_FRACTIONS = (0.64, 0.16, 0.20)
SYNTHETIC_BATCH_SIZE = 128
MIN_SYNTHETIC_ROWS = 50

#%% Training protocol
PATIENCE = 16
CLIP_THRESHOLD = 1.0
MAX_EPOCHS = 1000
N_SEEDS = 10

#%% Optimizers
BETAS = (0.9, 0.999)
EPS = 1e-8
LION_BETAS = (0.9, 0.99)
SIGNUM_MOMENTUM = 0.9
SGD_MOMENTUM = 0.9
SGD_DAMPENING = 0.9
ADOPT_BETAS = (0.9, 0.9999)
ADOPT_EPS = 1e-6
ADAN_BETAS = (0.98, 0.92, 0.99)
ADEMAMIX_BETA3 = 0.9999
ADEMAMIX_ALPHA = 5.0
MUON_MOMENTUM = 0.95
NS_COEFFS = (3.4445, -4.7750, 2.0315)
NS_STEPS = 5
NS_EPS = 1e-7
SOAP_REFRESH = 10

#%% Weight averaging
EMA_DECAY_RANGE = (0.9, 0.999)

#%% Tuning
TPE_N_STARTUP = 10
TPE_GAMMA = 0.25
TPE_N_CANDIDATES = 24
# Smallest kernel bandwidth as a fraction of the dimension span
TPE_MIN_BANDWIDTH = 1e-3
ZERO_OR_PROB = 0.5
TUNING_BUDGET = 100
TUNING_BUDGET_LARGE = 50

#%% Statistics
WELCH_ALPHA = 0.05
PERCENTILES = (10, 25, 50, 75, 90)
PERCENTILE_METHOD = "linear"


def as_dict():
    """Return all pinned constants as a JSON-ready dictionary

    Examples
    --------
    >>> consts = as_dict()
    >>> consts["PATIENCE"], consts["NS_COEFFS"]
    (16, [3.4445, -4.775, 2.0315])

    """
    consts = {}
    for name, value in sorted(globals().items()):
        if name.isupper():
            consts[name] = list(value) if isinstance(value, tuple) else value
    return consts
