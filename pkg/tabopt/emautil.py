# -*- coding: utf-8 -*-
"""
Weight averaging utilities
--------------------------
Exponential moving average of model weights.

"""
from dataclasses import dataclass

from tabopt import nnutil as nn


@dataclass
class EmaTracker:
    """Shadow copy of the parameters and its update counter"""
    decay: float
    shadow: nn.ParamSet
    update_count: int = 0


#%% Tracking
def init_ema(params, decay):
    """Start a tracker whose shadow equals ``params``

    Parameters
    ----------
    params : ParamSet
        Initial parameters.
    decay : float
        Decay in [0, 1). The tuning range is [0.9, 0.999]; smaller
        values are accepted for testing.

    Returns
    -------
    tracker : EmaTracker
        New tracker, no bias correction.

    """
    if not 0 <= decay < 1:
        raise ValueError("The EMA decay should be in [0, 1).")
    return EmaTracker(decay=float(decay), shadow=params.copy())


def ema_update(tracker, params):
    """Move the shadow towards ``params``

    ``shadow <- decay*shadow + (1 - decay)*params``, elementwise.

    Examples
    --------
    >>> import numpy as np
    >>> params = nn.ParamSet()
    >>> params.add("b", np.zeros(1))
    >>> tracker = init_ema(params, 0.5)
    >>> params["b"] = np.ones(1)
    >>> ema_update(tracker, params).shadow["b"]
    array([0.5])

    """
    if set(params.keys()) != set(tracker.shadow.keys()):
        raise ValueError("Tracked parameters do not match the shadow.")
    decay = tracker.decay
    for name in tracker.shadow:
        tracker.shadow[name] = (decay*tracker.shadow[name] +
                                (1 - decay)*params[name])
    tracker.update_count += 1
    return tracker


def eval_params(tracker):
    """Shadow weights used for validation and testing"""
    return tracker.shadow


#%% Checkpoints
def tracker_to_dict(tracker):
    return {"decay": tracker.decay,
            "update_count": tracker.update_count,
            "shadow": nn.params_to_dict(tracker.shadow)}


def tracker_from_dict(data):
    return EmaTracker(decay=float(data["decay"]),
                      shadow=nn.params_from_dict(data["shadow"]),
                      update_count=int(data["update_count"]))


if __name__ == "__main__":
    import doctest
    doctest.testmod()
