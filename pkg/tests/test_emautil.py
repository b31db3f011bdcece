# -*- coding: utf-8 -*-
"""
Test cases for functions on ``emautil`` module

"""
import numpy as np
import pytest

import tabopt.emautil as ema
import tabopt.nnutil as nn


def random_params(seed=0):
    rng = np.random.default_rng(seed)
    params = nn.ParamSet()
    params.add("w", rng.normal(size=(3, 2)), group="muon")
    params.add("b", rng.normal(size=2))
    return params


def test_init_ema():
    params = random_params()
    tracker = ema.init_ema(params, 0.99)
    assert tracker.update_count == 0
    for name in params:
        assert np.array_equal(tracker.shadow[name], params[name])
    params["b"] = np.zeros(2)
    assert not np.array_equal(tracker.shadow["b"], params["b"])
    assert tracker.shadow.group("w") == "muon"


@pytest.mark.parametrize("decay", [-0.1, 1.0, 1.5])
def test_invalid_decay(decay):
    with pytest.raises(ValueError):
        ema.init_ema(random_params(), decay)


def test_replay():
    """Shadow after many updates against an explicit recurrence"""
    params = random_params()
    decay = 0.95
    tracker = ema.init_ema(params, decay)
    expected = {name: params[name].copy() for name in params}
    rng = np.random.default_rng(1)
    for _ in range(1000):
        for name in params:
            params[name] = params[name] + 0.01*rng.normal(
                size=params[name].shape)
            expected[name] = decay*expected[name] + (1 - decay)*params[name]
        ema.ema_update(tracker, params)
    assert tracker.update_count == 1000
    for name in params:
        assert np.allclose(ema.eval_params(tracker)[name], expected[name],
                           rtol=0, atol=1e-12)


def test_zero_decay_follows():
    params = random_params()
    tracker = ema.init_ema(params, 0.0)
    params["w"] = np.ones((3, 2))
    ema.ema_update(tracker, params)
    assert np.array_equal(tracker.shadow["w"], np.ones((3, 2)))


def test_constant_params_fixed_point():
    params = random_params()
    tracker = ema.init_ema(params, 0.9)
    for _ in range(50):
        ema.ema_update(tracker, params)
    for name in params:
        assert np.allclose(tracker.shadow[name], params[name])


def test_key_mismatch():
    tracker = ema.init_ema(random_params(), 0.9)
    other = nn.ParamSet()
    other.add("w", np.zeros((3, 2)))
    with pytest.raises(ValueError):
        ema.ema_update(tracker, other)


def test_tracker_dict():
    params = random_params()
    tracker = ema.init_ema(params, 0.9)
    params["b"] = params["b"] + 1
    ema.ema_update(tracker, params)
    loaded = ema.tracker_from_dict(ema.tracker_to_dict(tracker))
    assert loaded.decay == 0.9
    assert loaded.update_count == 1
    for name in params:
        assert np.array_equal(loaded.shadow[name], tracker.shadow[name])
