# -*- coding: utf-8 -*-
"""
Test cases for functions on ``checkutil`` module

"""
import numpy as np

import tabopt.checkutil as chk
import tabopt.modelutil as mdl


def test_relative_error():
    grads = {"w": np.array([1.0, 2.0]), "b": np.zeros(2)}
    assert chk.relative_error(grads, grads) == 0.0
    numeric = {"w": np.array([1.0, 2.0]), "b": np.array([0.0, 1e-3])}
    assert np.isclose(chk.relative_error(grads, numeric), 1.0)
    numeric = {"w": -grads["w"], "b": np.zeros(2)}
    assert np.isclose(chk.relative_error(grads, numeric), 1.0)


def test_numerical_grads_regression():
    """Finite differences of a one-block regression MLP"""
    cfg = mdl.MLPConfig(n_layers=1, width=3, in_dim=2, out_dim=1)
    params = mdl.build_model(cfg, seed=0)
    x = np.array([[0.5, -1.0], [1.5, 2.0], [-0.3, 0.1]])
    y = np.array([0.2, -0.4, 1.0])
    _, grads = mdl.loss_and_grads(cfg, params, x, y, "regression",
                                  training=False)
    numeric = chk.numerical_grads(cfg, params, x, y, "regression")
    assert chk.relative_error(grads, numeric) < 1e-6
    assert params.keys() == list(numeric)


def test_gradient_check_configs():
    configs, x = chk.gradient_check_configs()
    assert set(configs) == set(mdl.MODEL_KINDS)
    assert x.shape == (6, 5)
    assert configs["mlp_ple"].inner.in_dim == 3*4 + 2


def test_conditioned_matrix():
    mat, polar = chk.conditioned_matrix(10, 4, 30.0, seed=2)
    sing = np.linalg.svd(mat, compute_uv=False)
    assert np.isclose(sing.max()/sing.min(), 30.0)
    assert np.allclose(polar.T @ polar, np.eye(4))


def test_quadrature_p_value():
    assert np.isclose(chk.quadrature_p_value(0.0, 5.0), 1.0)
    assert chk.quadrature_p_value(10.0, 5.0) < 1e-3


def test_selftest_passes():
    results = chk.run_selftest()
    names = [result.name for result in results]
    assert "gradient tabm_packed regression" in names
    assert "welch p-value" in names
    failed = [result.name for result in results if not result.passed]
    assert failed == []
