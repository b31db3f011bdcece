# -*- coding: utf-8 -*-
"""
Test cases for functions on ``modelutil`` module

"""
import numpy as np
import pytest

import tabopt.modelutil as mdl
import tabopt.nnutil as nn
import tabopt.optimutil as opt


def member_params(params, member):
    """Parameters of one packed member under plain MLP names"""
    prefix = "member{}.".format(member)
    single = nn.ParamSet()
    for name in params:
        if name.startswith(prefix):
            single.add(name[len(prefix):], params[name].copy(),
                       role=params.role(name), group=params.group(name))
    return single


#%% Plain MLP
def test_build_mlp():
    cfg = mdl.MLPConfig(n_layers=1, width=64, in_dim=8, out_dim=1)
    params = mdl.build_mlp(cfg, seed=0)
    assert params.n_params() == 8*64 + 64 + 64*1 + 1
    again = mdl.build_mlp(cfg, seed=0)
    for name in params:
        assert np.array_equal(params[name], again[name])
    other = mdl.build_mlp(cfg, seed=1)
    assert not np.array_equal(params["head.weight"], other["head.weight"])


def test_parameter_groups():
    """Only hidden weights after the input block go to Muon"""
    cfg = mdl.MLPConfig(n_layers=3, width=16, in_dim=5, out_dim=2)
    params = mdl.build_mlp(cfg, seed=0)
    assert params.names_in_group("muon") == ["block1.linear.weight",
                                             "block2.linear.weight"]
    assert params.group("block0.linear.weight") == "adam"
    assert params.group("head.weight") == "adam"
    for name in params:
        if name.endswith("bias"):
            assert params.role(name) == "vector"
            assert params.group(name) == "adam"


def test_init_bounds():
    cfg = mdl.MLPConfig(n_layers=2, width=32, in_dim=10, out_dim=3)
    params = mdl.build_mlp(cfg, seed=4)
    assert np.abs(params["block0.linear.weight"]).max() <= 1/np.sqrt(10)
    assert np.abs(params["block1.linear.weight"]).max() <= 1/np.sqrt(32)
    assert np.abs(params["head.bias"]).max() <= 1/np.sqrt(32)


def test_output_variance_depth():
    """With the uniform 1/sqrt(fan_in) init the signal shrinks with depth
    but stays finite and nonzero"""
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2000, 8))
    power = {}
    for n_layers in (1, 6):
        cfg = mdl.MLPConfig(n_layers=n_layers, width=64, in_dim=8,
                            out_dim=1)
        values = []
        for seed in range(5):
            params = mdl.build_mlp(cfg, seed=seed)
            out = mdl.mlp_forward(params, cfg, x)
            values.append(np.var(out))
        power[n_layers] = np.mean(values)
    assert np.isfinite(power[6]) and power[6] > 0
    assert power[6] < power[1]


def test_float32_build():
    cfg = mdl.MLPConfig(n_layers=2, width=16, in_dim=3, out_dim=2)
    params = mdl.build_model(cfg, seed=0, dtype=np.float32)
    assert params.dtype == np.float32


@pytest.mark.parametrize("kwargs", [
    {"n_layers": 0, "width": 16},
    {"n_layers": 7, "width": 16},
    {"n_layers": 2, "width": 0},
    {"n_layers": 2, "width": 16, "dropout": 0.6}])
def test_invalid_mlp_config(kwargs):
    with pytest.raises(ValueError):
        mdl.MLPConfig(**kwargs)


#%% Piecewise-linear embeddings
def test_ple_encode_examples():
    edges = [np.array([0.0, 1.0, 2.0])]
    encode = lambda value: mdl.ple_encode(np.array([[value]]), edges)[0, 0]
    assert np.allclose(encode(0.0), [0, 0])
    assert np.allclose(encode(2.0), [1, 1])
    assert np.allclose(encode(0.5), [0.5, 0])
    assert np.allclose(encode(1.5), [1, 0.5])
    # No extrapolation outside the edges
    assert np.allclose(encode(-3.0), [0, 0])
    assert np.allclose(encode(9.0), [1, 1])


def test_ple_monotone():
    rng = np.random.default_rng(2)
    edges = [np.sort(rng.normal(size=9)), np.sort(rng.normal(size=4))]
    grid = np.sort(rng.uniform(-4, 4, size=400))
    encoding = mdl.ple_encode(np.column_stack([grid, grid]), edges)
    assert encoding.shape == (400, 2, 8)
    assert np.all(np.diff(encoding, axis=0) >= 0)
    # Narrower features are padded with zeros
    assert np.all(encoding[:, 1, 3:] == 0)


def test_ple_passthrough():
    """Features with fewer than two bins keep their raw value"""
    x_num = np.array([[0.25, 5.0], [0.75, 5.0]])
    edges = [np.array([0.0, 1.0]), np.array([5.0])]
    encoding = mdl.ple_encode(x_num, edges)
    assert np.allclose(encoding[:, 0, 0], [0.25, 0.75])
    assert np.allclose(encoding[:, 1, 0], [5.0, 5.0])


def test_fit_ple_edges():
    column = np.array([0, 0, 0, 0, 1, 1, 2, 3, 4, 5], dtype=float)
    edges = mdl.fit_ple_edges(column[:, None], 8)[0]
    assert np.all(np.diff(edges) > 0)
    assert edges[0] == 0 and edges[-1] == 5
    with pytest.raises(ValueError):
        mdl.PLEConfig(n_bins=1, d_embedding=8)
    with pytest.raises(ValueError):
        mdl.PLEConfig(n_bins=4, d_embedding=8, edges=[[0.0, 0.0, 1.0]])


def test_ple_identity_matches_mlp():
    inner = mdl.MLPConfig(n_layers=2, width=16, in_dim=5, out_dim=3)
    cfg = mdl.MLPPLEConfig(inner=inner,
                           ple=mdl.PLEConfig(n_bins=4, d_embedding=8,
                                             identity=True),
                           n_num=3)
    x = np.random.default_rng(0).normal(size=(7, 5))
    mlp_params = mdl.build_model(inner, seed=2)
    ple_params = mdl.build_model(cfg, seed=2)
    assert ple_params.keys() == mlp_params.keys()
    assert np.array_equal(mdl.predict(cfg, ple_params, x, "multiclass"),
                          mdl.predict(inner, mlp_params, x, "multiclass"))


def test_mlp_ple_parameters():
    rng = np.random.default_rng(1)
    x_train = np.column_stack([rng.normal(size=(50, 3)),
                               rng.integers(0, 2, size=(50, 2))])
    cfg = mdl.make_model_config("mlp_ple",
                                {"n_layers": 2, "width": 16, "n_bins": 6,
                                 "d_embedding": 4},
                                x_train, out_dim=1, n_num=3)
    assert cfg.inner.in_dim == 3*4 + 2
    params = mdl.build_model(cfg, seed=0)
    assert params["ple.weight"].shape == (3, 6, 4)
    assert params.role("ple.weight") == "embedding"
    assert params.group("ple.weight") == "adam"
    assert params.role("ple.bias") == "vector"
    pred = mdl.predict(cfg, params, x_train, "regression")
    assert pred.shape == (50,)


#%% Packed ensemble
def test_packed_single_member_matches_mlp():
    x = np.random.default_rng(3).normal(size=(6, 4))
    for task, out_dim in (("multiclass", 2), ("regression", 1)):
        inner = mdl.MLPConfig(n_layers=2, width=16, in_dim=4,
                              out_dim=out_dim)
        cfg = mdl.TabMPackedConfig(inner=inner, k=1)
        mlp_params = mdl.build_model(inner, seed=0)
        packed = mdl.build_model(cfg, seed=0)
        for name in mlp_params:
            packed["member0." + name] = mlp_params[name]
        assert np.allclose(mdl.predict(cfg, packed, x, task),
                           mdl.predict(inner, mlp_params, x, task))


def test_packed_mean_prediction():
    inner = mdl.MLPConfig(n_layers=1, width=8, in_dim=3, out_dim=1)
    cfg = mdl.TabMPackedConfig(inner=inner, k=2)
    params = mdl.build_model(cfg, seed=0)
    for member, value in enumerate((1.0, 3.0)):
        prefix = "member{}.".format(member)
        params[prefix + "head.weight"] = np.zeros((8, 1))
        params[prefix + "head.bias"] = np.array([value])
    pred = mdl.predict(cfg, params, np.ones((4, 3)), "regression")
    assert np.allclose(pred, 2.0)


def test_packed_probability_average():
    inner = mdl.MLPConfig(n_layers=1, width=8, in_dim=3, out_dim=2)
    cfg = mdl.TabMPackedConfig(inner=inner, k=2)
    params = mdl.build_model(cfg, seed=0)
    logits = [np.array([0.0, 4.0]), np.array([0.0, -1.0])]
    for member, bias in enumerate(logits):
        prefix = "member{}.".format(member)
        params[prefix + "head.weight"] = np.zeros((8, 2))
        params[prefix + "head.bias"] = bias
    pred = mdl.predict(cfg, params, np.ones((1, 3)), "binclass")
    expected = np.mean([np.exp(bias)/np.exp(bias).sum() for bias in logits],
                       axis=0)
    assert np.allclose(pred[0], expected)
    assert np.isclose(pred.sum(), 1.0)


def test_packed_gradient_scaling():
    """Each member gets 1/k of its standalone gradient"""
    inner = mdl.MLPConfig(n_layers=2, width=8, in_dim=4, out_dim=1)
    cfg = mdl.TabMPackedConfig(inner=inner, k=3)
    params = mdl.build_model(cfg, seed=1)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10, 4))
    y = rng.normal(size=10)
    _, grads = mdl.loss_and_grads(cfg, params, x, y, "regression",
                                  training=False)
    for member in range(3):
        single = member_params(params, member)
        _, alone = mdl.loss_and_grads(inner, single, x, y, "regression",
                                      training=False)
        for name, grad in alone.items():
            packed = grads["member{}.{}".format(member, name)]
            assert np.allclose(packed, grad/3, rtol=1e-12, atol=1e-15)


def test_packed_members_independent():
    """A member with zero gradient does not change the other members"""
    inner = mdl.MLPConfig(n_layers=2, width=8, in_dim=4, out_dim=2)
    cfg = mdl.TabMPackedConfig(inner=inner, k=3)
    params = mdl.build_model(cfg, seed=1)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10, 4))
    y = rng.integers(0, 2, size=10)
    _, grads = mdl.loss_and_grads(cfg, params, x, y, "binclass",
                                  training=False)
    zeroed = {name: np.zeros_like(grad) if name.startswith("member0.")
              else grad for name, grad in grads.items()}
    spec = opt.OptimizerSpec(rule="adamw", lr=1e-2)
    full, partial = params.copy(), params.copy()
    opt.step(spec, opt.init_state(spec, full), full, grads)
    opt.step(spec, opt.init_state(spec, partial), partial, zeroed)
    for name in params:
        if name.startswith("member0."):
            assert np.array_equal(partial[name], params[name])
        else:
            assert np.array_equal(partial[name], full[name])


#%% Common interface
def test_config_round_trip():
    x_train = np.random.default_rng(0).normal(size=(30, 4))
    for kind in mdl.MODEL_KINDS:
        cfg = mdl.make_model_config(kind, {"n_layers": 2, "width": 16,
                                           "dropout": 0.1, "k": 4,
                                           "n_bins": 5, "d_embedding": 8},
                                    x_train, out_dim=2, n_num=2)
        back = mdl.config_from_dict(mdl.config_to_dict(cfg))
        assert mdl.config_to_dict(back) == mdl.config_to_dict(cfg)
    with pytest.raises(ValueError):
        mdl.make_model_config("resnet", {}, x_train, out_dim=2)


def test_predict_probabilities():
    cfg = mdl.MLPConfig(n_layers=2, width=16, in_dim=4, out_dim=3)
    params = mdl.build_model(cfg, seed=0)
    x = np.random.default_rng(0).normal(size=(5, 4))
    probs = mdl.predict(cfg, params, x, "multiclass")
    assert probs.shape == (5, 3)
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_dropout_changes_training_loss():
    cfg = mdl.MLPConfig(n_layers=2, width=32, dropout=0.5, in_dim=4,
                        out_dim=1)
    params = mdl.build_model(cfg, seed=0)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(20, 4)), rng.normal(size=20)
    eval_loss, _ = mdl.loss_and_grads(cfg, params, x, y, "regression",
                                      training=False)
    again, _ = mdl.loss_and_grads(cfg, params, x, y, "regression",
                                  training=False)
    train_loss, _ = mdl.loss_and_grads(cfg, params, x, y, "regression",
                                       rng=nn.make_rng(0, "dropout"))
    assert eval_loss == again
    assert train_loss != eval_loss
