# -*- coding: utf-8 -*-
"""
Self-test oracles
-----------------

Numerical checks run by ``tabopt selftest``: finite-difference
gradient checks of every architecture, Newton-Schulz orthogonality,
Welch p-values against numerical integration of the t density and
hand-computed optimizer steps.

"""
import logging
from dataclasses import dataclass
import numpy as np
from scipy.integrate import quad
from scipy.stats import t as t_dist

from tabopt import emautil as ema
from tabopt import modelutil as mdl
from tabopt import nnutil as nn
from tabopt import optimutil as opt
from tabopt import statutil as st

logger = logging.getLogger(__name__)

WELCH_A = [2.1, 2.0, 1.9, 2.2, 2.0, 2.1, 1.8, 2.0, 2.1, 1.9]
WELCH_B = [1.8, 1.9, 1.7, 1.8, 2.0, 1.9, 1.8, 1.7, 1.9, 1.8]


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float


#%% Gradients
def numerical_grads(cfg, params, x, y, task, step=1e-5):
    """Central finite differences of the evaluation-mode loss"""
    grads = {}
    for name in params:
        value = params[name]
        grad = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            shifted = value.copy()
            shifted[idx] = value[idx] + step
            params[name] = shifted
            plus, _ = mdl.loss_and_grads(cfg, params, x, y, task,
                                         training=False)
            shifted[idx] = value[idx] - step
            params[name] = shifted
            minus, _ = mdl.loss_and_grads(cfg, params, x, y, task,
                                          training=False)
            grad[idx] = (plus - minus)/(2*step)
        params[name] = value
        grads[name] = grad
    return grads


def relative_error(analytic, numeric):
    """Largest per-tensor relative error between two gradient sets"""
    worst = 0.0
    for name, grad in analytic.items():
        diff = np.linalg.norm(grad - numeric[name])
        scale = np.linalg.norm(grad) + np.linalg.norm(numeric[name])
        if scale > 0:
            worst = max(worst, diff/scale)
    return worst


def gradient_check_configs(n_num=3, n_other=2, width=8, n_layers=2, k=3,
                           seed=0):
    """Small configurations of every architecture and matching inputs"""
    rng = nn.make_rng(seed, "gradient-check")
    x = rng.standard_normal((6, n_num + n_other))
    in_dim = n_num + n_other
    inner = mdl.MLPConfig(n_layers=n_layers, width=width, in_dim=in_dim,
                          out_dim=2)
    ple = mdl.PLEConfig(n_bins=4, d_embedding=4,
                        edges=mdl.fit_ple_edges(x[:, :n_num], 4))
    ple_inner = mdl.MLPConfig(n_layers=n_layers, width=width,
                              in_dim=n_num*4 + n_other, out_dim=2)
    configs = {"mlp": inner,
               "mlp_ple": mdl.MLPPLEConfig(inner=ple_inner, ple=ple,
                                           n_num=n_num),
               "tabm_packed": mdl.TabMPackedConfig(inner=inner, k=k)}
    return configs, x


def check_gradients(tolerance=1e-4):
    """Gradient check of every architecture on both task families"""
    configs, x = gradient_check_configs()
    labels = np.array([0, 1, 1, 0, 1, 0])
    results = []
    for kind, cfg in configs.items():
        for task in ("multiclass", "regression"):
            if task == "regression":
                cfg = _single_output(cfg)
                y = np.linspace(-1, 1, x.shape[0])
            else:
                y = labels
            params = mdl.build_model(cfg, seed=0)
            _, grads = mdl.loss_and_grads(cfg, params, x, y, task,
                                          training=False)
            error = relative_error(grads, numerical_grads(cfg, params, x, y,
                                                          task))
            results.append(CheckResult("gradient {} {}".format(kind, task),
                                       error < tolerance, error, tolerance))
    return results


def _single_output(cfg):
    if isinstance(cfg, mdl.MLPConfig):
        return mdl.MLPConfig(cfg.n_layers, cfg.width, cfg.dropout,
                             cfg.in_dim, 1)
    inner = _single_output(cfg.inner)
    if isinstance(cfg, mdl.TabMPackedConfig):
        return mdl.TabMPackedConfig(inner=inner, k=cfg.k)
    return mdl.MLPPLEConfig(inner=inner, ple=cfg.ple, n_num=cfg.n_num)


#%% Newton-Schulz
def conditioned_matrix(rows, cols, cond, seed=0):
    """Random matrix with singular values spread over ``[1, cond]``"""
    rng = nn.make_rng(seed, "conditioned", rows, cols)
    left, _ = np.linalg.qr(rng.standard_normal((rows, min(rows, cols))))
    right, _ = np.linalg.qr(rng.standard_normal((cols, min(rows, cols))))
    sing = np.geomspace(1, cond, min(rows, cols))
    return left @ np.diag(sing) @ right.T, left @ right.T


def check_newton_schulz():
    """Bounded singular values, alignment with the polar factor, scale
    invariance and convergence of the cubic iteration"""
    mat, polar = conditioned_matrix(16, 8, 50.0)
    orth = opt.newton_schulz_orthogonalize(mat)
    sing = np.linalg.svd(orth, compute_uv=False)
    cosine = np.sum(orth*polar)/(np.linalg.norm(orth)*np.linalg.norm(polar))
    scaled = opt.newton_schulz_orthogonalize(3.0*mat)
    cubic = opt.newton_schulz_orthogonalize(mat, iters=60,
                                            coeffs=(1.5, -0.5, 0.0))
    return [
        CheckResult("newton-schulz singular values",
                    bool(0.65 <= sing.min() and sing.max() <= 1.21),
                    float(np.abs(sing - 1).max()), 0.35),
        CheckResult("newton-schulz polar alignment", cosine > 0.95,
                    float(cosine), 0.95),
        CheckResult("newton-schulz scale invariance",
                    np.abs(scaled - orth).max() < 1e-6,
                    float(np.abs(scaled - orth).max()), 1e-6),
        CheckResult("newton-schulz cubic convergence",
                    np.abs(cubic - polar).max() < 1e-8,
                    float(np.abs(cubic - polar).max()), 1e-8)]


#%% Welch test
def quadrature_p_value(t_stat, dof):
    """Two-sided p-value by integrating the t density"""
    tail, _ = quad(t_dist.pdf, abs(t_stat), np.inf, args=(dof,),
                   epsabs=1e-13, epsrel=1e-12)
    return 2*tail


def check_welch(tolerance=1e-6):
    t_stat, dof, p_value = st.welch_test(WELCH_A, WELCH_B)
    error = abs(p_value - quadrature_p_value(t_stat, dof))
    return [CheckResult("welch p-value", error < tolerance, error,
                        tolerance)]


#%% Optimizer steps
def _scalar_step(rule, value, grad, **kwargs):
    params = nn.ParamSet()
    params.add("w", np.array([value]))
    spec = opt.OptimizerSpec(rule=rule, **kwargs)
    opt.step(spec, opt.init_state(spec, params), params,
             {"w": np.array([grad])})
    return float(params["w"][0])


def check_optimizer_steps(tolerance=1e-10):
    """Single steps against hand-computed values"""
    expected = {
        "adamw": (_scalar_step("adamw", 1.0, 1.0, lr=0.1),
                  1 - 0.1/(1 + 1e-8)),
        "signum": (_scalar_step("signum", 0.0, -3.0, lr=0.01), 0.01),
        "lion": (_scalar_step("lion", 1.0, 2.0, lr=0.01), 0.99),
        "sgd": (_scalar_step("sgd", 1.0, 0.5, lr=0.1), 0.95)}
    params = nn.ParamSet()
    params.add("w", np.zeros(1))
    tracker = ema.init_ema(params, 0.9)
    params["w"] = np.ones(1)
    expected["ema"] = (float(ema.ema_update(tracker, params).shadow["w"][0]),
                       0.1)
    return [CheckResult("step " + name, abs(got - want) < tolerance,
                        abs(got - want), tolerance)
            for name, (got, want) in expected.items()]


def run_selftest():
    """Run every oracle check

    Returns
    -------
    results : list of CheckResult
        One entry per check.

    """
    results = (check_gradients() + check_newton_schulz() + check_welch() +
               check_optimizer_steps())
    for result in results:
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, "%s: %s (%.3g, tolerance %.3g)", result.name,
                   "pass" if result.passed else "FAIL", result.value,
                   result.tolerance)
    return results


if __name__ == "__main__":
    import doctest
    doctest.testmod()
