# -*- coding: utf-8 -*-
"""
Optimizer routines
------------------

Update rules for the benchmark behind one stepping interface,
:func:`step`. Every rule keeps its buffers in an
:class:`OptimizerState`, keyed by parameter name.

Unless stated otherwise weight decay is decoupled,
``p <- p - lr*wd*p``, and applied before the rule's own update. SGD
folds the decay into the gradient as a classic L2 term.

"""
import logging
from dataclasses import dataclass, field, fields
import numpy as np

from tabopt import nnutil as nn
from tabopt.constants import (ADEMAMIX_ALPHA, ADEMAMIX_BETA3, ADAN_BETAS,
                              ADOPT_BETAS, ADOPT_EPS, BETAS, EPS, LION_BETAS,
                              MUON_MOMENTUM, NS_COEFFS, NS_EPS, NS_STEPS,
                              SCHEMA_VERSION, SGD_DAMPENING, SGD_MOMENTUM,
                              SIGNUM_MOMENTUM, SOAP_REFRESH)

logger = logging.getLogger(__name__)

RULES = ("adamw", "sgd", "nadamw", "radam", "adopt", "adan", "adabelief",
         "cautious_adamw", "ademamix", "lion", "signum", "soap", "muon",
         "schedule_free_adamw")
ADAM_VARIANTS = ("nadamw", "radam", "adopt", "adan", "adabelief",
                 "cautious_adamw", "ademamix")


#%% Optimizer records
@dataclass
class OptimizerSpec:
    """Update rule and its hyperparameters

    Fields left as None take the rule's default: ``betas`` is
    (0.9, 0.999) except for ADOPT (0.9, 0.9999), Adan (0.98, 0.92, 0.99)
    and Lion (0.9, 0.99); ``eps`` is 1e-8 except for ADOPT (1e-6);
    ``momentum`` is 0.9 for SGD and Signum and 0.95 for Muon;
    ``muon_lr`` defaults to ``lr``.
    ``ema_decay`` switches on weight averaging.
    """
    rule: str
    lr: float
    weight_decay: float = 0.0
    betas: tuple = None
    eps: float = None
    alpha: float = ADEMAMIX_ALPHA
    beta3: float = ADEMAMIX_BETA3
    momentum: float = None
    dampening: float = SGD_DAMPENING
    muon_lr: float = None
    refresh: int = SOAP_REFRESH
    ema_decay: float = None

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError("You entered an invalid type of optimizer.")
        if self.betas is None:
            self.betas = {"adopt": ADOPT_BETAS, "adan": ADAN_BETAS,
                          "lion": LION_BETAS}.get(self.rule, BETAS)
        self.betas = tuple(float(beta) for beta in self.betas)
        if self.eps is None:
            self.eps = ADOPT_EPS if self.rule == "adopt" else EPS
        if self.momentum is None:
            self.momentum = {"signum": SIGNUM_MOMENTUM,
                             "muon": MUON_MOMENTUM}.get(self.rule,
                                                        SGD_MOMENTUM)
        if self.muon_lr is None:
            self.muon_lr = self.lr
        self.validate()

    def validate(self):
        if not self.lr > 0:
            raise ValueError("The learning rate should be positive.")
        if not self.weight_decay >= 0:
            raise ValueError("The weight decay should be non-negative.")
        n_betas = 3 if self.rule == "adan" else 2
        if len(self.betas) != n_betas:
            raise ValueError("Rule {} takes {} betas."
                             .format(self.rule, n_betas))
        for beta in self.betas + (self.beta3, self.momentum,
                                  self.dampening):
            if not 0 <= beta < 1:
                raise ValueError("Betas and momenta should be in [0, 1).")
        if not self.eps > 0:
            raise ValueError("Epsilon should be positive.")
        if not self.alpha >= 0:
            raise ValueError("The AdEMAMix alpha should be non-negative.")
        if not self.muon_lr > 0:
            raise ValueError("The Muon learning rate should be positive.")
        if int(self.refresh) != self.refresh or self.refresh < 1:
            raise ValueError("The SOAP refresh period should be a positive "
                             "integer.")
        if self.ema_decay is not None:
            if not 0 <= self.ema_decay < 1:
                raise ValueError("The EMA decay should be in [0, 1).")
            if self.rule == "schedule_free_adamw":
                raise ValueError("Schedule-Free AdamW already averages its "
                                 "iterates and cannot be combined with EMA.")

    @property
    def method(self):
        """Method id, ``<rule>`` or ``<rule>_ema``"""
        return self.rule + ("_ema" if self.ema_decay is not None else "")

    def to_dict(self):
        data = {fld.name: getattr(self, fld.name) for fld in fields(self)}
        data["betas"] = list(self.betas)
        return data

    @classmethod
    def from_dict(cls, data):
        known = {fld.name for fld in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError("Unknown optimizer fields: {}."
                             .format(sorted(unknown)))
        return cls(**data)


@dataclass
class OptimizerState:
    """Step counter and per-parameter buffers"""
    t: int = 0
    buffers: dict = field(default_factory=dict)

    def buffer(self, name):
        return self.buffers.setdefault(name, {})

    def to_dict(self):
        buffers = {}
        for name, buf in self.buffers.items():
            buffers[name] = {key: {"shape": list(value.shape),
                                   "dtype": str(value.dtype),
                                   "values": [float(val)
                                              for val in value.ravel()]}
                             for key, value in buf.items()}
        return {"format": "tabopt.optstate", "version": SCHEMA_VERSION,
                "t": self.t, "buffers": buffers}

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != "tabopt.optstate":
            raise ValueError("Not an optimizer state checkpoint.")
        if data.get("version") != SCHEMA_VERSION:
            raise ValueError("Unsupported checkpoint version {}."
                             .format(data.get("version")))
        buffers = {}
        for name, buf in data["buffers"].items():
            buffers[name] = {
                key: np.array(item["values"],
                              dtype=item["dtype"]).reshape(item["shape"])
                for key, item in buf.items()}
        return cls(t=int(data["t"]), buffers=buffers)


def init_state(spec, params):
    """Fresh state; buffers are created on the first step"""
    return OptimizerState()


def _zeros(buf, key, like):
    if key not in buf:
        buf[key] = np.zeros_like(like)
    return buf[key]


def _decay(p, lr, weight_decay):
    if weight_decay:
        return p*(1 - lr*weight_decay)
    return p


#%% Adam family
def adamw_update(spec, buf, t, p, g, lr=None):
    """AdamW update of one tensor, returns the new value

    Examples
    --------
    >>> spec = OptimizerSpec("adamw", lr=0.1)
    >>> adamw_update(spec, {}, 1, np.array([1.0]), np.array([1.0]))
    array([0.9])

    """
    lr = spec.lr if lr is None else lr
    beta1, beta2 = spec.betas
    m = buf["m"] = beta1*_zeros(buf, "m", p) + (1 - beta1)*g
    v = buf["v"] = beta2*_zeros(buf, "v", p) + (1 - beta2)*g*g
    m_hat = m/(1 - beta1**t)
    v_hat = v/(1 - beta2**t)
    p = _decay(p, lr, spec.weight_decay)
    return p - lr*m_hat/(np.sqrt(v_hat) + spec.eps)


def nadamw_update(spec, buf, t, p, g):
    """Adam with a Nesterov lookahead numerator"""
    beta1, beta2 = spec.betas
    m = buf["m"] = beta1*_zeros(buf, "m", p) + (1 - beta1)*g
    v = buf["v"] = beta2*_zeros(buf, "v", p) + (1 - beta2)*g*g
    numer = (beta1*m/(1 - beta1**(t + 1)) +
             (1 - beta1)*g/(1 - beta1**t))
    v_hat = v/(1 - beta2**t)
    p = _decay(p, spec.lr, spec.weight_decay)
    return p - spec.lr*numer/(np.sqrt(v_hat) + spec.eps)


def radam_update(spec, buf, t, p, g):
    """Rectified Adam

    While the length of the approximated moving average is at most 4
    the variance is not trusted and the step uses the bias-corrected
    momentum alone.
    """
    beta1, beta2 = spec.betas
    m = buf["m"] = beta1*_zeros(buf, "m", p) + (1 - beta1)*g
    v = buf["v"] = beta2*_zeros(buf, "v", p) + (1 - beta2)*g*g
    m_hat = m/(1 - beta1**t)
    rho_inf = 2/(1 - beta2) - 1
    rho_t = rho_inf - 2*t*beta2**t/(1 - beta2**t)
    p = _decay(p, spec.lr, spec.weight_decay)
    if rho_t > 4:
        rect = np.sqrt((rho_t - 4)*(rho_t - 2)*rho_inf /
                       ((rho_inf - 4)*(rho_inf - 2)*rho_t))
        v_hat = v/(1 - beta2**t)
        return p - spec.lr*rect*m_hat/(np.sqrt(v_hat) + spec.eps)
    return p - spec.lr*m_hat


def adopt_update(spec, buf, t, p, g):
    """ADOPT: normalize by the previous second moment, then average"""
    beta1, beta2 = spec.betas
    if "v" not in buf:
        buf["v"] = g*g
        buf["m"] = np.zeros_like(p)
        return p
    normed = g/np.maximum(np.sqrt(buf["v"]), spec.eps)
    clip = t**0.25
    normed = np.clip(normed, -clip, clip)
    m = buf["m"] = beta1*buf["m"] + (1 - beta1)*normed
    p = _decay(p, spec.lr, spec.weight_decay)
    buf["v"] = beta2*buf["v"] + (1 - beta2)*g*g
    return p - spec.lr*m


def adan_update(spec, buf, t, p, g):
    """Adan: moments of the gradient, its difference and their sum

    Weight decay divides the whole update by ``1 + lr*wd``.
    """
    beta1, beta2, beta3 = spec.betas
    diff = g - buf["g_prev"] if "g_prev" in buf else np.zeros_like(g)
    m = buf["m"] = beta1*_zeros(buf, "m", p) + (1 - beta1)*g
    d = buf["d"] = beta2*_zeros(buf, "d", p) + (1 - beta2)*diff
    mix = g + beta2*diff
    v = buf["v"] = beta3*_zeros(buf, "v", p) + (1 - beta3)*mix*mix
    buf["g_prev"] = np.array(g, copy=True)
    numer = m/(1 - beta1**t) + beta2*d/(1 - beta2**t)
    denom = np.sqrt(v/(1 - beta3**t)) + spec.eps
    return (p - spec.lr*numer/denom)/(1 + spec.lr*spec.weight_decay)


def adabelief_update(spec, buf, t, p, g):
    """AdaBelief: second moment of the gradient surprise ``g - m``"""
    beta1, beta2 = spec.betas
    m = buf["m"] = beta1*_zeros(buf, "m", p) + (1 - beta1)*g
    surprise = g - m
    s = buf["s"] = (beta2*_zeros(buf, "s", p) +
                    (1 - beta2)*surprise*surprise + spec.eps)
    m_hat = m/(1 - beta1**t)
    s_hat = s/(1 - beta2**t)
    p = _decay(p, spec.lr, spec.weight_decay)
    return p - spec.lr*m_hat/(np.sqrt(s_hat) + spec.eps)


def cautious_adamw_update(spec, buf, t, p, g):
    """AdamW restricted to coordinates where update and gradient agree

    Kept coordinates are rescaled by ``numel/n_kept``; a tensor with no
    kept coordinate gets no update.
    """
    beta1, beta2 = spec.betas
    m = buf["m"] = beta1*_zeros(buf, "m", p) + (1 - beta1)*g
    v = buf["v"] = beta2*_zeros(buf, "v", p) + (1 - beta2)*g*g
    m_hat = m/(1 - beta1**t)
    v_hat = v/(1 - beta2**t)
    update = m_hat/(np.sqrt(v_hat) + spec.eps)
    mask = update*g > 0
    n_kept = int(mask.sum())
    p = _decay(p, spec.lr, spec.weight_decay)
    if n_kept == 0:
        return p
    if n_kept < mask.size:
        update = update*mask*(mask.size/n_kept)
    return p - spec.lr*update


def ademamix_update(spec, buf, t, p, g):
    """AdEMAMix: fast and slow first moments mixed with weight alpha"""
    beta1, beta2 = spec.betas
    m1 = buf["m"] = beta1*_zeros(buf, "m", p) + (1 - beta1)*g
    m2 = buf["m_slow"] = (spec.beta3*_zeros(buf, "m_slow", p) +
                          (1 - spec.beta3)*g)
    v = buf["v"] = beta2*_zeros(buf, "v", p) + (1 - beta2)*g*g
    m_hat = m1/(1 - beta1**t)
    v_hat = v/(1 - beta2**t)
    p = _decay(p, spec.lr, spec.weight_decay)
    return p - spec.lr*(m_hat + spec.alpha*m2)/(np.sqrt(v_hat) + spec.eps)


#%% Momentum and sign rules
def sgd_update(spec, buf, t, p, g):
    """SGD with momentum, dampening and L2 folded into the gradient"""
    if spec.weight_decay:
        g = g + spec.weight_decay*p
    if "m" not in buf:
        buf["m"] = np.array(g, copy=True)
    else:
        buf["m"] = spec.momentum*buf["m"] + (1 - spec.dampening)*g
    return p - spec.lr*buf["m"]


def lion_update(spec, buf, t, p, g):
    """Lion: sign of an interpolated momentum"""
    beta1, beta2 = spec.betas
    m = _zeros(buf, "m", p)
    direction = np.sign(beta1*m + (1 - beta1)*g)
    buf["m"] = beta2*m + (1 - beta2)*g
    p = _decay(p, spec.lr, spec.weight_decay)
    return p - spec.lr*direction


def signum_update(spec, buf, t, p, g):
    """Signum: sign of the momentum

    Examples
    --------
    >>> spec = OptimizerSpec("signum", lr=0.01)
    >>> signum_update(spec, {}, 1, np.array([0.0]), np.array([-3.0]))
    array([0.01])

    """
    m = buf["m"] = (spec.momentum*_zeros(buf, "m", p) +
                    (1 - spec.momentum)*g)
    p = _decay(p, spec.lr, spec.weight_decay)
    return p - spec.lr*np.sign(m)


#%% Muon
def newton_schulz_orthogonalize(mat, iters=NS_STEPS, coeffs=NS_COEFFS,
                                eps=NS_EPS):
    """Approximate the orthogonal polar factor of a matrix

    The matrix is scaled by its Frobenius norm and then goes through
    ``iters`` iterations of ``X <- a X + (b A + c A^2) X`` with
    ``A = X X^T``. Tall matrices are transposed so that ``A`` is the
    smaller Gram matrix.

    With the default quintic coefficients the iteration trades accuracy
    for speed: singular values of the result land roughly in
    [0.68, 1.21] instead of exactly 1. The cubic coefficients
    (1.5, -0.5, 0) converge to the polar factor given enough
    iterations.

    Parameters
    ----------
    mat : ndarray (rows, cols)
        Matrix to orthogonalize.
    iters : int (optional)
        Number of iterations.
    coeffs : tuple (optional)
        Polynomial coefficients ``(a, b, c)``.
    eps : float (optional)
        Added to the norm before scaling.

    Returns
    -------
    orth : ndarray (rows, cols)
        Orthogonalized matrix. An all-zero input is returned unchanged.

    Examples
    --------
    >>> orth = newton_schulz_orthogonalize(np.diag([4.0, 4.0]), iters=40,
    ...                                    coeffs=(1.5, -0.5, 0.0))
    >>> np.round(orth, 6)
    array([[1., 0.],
           [0., 1.]])

    """
    mat = np.asarray(mat)
    if mat.ndim != 2:
        raise ValueError("Newton-Schulz needs a matrix.")
    norm = np.linalg.norm(mat)
    if norm == 0:
        return mat.copy()
    a, b, c = coeffs
    orth = mat/(norm + eps)
    tall = orth.shape[0] > orth.shape[1]
    if tall:
        orth = orth.T
    for _ in range(iters):
        gram = orth @ orth.T
        orth = a*orth + (b*gram + c*(gram @ gram)) @ orth
    if tall:
        orth = orth.T
    return orth


def muon_update(spec, buf, t, p, g):
    """Orthogonalized momentum step for one hidden weight matrix"""
    m = buf["m"] = spec.momentum*_zeros(buf, "m", p) + g
    rows, cols = p.shape
    scale = np.sqrt(max(1.0, rows/cols))
    p = _decay(p, spec.muon_lr, spec.weight_decay)
    return p - spec.muon_lr*scale*newton_schulz_orthogonalize(m)


def muon_step(spec, state, params, grads):
    """Muon on the ``muon`` group and AdamW on everything else

    Returns
    -------
    new : dict
        New parameter values.
    """
    new = {}
    for name in params:
        buf = state.buffer(name)
        if params.group(name) == "muon":
            new[name] = muon_update(spec, buf, state.t, params[name],
                                    grads[name])
        else:
            new[name] = adamw_update(spec, buf, state.t, params[name],
                                     grads[name])
    return new


#%% SOAP
def soap_update(spec, buf, t, p, g):
    """Adam in the eigenbasis of the Shampoo preconditioners

    The first moment lives in the original coordinates and the second
    moment in the rotated ones. The bases start at the identity and are
    refreshed every ``spec.refresh`` steps.
    """
    beta1, beta2 = spec.betas
    rows, cols = p.shape
    if "q_left" not in buf:
        buf["q_left"] = np.eye(rows, dtype=p.dtype)
        buf["q_right"] = np.eye(cols, dtype=p.dtype)
        buf["left"] = np.zeros((rows, rows), dtype=p.dtype)
        buf["right"] = np.zeros((cols, cols), dtype=p.dtype)
    q_left, q_right = buf["q_left"], buf["q_right"]
    m = buf["m"] = beta1*_zeros(buf, "m", p) + (1 - beta1)*g
    g_rot = q_left.T @ g @ q_right
    m_rot = q_left.T @ m @ q_right
    v = buf["v"] = beta2*_zeros(buf, "v", p) + (1 - beta2)*g_rot*g_rot
    m_hat = m_rot/(1 - beta1**t)
    v_hat = v/(1 - beta2**t)
    update = q_left @ (m_hat/(np.sqrt(v_hat) + spec.eps)) @ q_right.T
    p = _decay(p, spec.lr, spec.weight_decay)
    buf["left"] = beta2*buf["left"] + g @ g.T
    buf["right"] = beta2*buf["right"] + g.T @ g
    if t % spec.refresh == 0:
        refresh_basis(buf)
    return p - spec.lr*update


def refresh_basis(buf):
    """Recompute the eigenbases of the accumulators in ``buf``

    The second moment ``v`` is carried over to the new basis treating
    its entries as variances of independent coordinates,
    ``v <- (R_l**2).T @ v @ R_r**2`` with ``R = Q_old.T @ Q_new``. This
    is exact when the new basis is a signed permutation of the old one
    and keeps the total of ``v``.

    Examples
    --------
    >>> buf = {"q_left": np.eye(2), "q_right": np.eye(1),
    ...        "left": np.diag([3.0, 1.0]), "right": np.eye(1),
    ...        "v": np.array([[1.0], [2.0]])}
    >>> refresh_basis(buf)
    >>> buf["v"]
    array([[2.],
           [1.]])

    """
    try:
        _, q_left = np.linalg.eigh(buf["left"])
        _, q_right = np.linalg.eigh(buf["right"])
    except np.linalg.LinAlgError as err:
        logger.warning("Skipping SOAP basis refresh: %s", err)
        return
    if "v" in buf:
        rot_left = buf["q_left"].T @ q_left
        rot_right = buf["q_right"].T @ q_right
        buf["v"] = (rot_left**2).T @ buf["v"] @ rot_right**2
    buf["q_left"] = q_left
    buf["q_right"] = q_right


def soap_step(spec, state, params, grads):
    """SOAP on matrices, AdamW on vectors and embeddings"""
    new = {}
    for name in params:
        buf = state.buffer(name)
        if params.role(name) == "matrix":
            new[name] = soap_update(spec, buf, state.t, params[name],
                                    grads[name])
        else:
            new[name] = adamw_update(spec, buf, state.t, params[name],
                                     grads[name])
    return new


#%% Schedule-Free
def schedule_free_step(spec, state, params, grads):
    """Schedule-Free AdamW

    The live parameters are the interpolation ``y`` where gradients are
    taken. The state holds the base iterate ``z`` and its running
    average ``x`` with weight ``1/t``. Evaluation uses ``x``, see
    :func:`eval_params`.
    """
    beta1, beta2 = spec.betas
    new = {}
    for name in params:
        buf = state.buffer(name)
        y, g = params[name], grads[name]
        if "z" not in buf:
            buf["z"] = np.array(y, copy=True)
            buf["x"] = np.array(y, copy=True)
        v = buf["v"] = beta2*_zeros(buf, "v", y) + (1 - beta2)*g*g
        denom = np.sqrt(v/(1 - beta2**state.t)) + spec.eps
        z = buf["z"] = (buf["z"] - spec.lr*g/denom -
                        spec.lr*spec.weight_decay*y)
        weight = 1/state.t
        x = buf["x"] = (1 - weight)*buf["x"] + weight*z
        new[name] = (1 - beta1)*z + beta1*x
    return new


def eval_params(spec, state, params):
    """Parameters to evaluate: ``x`` for Schedule-Free, else ``params``"""
    if spec.rule != "schedule_free_adamw":
        return params
    evaluated = params.copy()
    for name in params:
        buf = state.buffers.get(name, {})
        if "x" in buf:
            evaluated[name] = buf["x"]
    return evaluated


#%% Stepping interface
def _per_tensor(update):
    def rule_step(spec, state, params, grads):
        return {name: update(spec, state.buffer(name), state.t,
                             params[name], grads[name])
                for name in params}
    rule_step.__doc__ = update.__doc__
    return rule_step


def adam_family_step(variant, spec, state, params, grads):
    """Step of one Adam variant (see ``ADAM_VARIANTS``)"""
    if variant not in ADAM_VARIANTS:
        raise ValueError("You entered an invalid Adam variant.")
    return rule_fun(variant)(spec, state, params, grads)


def rule_fun(rule):
    """Return the step function of an update rule"""
    rule_id = {
        "adamw": _per_tensor(adamw_update),
        "sgd": _per_tensor(sgd_update),
        "nadamw": _per_tensor(nadamw_update),
        "radam": _per_tensor(radam_update),
        "adopt": _per_tensor(adopt_update),
        "adan": _per_tensor(adan_update),
        "adabelief": _per_tensor(adabelief_update),
        "cautious_adamw": _per_tensor(cautious_adamw_update),
        "ademamix": _per_tensor(ademamix_update),
        "lion": _per_tensor(lion_update),
        "signum": _per_tensor(signum_update),
        "soap": soap_step,
        "muon": muon_step,
        "schedule_free_adamw": schedule_free_step}
    try:
        return rule_id[rule]
    except KeyError:
        raise ValueError("You entered an invalid type of optimizer.")


def step(spec, state, params, grads):
    """Apply one update of ``spec.rule``

    Parameters
    ----------
    spec : OptimizerSpec
        Rule and hyperparameters.
    state : OptimizerState
        Buffers, updated in place only when the whole step is finite.
    params : ParamSet
        Parameters, updated in place.
    grads : dict
        Gradients keyed like ``params``.

    Returns
    -------
    params : ParamSet
        Updated parameters.
    state : OptimizerState
        Updated state.

    Raises
    ------
    NonFiniteError
        If a gradient or an updated parameter is not finite.

    """
    nn.check_keys(params, grads)
    for name in params:
        nn.check_finite(grads[name], "gradient of " + name)
    update = rule_fun(spec.rule)
    # Rules replace buffer entries instead of writing into them
    trial = OptimizerState(t=state.t + 1,
                           buffers={name: dict(buf) for name, buf in
                                    state.buffers.items()})
    new = update(spec, trial, params, grads)
    for name, value in new.items():
        nn.check_finite(value, "update of " + name)
    state.t = trial.t
    state.buffers.clear()
    state.buffers.update(trial.buffers)
    for name, value in new.items():
        params[name] = value
    return params, state


if __name__ == "__main__":
    import doctest
    doctest.testmod()
