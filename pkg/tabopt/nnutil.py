# -*- coding: utf-8 -*-
"""
Neural network routines
-----------------------

Dense layer kernels with hand-written backward passes, the two training
losses, gradient clipping, random streams and parameter storage.

Tensors are plain NumPy arrays. Every forward function that has
something to remember for the backward pass appends it to a ``cache``
dictionary, and :func:`backward` walks that record in reverse order.
There is no general automatic differentiation: only the layers listed
here are supported.

"""
import json
import zlib
import numpy as np
from scipy.special import logsumexp, softmax

from tabopt.constants import SCHEMA_VERSION

ROLES = ("matrix", "vector", "embedding")
GROUPS = ("muon", "adam")
ROLE_RANK = {"vector": 1, "matrix": 2, "embedding": 3}


class NonFiniteError(FloatingPointError):
    """A NaN or infinite value reached a parameter, gradient or loss."""


#%% Random streams
def make_rng(seed, *names):
    """Return an independent random stream for ``seed`` and a name path

    The generator is the counter-based Philox keyed through a
    ``SeedSequence``, so streams with different names never overlap
    and the same ``(seed, names)`` always gives the same numbers.

    Parameters
    ----------
    seed : int
        Run seed (non-negative).
    names : str or int
        Path that identifies the stream, e.g. ``("dropout", 3)``.

    Returns
    -------
    rng : numpy.random.Generator
        Random generator.

    Examples
    --------
    >>> a = make_rng(0, "init").random(3)
    >>> b = make_rng(0, "init").random(3)
    >>> bool(np.all(a == b))
    True
    >>> bool(np.all(a == make_rng(0, "dropout").random(3)))
    False

    """
    if int(seed) < 0:
        raise ValueError("The seed should be a non-negative integer.")
    key = [int(seed)] + [zlib.crc32(str(name).encode("utf-8"))
                         for name in names]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


#%% Parameter storage
class ParamSet:
    """Ordered named collection of parameter tensors

    Each tensor carries a role (``matrix`` for rank 2, ``vector`` for
    rank 1, ``embedding`` for rank 3) and an optimizer group (``muon``
    for the hidden weights updated by orthogonalized momentum, ``adam``
    for everything else).
    """

    def __init__(self):
        self._values = {}
        self._roles = {}
        self._groups = {}

    def add(self, name, value, role=None, group="adam"):
        """Register a new tensor ``name``"""
        if name in self._values:
            raise ValueError("Parameter name {} is repeated.".format(name))
        value = np.array(value)
        if role is None:
            role = "matrix" if value.ndim == 2 else "vector"
        if role not in ROLES:
            raise ValueError("You entered an invalid parameter role.")
        if group not in GROUPS:
            raise ValueError("You entered an invalid parameter group.")
        if value.ndim != ROLE_RANK[role]:
            msg = "Parameter {} has rank {} but role {}."
            raise ValueError(msg.format(name, value.ndim, role))
        if group == "muon" and role != "matrix":
            raise ValueError("Only matrices can be updated by Muon.")
        self._values[name] = value
        self._roles[name] = role
        self._groups[name] = group

    def __getitem__(self, name):
        return self._values[name]

    def __setitem__(self, name, value):
        if name not in self._values:
            raise KeyError(name)
        value = np.asarray(value, dtype=self._values[name].dtype)
        if value.shape != self._values[name].shape:
            msg = "Shape drift for parameter {}: {} != {}."
            raise ValueError(msg.format(name, value.shape,
                                        self._values[name].shape))
        self._values[name] = value

    def __contains__(self, name):
        return name in self._values

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def keys(self):
        return list(self._values)

    def items(self):
        return list(self._values.items())

    def role(self, name):
        return self._roles[name]

    def group(self, name):
        return self._groups[name]

    def names_in_group(self, group):
        return [name for name in self._values if self._groups[name] == group]

    @property
    def dtype(self):
        for value in self._values.values():
            return value.dtype
        return np.dtype(np.float64)

    def n_params(self):
        """Total number of scalar parameters"""
        return int(sum(value.size for value in self._values.values()))

    def copy(self):
        """Deep copy with the same names, roles and groups"""
        new = ParamSet()
        for name, value in self._values.items():
            new.add(name, value.copy(), role=self._roles[name],
                    group=self._groups[name])
        return new

    def zeros_like(self):
        """Dictionary of zero arrays shaped like each parameter"""
        return {name: np.zeros_like(value)
                for name, value in self._values.items()}


def check_keys(params, grads):
    """Verify that a gradient dictionary matches a ParamSet"""
    if set(grads) != set(params.keys()):
        missing = sorted(set(params.keys()) ^ set(grads))
        raise ValueError("Gradient keys do not match parameters: {}"
                         .format(missing))
    for name in params:
        if grads[name].shape != params[name].shape:
            msg = "Gradient for {} has shape {} instead of {}."
            raise ValueError(msg.format(name, grads[name].shape,
                                        params[name].shape))


def check_finite(value, name):
    """Raise :class:`NonFiniteError` if ``value`` has NaN or Inf"""
    if not np.all(np.isfinite(value)):
        raise NonFiniteError("Non-finite value found in {}.".format(name))


#%% Layers
def linear_forward(x, weight, bias, cache=None, names=None):
    """Affine map ``y = x W + b``

    Parameters
    ----------
    x : ndarray (batch, n_in)
        Input.
    weight : ndarray (n_in, n_out)
        Weight matrix.
    bias : ndarray (n_out,)
        Bias vector.
    cache : dict, optional
        Forward record; when given, the input is stored for backward.
    names : tuple of str, optional
        Parameter names ``(weight_name, bias_name)`` used in the record.

    Returns
    -------
    y : ndarray (batch, n_out)
        Output.

    Examples
    --------
    >>> linear_forward(np.array([[1., 1.]]), np.array([[2.], [3.]]),
    ...                np.array([1.]))
    array([[6.]])

    """
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise ValueError("Linear layer expects (B, I), (I, O) and (O,).")
    if x.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        msg = "Shape mismatch in linear layer: {} x {} + {}."
        raise ValueError(msg.format(x.shape, weight.shape, bias.shape))
    if cache is not None:
        cache.setdefault("ops", []).append(("linear", names[0], names[1], x))
    return x @ weight + bias


def linear_backward(x, weight, dout):
    """Gradients of the affine map

    Returns
    -------
    dx : ndarray
        Gradient with respect to the input.
    dweight : ndarray
        Gradient with respect to the weight.
    dbias : ndarray
        Gradient with respect to the bias.
    """
    return dout @ weight.T, x.T @ dout, dout.sum(axis=0)


def relu(x, cache=None):
    """Rectified linear unit"""
    if cache is not None:
        cache.setdefault("ops", []).append(("relu", x))
    return np.maximum(x, 0)


def relu_backward(x, dout):
    """Gradient of the rectified linear unit"""
    return dout * (x > 0)


def dropout(x, rate, training, rng=None, cache=None):
    """Inverted dropout

    Kept units are scaled by ``1/(1 - rate)``. With ``rate == 0`` or
    outside training mode the input is returned unchanged.

    Parameters
    ----------
    x : ndarray
        Input.
    rate : float
        Drop probability in [0, 1).
    training : bool
        Whether the model is in training mode.
    rng : numpy.random.Generator, optional
        Stream for the mask. Required when dropout is active.
    cache : dict, optional
        Forward record.

    Returns
    -------
    y : ndarray
        Output.
    """
    if not 0 <= rate < 1:
        raise ValueError("Dropout rate should be in [0, 1).")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ValueError("Dropout in training mode needs a random stream.")
    mask = (rng.random(x.shape) >= rate) / (1 - rate)
    mask = mask.astype(x.dtype)
    if cache is not None:
        cache.setdefault("ops", []).append(("dropout", mask))
    return x * mask


#%% Losses
def cross_entropy(logits, labels):
    """Mean softmax cross-entropy with log-sum-exp stabilization

    Examples
    --------
    >>> float(cross_entropy(np.zeros((1, 4)), np.array([2])))  # ln 4
    1.3862943611198906
    >>> float(cross_entropy(np.array([[1000., 0.]]), np.array([0])))
    0.0

    """
    labels = _check_labels(logits, labels)
    lse = logsumexp(logits, axis=1)
    picked = logits[np.arange(logits.shape[0]), labels]
    return np.mean(lse - picked)


def cross_entropy_backward(logits, labels):
    """Gradient of :func:`cross_entropy` with respect to the logits"""
    labels = _check_labels(logits, labels)
    grad = softmax(logits, axis=1)
    grad[np.arange(logits.shape[0]), labels] -= 1
    return grad / logits.shape[0]


def _check_labels(logits, labels):
    check_finite(logits, "logits")
    labels = np.asarray(labels).astype(int)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError("Labels should be a vector with one entry per row.")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("Class index out of range.")
    return labels


def mse(pred, target):
    """Mean squared error over batch and outputs

    Examples
    --------
    >>> float(mse(np.array([[1.], [2.]]), np.array([[1.], [2.]])))
    0.0

    """
    target = np.reshape(target, pred.shape)
    return np.mean((pred - target)**2)


def mse_backward(pred, target):
    """Gradient of :func:`mse` with respect to the prediction"""
    target = np.reshape(target, pred.shape)
    return 2*(pred - target)/pred.size


#%% Backward pass
def backward(params, cache, dout):
    """Propagate ``dout`` back through a recorded forward pass

    Parameters
    ----------
    params : ParamSet
        Parameters used in the forward pass.
    cache : dict
        Forward record filled by the layer functions.
    dout : ndarray
        Gradient of the loss with respect to the recorded output.

    Returns
    -------
    grads : dict
        Gradients for the parameters touched by the record.
    dx : ndarray
        Gradient with respect to the recorded input.
    """
    if not cache or not cache.get("ops"):
        raise ValueError("Backward called before forward.")
    grads = {}
    grad = dout
    for op in reversed(cache["ops"]):
        kind = op[0]
        if kind == "linear":
            _, w_name, b_name, x = op
            grad, dweight, dbias = linear_backward(x, params[w_name], grad)
            grads[w_name] = grads.get(w_name, 0) + dweight
            grads[b_name] = grads.get(b_name, 0) + dbias
        elif kind == "relu":
            grad = relu_backward(op[1], grad)
        elif kind == "dropout":
            grad = grad * op[1]
        else:
            raise ValueError("Unknown operation {} in record.".format(kind))
    return grads, grad


#%% Gradient clipping
def global_norm(grads):
    """l2-norm of all gradients concatenated"""
    total = 0.0
    for name, grad in grads.items():
        check_finite(grad, "gradient of " + name)
        total += float(np.sum(np.square(grad, dtype=np.float64)))
    return np.sqrt(total)


def global_grad_clip(grads, threshold):
    """Scale all gradients together so that their global norm is at most
    ``threshold``

    Examples
    --------
    >>> global_grad_clip({"w": np.array([3., 4.])}, 1.0)["w"]
    array([0.6, 0.8])

    """
    if not threshold > 0:
        raise ValueError("The clipping threshold should be positive.")
    norm = global_norm(grads)
    if norm <= threshold:
        return dict(grads)
    scale = threshold/norm
    return {name: grad*scale for name, grad in grads.items()}


#%% Checkpoints
def params_to_dict(params):
    """Serialize a ParamSet as a versioned JSON-ready dictionary"""
    tensors = []
    for name, value in params.items():
        tensors.append({"name": name,
                        "role": params.role(name),
                        "group": params.group(name),
                        "shape": list(value.shape),
                        "dtype": str(value.dtype),
                        "values": [float(val) for val in value.ravel()]})
    return {"format": "tabopt.paramset", "version": SCHEMA_VERSION,
            "tensors": tensors}


def params_from_dict(data):
    """Rebuild a ParamSet from :func:`params_to_dict` output"""
    if data.get("format") != "tabopt.paramset":
        raise ValueError("Not a parameter checkpoint.")
    if data.get("version") != SCHEMA_VERSION:
        raise ValueError("Unsupported checkpoint version {}."
                         .format(data.get("version")))
    params = ParamSet()
    for tensor in data["tensors"]:
        value = np.array(tensor["values"], dtype=tensor["dtype"])
        params.add(tensor["name"], value.reshape(tensor["shape"]),
                   role=tensor["role"], group=tensor["group"])
    return params


def save_params(params, path):
    """Write a ParamSet checkpoint to ``path``"""
    with open(path, "w", encoding="utf-8") as fout:
        json.dump(params_to_dict(params), fout)


def load_params(path):
    """Read a ParamSet checkpoint written by :func:`save_params`"""
    with open(path, "r", encoding="utf-8") as fin:
        return params_from_dict(json.load(fin))


if __name__ == "__main__":
    import doctest
    doctest.testmod()
