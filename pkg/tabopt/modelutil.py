# -*- coding: utf-8 -*-
"""
Model subroutines
-----------------

The three MLP-based architectures of the benchmark:

    1. ``mlp``: ReLU MLP with dropout.
    2. ``mlp_ple``: MLP with piecewise-linear embeddings for the numeric
       features (MLP†).
    3. ``tabm_packed``: ``k`` independent MLPs trained on the same
       batches, with averaged predictions.

Every architecture provides a builder returning a
:class:`~tabopt.nnutil.ParamSet`, a forward function and a loss
function returning the loss and its gradients. Models are selected
through their configuration record, in the same way elements are
selected by type in an element library.

"""
from dataclasses import dataclass, asdict
import numpy as np
from scipy.special import softmax

import tabopt.nnutil as nn

MODEL_KINDS = ("mlp", "mlp_ple", "tabm_packed")


#%% Configurations
@dataclass
class MLPConfig:
    """Backbone hyperparameters"""
    n_layers: int
    width: int
    dropout: float = 0.0
    in_dim: int = 1
    out_dim: int = 1

    def __post_init__(self):
        if not 1 <= self.n_layers <= 6:
            raise ValueError("The number of layers should be in [1, 6].")
        if self.width < 1 or self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("Layer sizes should be positive.")
        if not 0 <= self.dropout <= 0.5:
            raise ValueError("Dropout rate should be in [0, 0.5].")


@dataclass
class PLEConfig:
    """Piecewise-linear embedding hyperparameters

    ``edges`` holds one strictly increasing array of bin edges per
    numeric feature. With ``identity`` set the embedding is replaced by
    the identity map.
    """
    n_bins: int
    d_embedding: int
    edges: list = None
    identity: bool = False

    def __post_init__(self):
        if not 2 <= self.n_bins <= 128:
            raise ValueError("The number of bins should be in [2, 128].")
        if not 1 <= self.d_embedding <= 32:
            raise ValueError("The embedding size should be in [1, 32].")
        if self.edges is not None:
            self.edges = [np.asarray(edge, dtype=float)
                          for edge in self.edges]
            for edge in self.edges:
                if np.any(np.diff(edge) <= 0):
                    raise ValueError("Bin edges should be strictly "
                                     "increasing.")

    @property
    def n_tokens(self):
        """Width of the encoding (largest number of bins per feature)"""
        return max([max(len(edge) - 1, 1) for edge in self.edges] + [1])


@dataclass
class MLPPLEConfig:
    """MLP† configuration: embedding for the first ``n_num`` columns"""
    inner: MLPConfig
    ple: PLEConfig
    n_num: int


@dataclass
class TabMPackedConfig:
    """Ensemble of ``k`` MLPs that share no parameters"""
    inner: MLPConfig
    k: int = 16

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("The ensemble size should be positive.")


def config_to_dict(cfg):
    """JSON-ready dictionary for a model configuration"""
    if isinstance(cfg, MLPConfig):
        return {"kind": "mlp", "inner": asdict(cfg)}
    elif isinstance(cfg, TabMPackedConfig):
        return {"kind": "tabm_packed", "inner": asdict(cfg.inner),
                "k": cfg.k}
    elif isinstance(cfg, MLPPLEConfig):
        ple = {"n_bins": cfg.ple.n_bins,
               "d_embedding": cfg.ple.d_embedding,
               "identity": cfg.ple.identity,
               "edges": None if cfg.ple.edges is None else
               [edge.tolist() for edge in cfg.ple.edges]}
        return {"kind": "mlp_ple", "inner": asdict(cfg.inner), "ple": ple,
                "n_num": cfg.n_num}
    raise TypeError("Unknown model configuration.")


def config_from_dict(data):
    """Inverse of :func:`config_to_dict`"""
    inner = MLPConfig(**data["inner"])
    if data["kind"] == "mlp":
        return inner
    elif data["kind"] == "tabm_packed":
        return TabMPackedConfig(inner=inner, k=data["k"])
    elif data["kind"] == "mlp_ple":
        return MLPPLEConfig(inner=inner, ple=PLEConfig(**data["ple"]),
                            n_num=data["n_num"])
    raise ValueError("You entered an invalid model kind.")


#%% Plain MLP
def init_uniform(rng, fan_in, shape, dtype=np.float64):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization"""
    bound = 1/np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def build_mlp(cfg, seed, dtype=np.float64, prefix="", params=None):
    """Create the parameters of an MLP

    Hidden blocks are ``linear -> ReLU -> dropout`` followed by a linear
    head. Hidden weights after the first block go to the ``muon``
    group; the input weight, the head and all biases go to ``adam``.

    Parameters
    ----------
    cfg : MLPConfig
        Backbone hyperparameters.
    seed : int
        Initialization seed.
    dtype : numpy dtype (optional)
        Parameter precision. By default it is float64.
    prefix : str (optional)
        Prefix for the parameter names.
    params : ParamSet (optional)
        Existing collection to add the parameters to.

    Returns
    -------
    params : ParamSet
        Parameters.

    Examples
    --------
    >>> cfg = MLPConfig(n_layers=1, width=64, in_dim=8, out_dim=1)
    >>> build_mlp(cfg, seed=0).n_params()
    641

    """
    if params is None:
        params = nn.ParamSet()
    rng = nn.make_rng(seed, "init", prefix)
    fan_in = cfg.in_dim
    for layer in range(cfg.n_layers):
        name = "{}block{}.linear".format(prefix, layer)
        group = "adam" if layer == 0 else "muon"
        params.add(name + ".weight",
                   init_uniform(rng, fan_in, (fan_in, cfg.width), dtype),
                   role="matrix", group=group)
        params.add(name + ".bias",
                   init_uniform(rng, fan_in, (cfg.width,), dtype),
                   role="vector")
        fan_in = cfg.width
    params.add(prefix + "head.weight",
               init_uniform(rng, fan_in, (fan_in, cfg.out_dim), dtype),
               role="matrix")
    params.add(prefix + "head.bias",
               init_uniform(rng, fan_in, (cfg.out_dim,), dtype),
               role="vector")
    return params


def mlp_forward(params, cfg, x, training=False, rng=None, cache=None,
                prefix=""):
    """Forward pass of an MLP built by :func:`build_mlp`"""
    hidden = x
    for layer in range(cfg.n_layers):
        name = "{}block{}.linear".format(prefix, layer)
        hidden = nn.linear_forward(hidden, params[name + ".weight"],
                                   params[name + ".bias"], cache=cache,
                                   names=(name + ".weight",
                                          name + ".bias"))
        hidden = nn.relu(hidden, cache=cache)
        hidden = nn.dropout(hidden, cfg.dropout, training, rng=rng,
                            cache=cache)
    return nn.linear_forward(hidden, params[prefix + "head.weight"],
                             params[prefix + "head.bias"], cache=cache,
                             names=(prefix + "head.weight",
                                    prefix + "head.bias"))


#%% Piecewise-linear embeddings
def fit_ple_edges(x_num, n_bins):
    """Quantile bin edges for every numeric feature

    Duplicated edges are merged, so a feature may end up with fewer
    than ``n_bins`` bins.

    Examples
    --------
    >>> fit_ple_edges(np.array([[0.], [1.], [2.]]), 2)[0]
    array([0., 1., 2.])

    """
    quantiles = np.linspace(0, 1, n_bins + 1)
    return [np.unique(np.quantile(x_num[:, col], quantiles))
            for col in range(x_num.shape[1])]


def ple_encode(x_num, edges):
    """Piecewise-linear encoding of the numeric features

    Component ``t`` of a feature with edges ``b`` is
    ``clip((x - b_t)/(b_{t+1} - b_t), 0, 1)``. Features with fewer than
    two bins pass their value through component 0. Features with fewer
    bins than the widest one are padded with zeros.

    Parameters
    ----------
    x_num : ndarray (batch, n_features)
        Numeric features.
    edges : list of ndarray
        Bin edges per feature.

    Returns
    -------
    encoding : ndarray (batch, n_features, n_bins)
        Encoded features.

    Examples
    --------
    >>> ple_encode(np.array([[0.5], [2.]]), [np.array([0., 1., 2.])])
    array([[[0.5, 0. ]],
    <BLANKLINE>
           [[1. , 1. ]]])

    """
    if x_num.shape[1] != len(edges):
        raise ValueError("There should be one set of edges per feature.")
    n_tokens = max([max(len(edge) - 1, 1) for edge in edges] + [1])
    encoding = np.zeros((x_num.shape[0], x_num.shape[1], n_tokens),
                        dtype=x_num.dtype)
    for col, edge in enumerate(edges):
        nbins = len(edge) - 1
        if nbins < 2:
            encoding[:, col, 0] = x_num[:, col]
            continue
        ratio = (x_num[:, col, None] - edge[:-1])/np.diff(edge)
        encoding[:, col, :nbins] = np.clip(ratio, 0, 1)
    return encoding


def build_mlp_ple(cfg, seed, dtype=np.float64):
    """Create the parameters of an MLP with piecewise-linear embeddings"""
    params = nn.ParamSet()
    if not cfg.ple.identity:
        n_tokens = cfg.ple.n_tokens
        d_emb = cfg.ple.d_embedding
        rng = nn.make_rng(seed, "init", "ple")
        params.add("ple.weight",
                   init_uniform(rng, n_tokens, (cfg.n_num, n_tokens, d_emb),
                                dtype),
                   role="embedding")
        params.add("ple.bias",
                   init_uniform(rng, n_tokens, (cfg.n_num*d_emb,), dtype),
                   role="vector")
    return build_mlp(cfg.inner, seed, dtype=dtype, params=params)


def ple_features(params, cfg, x):
    """Backbone input of MLP† and the encoding it was built from"""
    if cfg.ple.identity:
        return x, None
    encoding = ple_encode(x[:, :cfg.n_num], cfg.ple.edges)
    embedded = np.einsum("bft,ftd->bfd", encoding, params["ple.weight"])
    embedded = embedded.reshape(x.shape[0], -1) + params["ple.bias"]
    return np.hstack([embedded, x[:, cfg.n_num:]]), encoding


def mlp_ple_forward(params, cfg, x, training=False, rng=None, cache=None):
    """Forward pass of MLP†"""
    features, encoding = ple_features(params, cfg, x)
    if cache is not None:
        cache["encoding"] = encoding
    return mlp_forward(params, cfg.inner, features, training=training,
                       rng=rng, cache=cache)


def ple_backward(cfg, encoding, dfeatures):
    """Gradients of the embedding parameters from the backbone input
    gradient"""
    n_num, d_emb = cfg.n_num, cfg.ple.d_embedding
    demb = dfeatures[:, :n_num*d_emb].reshape(-1, n_num, d_emb)
    return {"ple.weight": np.einsum("bft,bfd->ftd", encoding, demb),
            "ple.bias": dfeatures[:, :n_num*d_emb].sum(axis=0)}


#%% Packed ensemble
def build_tabm_packed(cfg, seed, dtype=np.float64):
    """Create ``k`` independent MLPs named ``member<i>.``"""
    params = nn.ParamSet()
    for member in range(cfg.k):
        build_mlp(cfg.inner, seed, dtype=dtype,
                  prefix="member{}.".format(member), params=params)
    return params


def tabm_packed_forward(params, cfg, x, training=False, rng=None,
                        caches=None):
    """Raw outputs of every member, shape ``(k, batch, out_dim)``"""
    outputs = []
    for member in range(cfg.k):
        cache = None if caches is None else caches[member]
        outputs.append(mlp_forward(params, cfg.inner, x, training=training,
                                   rng=rng, cache=cache,
                                   prefix="member{}.".format(member)))
    return np.stack(outputs)


#%% Common interface
def model_fun(cfg):
    """Return builder and forward functions for a configuration

    Parameters
    ----------
    cfg : MLPConfig, MLPPLEConfig or TabMPackedConfig
        Model configuration.

    Returns
    -------
    builder : callable
        Function ``(cfg, seed, dtype) -> ParamSet``.
    forward : callable
        Forward function.
    """
    model_id = {
        MLPConfig: (build_mlp, mlp_forward),
        MLPPLEConfig: (build_mlp_ple, mlp_ple_forward),
        TabMPackedConfig: (build_tabm_packed, tabm_packed_forward)}
    try:
        return model_id[type(cfg)]
    except KeyError:
        raise ValueError("You entered an invalid model configuration.")


def build_model(cfg, seed, dtype=np.float64):
    """Create the parameters for any model configuration"""
    builder, _ = model_fun(cfg)
    return builder(cfg, seed, dtype=dtype)


def _head_loss(out, y, task):
    """Loss and output gradient for one prediction head"""
    if task == "regression":
        target = np.reshape(y, out.shape)
        return nn.mse(out, target), nn.mse_backward(out, target)
    return nn.cross_entropy(out, y), nn.cross_entropy_backward(out, y)


def loss_and_grads(cfg, params, x, y, task, training=True, rng=None):
    """Training loss and its gradients

    For ``tabm_packed`` the loss is the mean of the member losses, so
    each member receives ``1/k`` of its standalone gradient.

    Parameters
    ----------
    cfg : model configuration
        Model configuration.
    params : ParamSet
        Parameters.
    x : ndarray (batch, n_in)
        Encoded features.
    y : ndarray (batch,)
        Normalized regression targets or class indices.
    task : str
        ``regression``, ``binclass`` or ``multiclass``.
    training : bool (optional)
        Use dropout. By default it is True.
    rng : numpy.random.Generator (optional)
        Stream for the dropout masks.

    Returns
    -------
    loss : float
        Loss value.
    grads : dict
        Gradients keyed like ``params``.
    """
    if isinstance(cfg, TabMPackedConfig):
        grads = {}
        losses = []
        for member in range(cfg.k):
            prefix = "member{}.".format(member)
            cache = {}
            out = mlp_forward(params, cfg.inner, x, training=training,
                              rng=rng, cache=cache, prefix=prefix)
            loss, dout = _head_loss(out, y, task)
            member_grads, _ = nn.backward(params, cache, dout/cfg.k)
            grads.update(member_grads)
            losses.append(loss)
        loss = np.mean(losses)
    elif isinstance(cfg, MLPPLEConfig):
        cache = {}
        out = mlp_ple_forward(params, cfg, x, training=training, rng=rng,
                              cache=cache)
        loss, dout = _head_loss(out, y, task)
        grads, dfeatures = nn.backward(params, cache, dout)
        if not cfg.ple.identity:
            grads.update(ple_backward(cfg, cache["encoding"], dfeatures))
    elif isinstance(cfg, MLPConfig):
        cache = {}
        out = mlp_forward(params, cfg, x, training=training, rng=rng,
                          cache=cache)
        loss, dout = _head_loss(out, y, task)
        grads, _ = nn.backward(params, cache, dout)
    else:
        raise ValueError("You entered an invalid model configuration.")
    nn.check_finite(loss, "loss")
    return float(loss), {name: grads[name] for name in params}


def predict(cfg, params, x, task):
    """Predictions in evaluation mode

    Returns
    -------
    pred : ndarray
        Class probabilities ``(batch, n_classes)`` for classification,
        normalized values ``(batch,)`` for regression. Packed ensembles
        average member probabilities (classification) or member values
        (regression).
    """
    _, forward = model_fun(cfg)
    out = forward(params, cfg, x, training=False)
    if isinstance(cfg, TabMPackedConfig):
        if task == "regression":
            return out.mean(axis=0)[:, 0]
        return softmax(out, axis=2).mean(axis=0)
    if task == "regression":
        return out[:, 0]
    return softmax(out, axis=1)


def make_model_config(kind, hparams, x_train, out_dim, n_num=0):
    """Configuration for model ``kind`` from a flat hyperparameter dict

    Parameters
    ----------
    kind : str
        One of ``mlp``, ``mlp_ple``, ``tabm_packed``.
    hparams : dict
        Hyperparameters: ``n_layers``, ``width``, ``dropout`` and, when
        relevant, ``k``, ``n_bins``, ``d_embedding``.
    x_train : ndarray (n_train, n_in)
        Encoded training features (raw numeric block first for
        ``mlp_ple``). Used for input sizes and bin edges.
    out_dim : int
        Number of outputs.
    n_num : int (optional)
        Number of numeric columns at the start of ``x_train``.

    Returns
    -------
    cfg : model configuration
        Configuration record.
    """
    if kind not in MODEL_KINDS:
        raise ValueError("You entered an invalid model kind.")
    in_dim = x_train.shape[1]
    if kind == "mlp_ple":
        ple = PLEConfig(n_bins=int(hparams["n_bins"]),
                        d_embedding=int(hparams["d_embedding"]))
        ple.edges = fit_ple_edges(x_train[:, :n_num], ple.n_bins)
        in_dim = n_num*ple.d_embedding + in_dim - n_num
    inner = MLPConfig(n_layers=int(hparams["n_layers"]),
                      width=int(hparams["width"]),
                      dropout=float(hparams.get("dropout", 0.0)),
                      in_dim=in_dim, out_dim=out_dim)
    if kind == "mlp":
        return inner
    elif kind == "mlp_ple":
        return MLPPLEConfig(inner=inner, ple=ple, n_num=n_num)
    return TabMPackedConfig(inner=inner, k=int(hparams.get("k", 16)))


if __name__ == "__main__":
    import doctest
    doctest.testmod()
