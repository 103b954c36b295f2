"""A small fully-connected embedding network and sibling cloning.

The network maps an input vector through ``len(hidden_dims)`` activated
affine layers and a final affine layer, then L2-normalizes the output, so
every embedding lies on the unit sphere.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigInvalid, DimMismatch, ShapeMismatch
from .numerics import normalize_rows, normalize_rows_backward

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dims: tuple = ()
    embedding_dim: int = 16
    activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ConfigInvalid("input_dim must be positive")
        if self.embedding_dim < 2:
            raise ConfigInvalid("embedding_dim must be at least 2")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigInvalid("hidden_dims must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigInvalid(f"activation must be one of {ACTIVATIONS}")
        if not 0 <= self.init_seed < 2**64:
            raise ConfigInvalid("init_seed must fit in an unsigned 64-bit integer")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.embedding_dim)


@dataclass
class EmbeddingModel:
    """Parameters of the network. ``weights[k]`` has shape ``(fan_in, fan_out)``."""

    config: ModelConfig
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def parameters(self):
        """Flat parameter list in layer order: ``[W0, b0, W1, b1, ...]``."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self):
        return EmbeddingModel(
            self.config,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
        )

    def equals(self, other):
        """Bitwise parameter and config equality."""
        if self.config != other.config:
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.parameters(), other.parameters())
        )

    @property
    def n_layers(self):
        return len(self.weights)


@dataclass
class ParamGrads:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def tensors(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def __add__(self, other):
        return ParamGrads(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre_activations: List[np.ndarray] = field(default_factory=list)
    activations: List[np.ndarray] = field(default_factory=list)
    raw_output: Optional[np.ndarray] = None
    norms: Optional[np.ndarray] = None
    single: bool = False


@dataclass
class SiblingPair:
    """Two same-architecture models: ``id_model`` embeds ID-document
    photos, ``selfie_model`` embeds live photos."""

    id_model: EmbeddingModel
    selfie_model: EmbeddingModel

    @property
    def shared(self):
        return self.id_model is self.selfie_model


def init_model(config: ModelConfig) -> EmbeddingModel:
    """Draw weights from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``; zero biases."""
    rng = np.random.default_rng(config.init_seed)
    dims = config.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return EmbeddingModel(config, weights, biases)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_backward(z, a, upstream, kind):
    if kind == "relu":
        return upstream * (z > 0)
    return upstream * (1.0 - a * a)


def forward(model: EmbeddingModel, x):
    """Embed ``x`` (one vector or a batch of rows).

    Returns:
        (embedding, cache): unit-norm embedding(s) with the same leading
        shape as ``x``, and the record that :func:`backward` needs.

    Raises:
        DimMismatch: if the input width differs from ``config.input_dim``.
        DegenerateNorm: if the raw network output has (near) zero norm.
    """
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.config.input_dim:
        raise DimMismatch(
            f"expected inputs of width {model.config.input_dim}, got shape {np.shape(x)}"
        )
    cache = ForwardCache(inputs=X, single=single)
    h = X
    last = model.n_layers - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        if k < last:
            h = _activate(z, model.config.activation)
            cache.pre_activations.append(z)
            cache.activations.append(h)
        else:
            h = z
    cache.raw_output = h
    emb, cache.norms = normalize_rows(h)
    return (emb[0] if single else emb), cache


def backward(model: EmbeddingModel, cache: ForwardCache, upstream_grad) -> ParamGrads:
    """Gradients of a scalar loss w.r.t. every weight and bias, given the
    loss gradient on the (normalized) embedding(s) from :func:`forward`."""
    G = np.asarray(upstream_grad, dtype=np.float64)
    if cache.single:
        G = G[None, :] if G.ndim == 1 else G
    if G.shape != cache.raw_output.shape:
        raise ShapeMismatch(
            f"upstream gradient shape {np.shape(upstream_grad)} does not match "
            f"embedding shape {cache.raw_output.shape}"
        )
    delta = normalize_rows_backward(cache.raw_output, cache.norms, G)
    n = model.n_layers
    dW: List[np.ndarray] = [None] * n
    db: List[np.ndarray] = [None] * n
    for k in range(n - 1, -1, -1):
        h_in = cache.inputs if k == 0 else cache.activations[k - 1]
        dW[k] = h_in.T @ delta
        db[k] = delta.sum(axis=0)
        if k > 0:
            da = delta @ model.weights[k].T
            delta = _activate_backward(
                cache.pre_activations[k - 1], cache.activations[k - 1], da,
                model.config.activation,
            )
    return ParamGrads(dW, db)


def clone_siblings(base: EmbeddingModel) -> SiblingPair:
    """Two independent deep copies of ``base`` with identical parameters."""
    return SiblingPair(copy.deepcopy(base), copy.deepcopy(base))


def shared_pair(base: EmbeddingModel) -> SiblingPair:
    """A pair whose two routes are one model (a single deep copy of ``base``)."""
    m = copy.deepcopy(base)
    return SiblingPair(m, m)


def embed(model: EmbeddingModel, X: Sequence) -> np.ndarray:
    """Embeddings only, for inference."""
    return forward(model, X)[0]
