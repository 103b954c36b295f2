"""Training objectives with analytic gradients.

* AM-Softmax: classification over cosine logits, with margin ``m``
  subtracted from the scaled true-class logit and a learnable scale.
* L2-Softmax: the same head with no margin and a fixed scale.
* MPS (max-margin pairwise score): a hinge on the hardest in-batch impostor
  score minus the genuine score, for batches of ID/selfie embedding pairs.

All losses consume unit-norm embeddings; the normalization itself belongs to
the model's forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import BatchTooSmall, ConfigInvalid, DimMismatch, LabelOutOfRange, TieAtKink
from .numerics import normalize_rows, normalize_rows_backward, numerical_gradient, relative_error

DEFAULT_AM_SCALE = 10.0
L2_SOFTMAX_SCALE = 16.0
KINK_TOL = 1e-6


@dataclass
class AMSoftmaxHead:
    """Classifier head. ``weights`` is ``(d, C)``; columns are normalized on use.

    The scale is stored as its logarithm so gradient steps keep it positive.
    """

    weights: np.ndarray
    log_scale: float = float(np.log(DEFAULT_AM_SCALE))
    margin: float = 0.0
    learn_scale: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise DimMismatch("head weights must be a (d, C) matrix")
        if self.margin < 0:
            raise ConfigInvalid("margin must be non-negative")
        if not np.all(np.isfinite(self.weights)):
            raise ConfigInvalid("head weights must be finite")

    @property
    def scale(self):
        return float(np.exp(self.log_scale))

    @property
    def num_classes(self):
        return self.weights.shape[1]

    @property
    def dim(self):
        return self.weights.shape[0]

    def copy(self):
        return AMSoftmaxHead(self.weights.copy(), self.log_scale, self.margin, self.learn_scale)


def make_am_head(dim, num_classes, margin=5.0, scale=DEFAULT_AM_SCALE, seed=0):
    """Fresh AM-Softmax head with Gaussian weights and a learnable scale."""
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((dim, num_classes)) / np.sqrt(dim)
    return AMSoftmaxHead(W, float(np.log(scale)), margin, learn_scale=True)


def make_l2_head(dim, num_classes, scale=L2_SOFTMAX_SCALE, seed=0):
    """Fresh L2-Softmax head: zero margin, fixed scale."""
    head = make_am_head(dim, num_classes, margin=0.0, scale=scale, seed=seed)
    head.learn_scale = False
    return head


@dataclass(frozen=True)
class MPSConfig:
    margin: float = 0.5

    def __post_init__(self):
        if not np.isfinite(self.margin) or self.margin < 0:
            raise ConfigInvalid("MPS margin must be finite and non-negative")


@dataclass
class HeadGrads:
    weights: np.ndarray
    log_scale: float

    def tensors(self):
        return [self.weights, np.array([self.log_scale])]


@dataclass
class LossOutput:
    value: float
    grads_on_embeddings: List[np.ndarray]
    head_grads: Optional[HeadGrads] = None


def _check_labels(labels, n, num_classes):
    y = np.asarray(labels)
    if y.shape != (n,):
        raise DimMismatch(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise LabelOutOfRange("labels must be integers")
    if n and (y.min() < 0 or y.max() >= num_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {num_classes})")
    return y.astype(np.intp)


def _as_batch(E, name):
    E = np.asarray(E, dtype=np.float64)
    if E.ndim == 1:
        E = E[None, :]
    if E.ndim != 2:
        raise DimMismatch(f"{name} must be a (n, d) array")
    return E


def am_softmax_forward(head: AMSoftmaxHead, embeddings, labels) -> LossOutput:
    """Batch-mean AM-Softmax loss and its gradients.

    Per sample the logits are ``s * cos_j`` with ``s * cos_y - m`` for the
    true class; the loss is the cross-entropy of those logits.
    """
    return _softmax_loss(head, embeddings, labels, head.margin, head.learn_scale)


def l2_softmax_forward(head: AMSoftmaxHead, embeddings, labels) -> LossOutput:
    """AM-Softmax with ``m = 0`` and the scale gradient pinned to zero."""
    if head.margin != 0:
        raise ConfigInvalid("L2-Softmax requires a zero-margin head")
    return _softmax_loss(head, embeddings, labels, 0.0, False)


def _softmax_loss(head, embeddings, labels, margin, learn_scale):
    E = _as_batch(embeddings, "embeddings")
    n, d = E.shape
    if d != head.dim:
        raise DimMismatch(f"embedding dim {d} does not match head dim {head.dim}")
    y = _check_labels(labels, n, head.num_classes)
    if n == 0:
        raise BatchTooSmall("empty batch")

    Wt, wnorms = normalize_rows(head.weights.T)  # (C, d), unit rows
    cos = E @ Wt.T
    s = head.scale
    rows = np.arange(n)
    logits = s * cos
    logits[rows, y] -= margin
    shift = logits.max(axis=1, keepdims=True)
    expz = np.exp(logits - shift)
    sumexp = expz.sum(axis=1)
    per_sample = np.log(sumexp) + shift[:, 0] - logits[rows, y]
    value = float(per_sample.mean())

    dlogits = expz / sumexp[:, None]
    dlogits[rows, y] -= 1.0
    dlogits /= n
    dcos = s * dlogits
    dE = dcos @ Wt
    dWt = normalize_rows_backward(head.weights.T, wnorms, dcos.T @ E)
    dlog_s = s * float(np.sum(dlogits * cos)) if learn_scale else 0.0
    return LossOutput(max(value, 0.0), [dE], HeadGrads(dWt.T.copy(), dlog_s))


def impostor_candidates(G, H):
    """Impostor scores per pair, shape ``(P, P, 2)``.

    ``[i, j, 0] = g_j . h_i`` and ``[i, j, 1] = g_i . h_j``; the ``j == i``
    entries are ``-inf``. Flattening row ``i`` gives the candidate order used
    for first-index tie-breaking.
    """
    S = G @ H.T  # S[i, j] = g_i . h_j
    P = S.shape[0]
    C = np.stack([S.T, S], axis=2)
    idx = np.arange(P)
    C[idx, idx, :] = -np.inf
    return S, C


def hardest_impostors(G, H):
    """Per pair: ``(scores, j, direction)`` of the highest-scoring impostor."""
    S, C = impostor_candidates(G, H)
    P = S.shape[0]
    flat = C.reshape(P, 2 * P)
    k = np.argmax(flat, axis=1)
    return flat[np.arange(P), k], k // 2, k % 2


def mps_forward(config: MPSConfig, id_embeddings, selfie_embeddings) -> LossOutput:
    """Max-margin pairwise score loss over ``P`` subjects.

    Pair ``i`` costs ``max(0, hardest_impostor_i - g_i.h_i + m')`` where the
    hardest impostor ranges over ``g_j.h_i`` and ``g_i.h_j`` for ``j != i``.
    The value is the mean over all ``P`` pairs.
    """
    G = _as_batch(id_embeddings, "id_embeddings")
    H = _as_batch(selfie_embeddings, "selfie_embeddings")
    if G.shape != H.shape:
        raise DimMismatch(f"id batch {G.shape} and selfie batch {H.shape} differ")
    P = G.shape[0]
    if P < 2:
        raise BatchTooSmall("MPS needs at least two subjects per batch")

    hard, j, direction = hardest_impostors(G, H)
    genuine = np.einsum("ij,ij->i", G, H)
    hinge = hard - genuine + config.margin
    active = hinge > 0
    value = float(np.where(active, hinge, 0.0).mean())

    dG = np.zeros_like(G)
    dH = np.zeros_like(H)
    w = 1.0 / P
    for i in np.flatnonzero(active):
        jj = j[i]
        if direction[i] == 0:  # g_j . h_i
            dG[jj] += w * H[i]
            dH[i] += w * G[jj]
        else:  # g_i . h_j
            dG[i] += w * H[jj]
            dH[jj] += w * G[i]
        dG[i] -= w * H[i]
        dH[i] -= w * G[i]
    return LossOutput(value, [dG, dH])


def mps_gradients_check(config: MPSConfig, id_features, selfie_features, step=1e-4):
    """Relative error between analytic MPS gradients on raw (pre-normalization)
    features and central finite differences.

    Raises:
        TieAtKink: if any pair that is active or near-active sits within
            ``1e-6`` of the hinge or has two impostor candidates within ``1e-6``.
    """
    U = _as_batch(id_features, "id_features")
    V = _as_batch(selfie_features, "selfie_features")
    G, gn = normalize_rows(U)
    H, hn = normalize_rows(V)
    if G.shape[0] < 2:
        raise BatchTooSmall("MPS needs at least two subjects per batch")

    _, C = impostor_candidates(G, H)
    P = G.shape[0]
    top2 = -np.sort(-C.reshape(P, 2 * P), axis=1)[:, :2]
    hinge = top2[:, 0] - np.einsum("ij,ij->i", G, H) + config.margin
    near = hinge > -KINK_TOL
    if np.any(np.abs(hinge) < KINK_TOL):
        raise TieAtKink("a pair sits on the hinge boundary")
    if np.any(near & (top2[:, 0] - top2[:, 1] < KINK_TOL)):
        raise TieAtKink("top-2 impostor scores tie for an active pair")

    out = mps_forward(config, G, H)
    dU = normalize_rows_backward(U, gn, out.grads_on_embeddings[0])
    dV = normalize_rows_backward(V, hn, out.grads_on_embeddings[1])

    def loss_u(u):
        return mps_forward(config, normalize_rows(u)[0], H).value

    def loss_v(v):
        return mps_forward(config, G, normalize_rows(v)[0]).value

    num_u = numerical_gradient(loss_u, U, step)
    num_v = numerical_gradient(loss_v, V, step)
    return max(relative_error(dU, num_u), relative_error(dV, num_v))
