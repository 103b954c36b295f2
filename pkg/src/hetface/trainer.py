"""SGD with momentum, batch samplers and the two training stages.

Stage 1 (:func:`pretrain`) fits a base model on labeled source data with a
margin softmax head. Stage 2 (:func:`finetune`) copies the base model into an
ID branch and a selfie branch and trains them on ID/selfie pairs, with MPS or
one of the softmax losses.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from .datasets import LabeledDataset, PairDataset
from .errors import (ConfigInvalid, EmptyDataset, OddBatch, ShapeMismatch,
                     StepOutOfRange, TooFewSubjects)
from .losses import (DEFAULT_AM_SCALE, AMSoftmaxHead, MPSConfig, am_softmax_forward, l2_softmax_forward,
                     make_am_head, make_l2_head, mps_forward)
from .model import EmbeddingModel, SiblingPair, backward, clone_siblings, forward, shared_pair

logger = logging.getLogger(__name__)

LOSSES = ("mps", "am_softmax", "l2_softmax")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    total_steps: int = 500
    lr_schedule: Tuple[Tuple[int, float], ...] = ((0, 0.1),)
    momentum: float = 0.9
    weight_decay: float = 5e-4
    rng_seed: int = 0
    log_every: int = 10
    freeze_layers: int = 0
    scale_lr_mult: float = 0.01
    warmup_steps: int = 0

    def __post_init__(self):
        sched = tuple((int(s), float(lr)) for s, lr in self.lr_schedule)
        object.__setattr__(self, "lr_schedule", sched)
        if self.batch_size < 1:
            raise ConfigInvalid("batch_size must be positive")
        if self.total_steps < 0:
            raise ConfigInvalid("total_steps must be non-negative")
        if not sched or sched[0][0] != 0:
            raise ConfigInvalid("lr_schedule must start at step 0")
        if any(b[0] <= a[0] for a, b in zip(sched, sched[1:])):
            raise ConfigInvalid("lr_schedule thresholds must be strictly increasing")
        if not 0 <= self.momentum < 1:
            raise ConfigInvalid("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigInvalid("weight_decay must be non-negative")
        if self.warmup_steps < 0:
            raise ConfigInvalid("warmup_steps must be non-negative")
        if self.scale_lr_mult < 0:
            raise ConfigInvalid("scale_lr_mult must be non-negative")
        if self.log_every < 1:
            raise ConfigInvalid("log_every must be positive")


# Settings used for the full-size face models: 280K pretraining steps and
# 800 fine-tuning steps, both at batch size 256.
FULL_STAGE1 = TrainConfig(
    batch_size=256, total_steps=280_000,
    lr_schedule=((0, 0.1), (160_000, 0.01), (240_000, 0.001)),
    momentum=0.9, weight_decay=5e-4, log_every=1000,
)
FULL_STAGE2 = TrainConfig(
    batch_size=256, total_steps=800,
    lr_schedule=((0, 0.01), (500, 0.001)),
    momentum=0.9, weight_decay=5e-4, log_every=10,
)
DEFAULT_AM_MARGIN = 5.0
DEFAULT_MPS_MARGIN = 0.5
PRESETS = {"full-stage1": FULL_STAGE1, "full-stage2": FULL_STAGE2}


@dataclass
class OptimizerState:
    velocity: List[np.ndarray]
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params])


@dataclass
class LossTrace:
    """Loss values averaged over each logging window."""

    steps: List[int] = field(default_factory=list)
    lrs: List[float] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    raw: List[float] = field(default_factory=list)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "lr", "loss"])
        for s, lr, v in zip(self.steps, self.lrs, self.losses):
            w.writerow([s, repr(lr), repr(v)])
        return buf.getvalue()


def lr_at(config: TrainConfig, step: int) -> float:
    """Learning rate of the last schedule entry whose threshold is ``<= step``."""
    if not 0 <= step < config.total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {config.total_steps})")
    lr = config.lr_schedule[0][1]
    for threshold, value in config.lr_schedule:
        if threshold > step:
            break
        lr = value
    return lr


def sgd_step(params, grads, state: OptimizerState, lr, momentum, weight_decay):
    """In-place momentum SGD: ``v = mu*v + g + wd*p``; ``p -= lr*v``.

    ``params`` entries must be float arrays (updated in place); returns
    ``(params, state)`` for convenience.
    """
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise ShapeMismatch("params, grads and velocity lists differ in length")
    for p, g, v in zip(params, grads, state.velocity):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(v):
            raise ShapeMismatch(f"shape mismatch {np.shape(p)} / {np.shape(g)} / {np.shape(v)}")
    for p, g, v in zip(params, grads, state.velocity):
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * p
        p -= lr * v
    state.step_count += 1
    return params, state


def sample_class_batch(dataset: LabeledDataset, batch_size, rng):
    """Uniform draw with replacement; returns ``(inputs, labels)``."""
    if len(dataset) == 0:
        raise EmptyDataset("cannot sample from an empty dataset")
    idx = rng.integers(0, len(dataset), size=batch_size)
    return dataset.inputs[idx], dataset.labels[idx]


def sample_pair_batch(dataset: PairDataset, batch_size, rng):
    """``batch_size // 2`` distinct subjects, each with its ID input and one
    uniformly chosen selfie. Returns ``(id_inputs, selfie_inputs, subject_ids)``."""
    if batch_size % 2:
        raise OddBatch(f"pair batch size must be even, got {batch_size}")
    half = batch_size // 2
    if half < 2:
        raise TooFewSubjects("a pair batch needs at least two subjects")
    if len(dataset) < half:
        raise TooFewSubjects(f"need {half} subjects, dataset has {len(dataset)}")
    subjects = rng.choice(len(dataset), size=half, replace=False)
    selfies = np.empty((half, dataset.input_dim))
    for r, i in enumerate(subjects):
        options = dataset.selfie_inputs[i]
        selfies[r] = options[rng.integers(0, options.shape[0])]
    return dataset.id_inputs[subjects], selfies, dataset.subject_ids[subjects]


def _record(trace, window, step, lr, every):
    if (step + 1) % every == 0:
        trace.steps.append(step + 1)
        trace.lrs.append(lr)
        trace.losses.append(float(np.mean(window)))
        window.clear()


class _ScaleParam:
    """Momentum SGD on a head's log-scale, without weight decay."""

    def __init__(self, head):
        self.head = head
        self.box = np.array([head.log_scale])
        self.state = OptimizerState.zeros_like([self.box])

    def step(self, grad, lr, momentum):
        if not self.head.learn_scale:
            return
        sgd_step([self.box], [np.array([grad])], self.state, lr, momentum, 0.0)
        self.head.log_scale = float(self.box[0])


def _frozen_indices(n_models, per_model, freeze_layers):
    # each model's tensors are laid out [W0, b0, W1, b1, ...]
    k = min(2 * freeze_layers, per_model)
    return {m * per_model + i for m in range(n_models) for i in range(k)}


def _update(params, grads, state, frozen, lr, momentum, weight_decay):
    """sgd_step over the tensors not in ``frozen``; frozen tensors (and their
    velocity) are left exactly as they are, weight decay included."""
    keep = [i for i in range(len(params)) if i not in frozen]
    sub = OptimizerState([state.velocity[i] for i in keep], state.step_count)
    sgd_step([params[i] for i in keep], [grads[i] for i in keep], sub, lr, momentum,
             weight_decay)
    state.step_count = sub.step_count


def pretrain(model: EmbeddingModel, head: AMSoftmaxHead, dataset: LabeledDataset,
             config: TrainConfig):
    """Train ``model`` and ``head`` jointly with AM-Softmax on source data.

    Works on copies; the caller's objects are untouched. Returns
    ``(model, head, trace)``.
    """
    if head.num_classes != dataset.num_classes:
        raise ConfigInvalid("head classes do not match the dataset")
    model = model.copy()
    head = head.copy()
    trace = LossTrace()
    rng = np.random.default_rng(config.rng_seed)
    loss_fn = am_softmax_forward if head.learn_scale else l2_softmax_forward
    params = model.parameters() + [head.weights]
    state = OptimizerState.zeros_like(params)
    scale = _ScaleParam(head)
    frozen = _frozen_indices(1, 2 * model.n_layers, config.freeze_layers)
    window = []
    for step in range(config.total_steps):
        lr = lr_at(config, step)
        X, y = sample_class_batch(dataset, config.batch_size, rng)
        emb, cache = forward(model, X)
        out = loss_fn(head, emb, y)
        grads = backward(model, cache, out.grads_on_embeddings[0]).tensors()
        grads.append(out.head_grads.weights)
        _update(params, grads, state, frozen, lr, config.momentum, config.weight_decay)
        scale.step(out.head_grads.log_scale, lr * config.scale_lr_mult, config.momentum)
        trace.raw.append(out.value)
        window.append(out.value)
        _record(trace, window, step, lr, config.log_every)
    return model, head, trace


def imprint_weights(pair: SiblingPair, dataset: PairDataset) -> np.ndarray:
    """Class vectors set to each subject's normalized mean embedding: the ID
    image through the ID model plus its selfies through the selfie model."""
    G = forward(pair.id_model, dataset.id_inputs)[0]
    cols = []
    for i, sel in enumerate(dataset.selfie_inputs):
        H = forward(pair.selfie_model, sel)[0]
        cols.append((G[i] + H.sum(axis=0)) / (1 + H.shape[0]))
    W = np.array(cols).T
    return W / np.linalg.norm(W, axis=0, keepdims=True)


def finetune(base: EmbeddingModel, dataset: PairDataset, config: TrainConfig,
             mps: Optional[MPSConfig] = None, share_weights: bool = False,
             loss: str = "mps", head: Optional[AMSoftmaxHead] = None,
             head_init: str = "random", head_scale: Optional[float] = None):
    """Transfer ``base`` into an ID/selfie model pair and train it on pairs.

    With ``share_weights`` the two routes are one model. ``loss`` selects the
    objective: ``"mps"`` (default) or one of the softmax baselines, which
    classify subjects with a head over the training subjects (both images of
    a pair share a label). Unless a ``head`` is given, its class vectors are
    drawn at random (``head_init="random"``) or imprinted from the
    transferred model's embeddings (``"imprint"``); an AM-Softmax head starts
    at ``head_scale`` (pass the scale learned in pretraining). With
    ``config.warmup_steps`` the backbone stays frozen while the new head
    trains. Returns ``(SiblingPair, trace)``.
    """
    if loss not in LOSSES:
        raise ConfigInvalid(f"loss must be one of {LOSSES}")
    if head_init not in ("imprint", "random"):
        raise ConfigInvalid("head_init must be 'imprint' or 'random'")
    mps = mps or MPSConfig(DEFAULT_MPS_MARGIN)
    pair = shared_pair(base) if share_weights else clone_siblings(base)
    trace = LossTrace()
    if config.total_steps == 0:
        return pair, trace

    rng = np.random.default_rng(config.rng_seed)
    models = [pair.id_model] if share_weights else [pair.id_model, pair.selfie_model]
    params = [p for m in models for p in m.parameters()]

    if loss != "mps":
        if head is None:
            dim = base.config.embedding_dim
            seed = config.rng_seed + 1
            if loss == "am_softmax":
                head = make_am_head(dim, len(dataset), DEFAULT_AM_MARGIN,
                                    head_scale or DEFAULT_AM_SCALE, seed=seed)
            else:
                head = make_l2_head(dim, len(dataset), seed=seed)
            if head_init == "imprint":
                head.weights = imprint_weights(pair, dataset)
        head = head.copy()
        if head.num_classes != len(dataset):
            raise ConfigInvalid("head classes must equal the number of training subjects")
        params.append(head.weights)
        scale = _ScaleParam(head)
        loss_fn = l2_softmax_forward if loss == "l2_softmax" else am_softmax_forward
        # subject ids -> head class index
        class_of = {int(s): i for i, s in enumerate(dataset.subject_ids)}

    state = OptimizerState.zeros_like(params)
    per_model = 2 * base.n_layers
    fixed_frozen = _frozen_indices(len(models), per_model, config.freeze_layers)
    warm_frozen = _frozen_indices(len(models), per_model, base.n_layers)
    window = []
    for step in range(config.total_steps):
        lr = lr_at(config, step)
        X_id, X_sf, sids = sample_pair_batch(dataset, config.batch_size, rng)
        g, cache_g = forward(pair.id_model, X_id)
        h, cache_h = forward(pair.selfie_model, X_sf)
        if loss == "mps":
            out = mps_forward(mps, g, h)
            dg, dh = out.grads_on_embeddings
            extra = []
        else:
            labels = np.array([class_of[int(s)] for s in sids])
            out = loss_fn(head, np.vstack([g, h]), np.concatenate([labels, labels]))
            dE = out.grads_on_embeddings[0]
            dg, dh = dE[: len(g)], dE[len(g):]
            extra = [out.head_grads.weights]
        gr_id = backward(pair.id_model, cache_g, dg)
        gr_sf = backward(pair.selfie_model, cache_h, dh)
        if share_weights:
            grads = (gr_id + gr_sf).tensors()
        else:
            grads = gr_id.tensors() + gr_sf.tensors()
        grads += extra
        frozen = warm_frozen if step < config.warmup_steps and loss != "mps" else fixed_frozen
        _update(params, grads, state, frozen, lr, config.momentum, config.weight_decay)
        if loss != "mps":
            scale.step(out.head_grads.log_scale, lr * config.scale_lr_mult, config.momentum)
        trace.raw.append(out.value)
        window.append(out.value)
        _record(trace, window, step, lr, config.log_every)
    logger.debug("finetune finished: %d steps, final window loss %s", config.total_steps,
                 trace.losses[-1] if trace.losses else None)
    return pair, trace


def with_overrides(config: TrainConfig, **changes) -> TrainConfig:
    return replace(config, **changes)
