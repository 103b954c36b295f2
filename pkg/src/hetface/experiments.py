"""Desk-scale experiment recipes on synthetic data.

A benchmark is a labeled source dataset for pretraining plus an ID/selfie
pair dataset whose two domains are perturbed copies of the source domain.
The recipes here run the loss/architecture ablation, the training-set size
sweep and the cross-dataset check on such a benchmark.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .datasets import LabeledDataset, PairDataset
from .evaluation import EvalReport, cross_validate, evaluate
from .losses import AMSoftmaxHead, MPSConfig, make_am_head
from .model import EmbeddingModel, ModelConfig, clone_siblings, init_model
from .synthdata import (SynthConfig, domain_transforms, gen_pair_dataset, gen_source_dataset,
                        random_orthonormal)
from .trainer import DEFAULT_AM_MARGIN, DEFAULT_MPS_MARGIN, TrainConfig, finetune, pretrain

logger = logging.getLogger(__name__)

ABLATION_ROWS = ("FS", "BM", "TL-L2", "TL-AM", "TL-MPS-shared", "TL-MPS-sibling")
SIZE_STEPS = (25, 50, 100, 160)


@dataclass(frozen=True)
class BenchmarkConfig:
    """Everything that defines one synthetic benchmark run."""

    seed: int = 0
    num_subjects: int = 200
    num_classes: int = 200
    samples_per_class: int = 20
    input_dim: int = 48
    latent_dim: int = 16
    nuisance_dim: int = 8
    nuisance_scale: float = 0.3
    noise_sigma_id: float = 0.15
    noise_sigma_selfie: float = 0.05
    noise_sigma_source: float = 0.05
    id_shift: float = 0.7
    selfie_shift: float = 0.7
    hidden_dims: Tuple[int, ...] = (64,)
    activation: str = "relu"
    pretrain_batch: int = 128
    pretrain_steps: int = 3000
    pretrain_lr: float = 0.1
    finetune_batch: int = 64
    finetune_steps: int = 800
    finetune_lr: float = 0.01
    finetune_lr_drop: int = 500
    softmax_warmup: int = 100
    am_margin: float = DEFAULT_AM_MARGIN
    mps_margin: float = DEFAULT_MPS_MARGIN
    folds: int = 5
    far_targets: Tuple[float, ...] = (0.001, 0.01)

    def to_dict(self):
        return asdict(self)


@dataclass
class Benchmark:
    config: BenchmarkConfig
    synth: SynthConfig
    source: LabeledDataset
    pairs: PairDataset


@dataclass
class PretrainResult:
    init: EmbeddingModel
    base: EmbeddingModel
    head: AMSoftmaxHead


def synth_config(cfg: BenchmarkConfig) -> SynthConfig:
    A, T_id, T_sf = domain_transforms(cfg.input_dim, cfg.latent_dim, cfg.id_shift,
                                      cfg.selfie_shift, cfg.seed)
    nuisance = random_orthonormal(cfg.input_dim, cfg.nuisance_dim,
                                  np.random.default_rng([cfg.seed, 9]))
    return SynthConfig(
        num_subjects=cfg.num_subjects, latent_dim=cfg.latent_dim, input_dim=cfg.input_dim,
        num_classes=cfg.num_classes, samples_per_class=cfg.samples_per_class,
        id_domain_transform=T_id, selfie_domain_transform=T_sf, source_transform=A,
        nuisance_basis=nuisance, nuisance_scale=cfg.nuisance_scale,
        noise_sigma_id=cfg.noise_sigma_id, noise_sigma_selfie=cfg.noise_sigma_selfie,
        noise_sigma_source=cfg.noise_sigma_source, rng_seed=cfg.seed)


def build_benchmark(cfg: BenchmarkConfig) -> Benchmark:
    synth = synth_config(cfg)
    return Benchmark(cfg, synth, gen_source_dataset(synth), gen_pair_dataset(synth))


def pretrain_config(cfg: BenchmarkConfig) -> TrainConfig:
    # same shape as the full-size schedule: drops at 4/7 and 6/7 of the run
    n = cfg.pretrain_steps
    lr = cfg.pretrain_lr
    return TrainConfig(batch_size=cfg.pretrain_batch, total_steps=n,
                       lr_schedule=((0, lr), (4 * n // 7, lr / 10), (6 * n // 7, lr / 100)),
                       rng_seed=cfg.seed, log_every=100)


def finetune_config(cfg: BenchmarkConfig, warmup: int = 0) -> TrainConfig:
    return TrainConfig(batch_size=cfg.finetune_batch, total_steps=cfg.finetune_steps,
                       lr_schedule=((0, cfg.finetune_lr),
                                    (cfg.finetune_lr_drop, cfg.finetune_lr / 10)),
                       rng_seed=cfg.seed, warmup_steps=warmup)


def model_config(cfg: BenchmarkConfig) -> ModelConfig:
    return ModelConfig(cfg.input_dim, tuple(cfg.hidden_dims), cfg.latent_dim,
                       cfg.activation, cfg.seed)


def pretrain_base(bench: Benchmark) -> PretrainResult:
    cfg = bench.config
    init = init_model(model_config(cfg))
    head = make_am_head(cfg.latent_dim, cfg.num_classes, margin=cfg.am_margin, seed=cfg.seed)
    base, head, trace = pretrain(init, head, bench.source, pretrain_config(cfg))
    logger.info("pretrain: loss %.4f -> %.4f, scale %.2f", trace.losses[0], trace.losses[-1],
                head.scale)
    return PretrainResult(init, base, head)


def ablation(bench: Benchmark, pre: Optional[PretrainResult] = None) -> Dict[str, EvalReport]:
    """Cross-validated VR for each ablation row.

    FS trains the sibling MPS setup from random initialization; BM is the
    pretrained model without fine-tuning; the TL rows fine-tune the
    pretrained model with each loss, with shared or sibling weights.
    """
    cfg = bench.config
    pre = pre or pretrain_base(bench)
    ft = finetune_config(cfg)
    ft_softmax = finetune_config(cfg, warmup=cfg.softmax_warmup)
    mps = MPSConfig(cfg.mps_margin)
    runs = {
        "FS": (pre.init, ft, {}),
        "BM": (pre.base, replace(ft, total_steps=0), {}),
        "TL-L2": (pre.base, ft_softmax, dict(loss="l2_softmax")),
        "TL-AM": (pre.base, ft_softmax, dict(loss="am_softmax", head_scale=pre.head.scale)),
        "TL-MPS-shared": (pre.base, ft, dict(share_weights=True)),
        "TL-MPS-sibling": (pre.base, ft, {}),
    }
    out = {}
    for name, (model, train_cfg, kw) in runs.items():
        out[name] = cross_validate(bench.pairs, model, train_cfg, mps, cfg.folds,
                                   cfg.far_targets, **kw)
        logger.info("%s: %s", name, out[name].fold_stats)
    return out


def size_sweep(bench: Benchmark, sizes: Sequence[int] = SIZE_STEPS,
               pre: Optional[PretrainResult] = None) -> Dict[int, EvalReport]:
    """Sibling MPS fine-tuning on random training subsets of each size.

    A subset smaller than half the batch size trains on batches holding
    every one of its subjects.
    """
    cfg = bench.config
    pre = pre or pretrain_base(bench)
    ft = finetune_config(cfg)
    return {n: cross_validate(bench.pairs, pre.base,
                              replace(ft, batch_size=min(ft.batch_size, 2 * n)),
                              MPSConfig(cfg.mps_margin), cfg.folds, cfg.far_targets,
                              train_size=n)
            for n in sizes}


def second_dataset(bench: Benchmark, drift: float = 0.5, seed_offset: int = 1000,
                   selfies: Tuple[int, int] = (1, 4)) -> PairDataset:
    """Fresh subjects whose ID and selfie domains drift away from the
    benchmark's, with different noise levels and several selfies each."""
    cfg, synth = bench.config, bench.synth
    rng = np.random.default_rng([cfg.seed, seed_offset])

    def drifted(T):
        D = T + drift * random_orthonormal(cfg.input_dim, cfg.latent_dim, rng)
        return D * (np.linalg.norm(T) / np.linalg.norm(D))

    other = replace(synth, id_domain_transform=drifted(synth.id_domain_transform),
                    selfie_domain_transform=drifted(synth.selfie_domain_transform),
                    noise_sigma_id=1.5 * synth.noise_sigma_id,
                    noise_sigma_selfie=2.0 * synth.noise_sigma_selfie,
                    selfies_per_subject=selfies, latent_pool=1,
                    rng_seed=cfg.seed + seed_offset)
    return gen_pair_dataset(other)


def cross_dataset(bench: Benchmark, pre: Optional[PretrainResult] = None,
                  other: Optional[PairDataset] = None) -> Dict[str, EvalReport]:
    """Base model versus the sibling pair fine-tuned on every benchmark
    subject, both evaluated on the second dataset with selfie fusion."""
    cfg = bench.config
    pre = pre or pretrain_base(bench)
    other = other if other is not None else second_dataset(bench)
    tuned, _ = finetune(pre.base, bench.pairs, finetune_config(cfg),
                        MPSConfig(cfg.mps_margin))
    return {
        "BM": evaluate(other, clone_siblings(pre.base), cfg.far_targets),
        "TL-MPS-sibling": evaluate(other, tuned, cfg.far_targets),
    }
