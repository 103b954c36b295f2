"""JSON experiment configuration for the command line.

A config file is a JSON object with these sections, all optional::

    {
      "data":     {benchmark data keys, see DATA_KEYS},
      "model":    {"hidden_dims": [64], "embedding_dim": 16, "activation": "relu",
                   "init_seed": 0},
      "pretrain": {"preset": "full-stage1", training keys..., "margin": 5.0},
      "finetune": {"preset": "full-stage2", training keys..., "loss": "mps",
                   "shared": false, "mps_margin": 0.5, "train_size": null,
                   "head_init": "random"},
      "eval":     {"folds": 5, "far_targets": [0.0001, 0.001, 0.01], "roc_points": 200},
      "output_dir": "out"
    }

Training keys are the :class:`~hetface.trainer.TrainConfig` fields. A
``preset`` names a full set of training settings; any other key in the same
section overrides it. Unknown keys anywhere are an error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

from .errors import ConfigInvalid, IoFailure
from .experiments import BenchmarkConfig
from .trainer import LOSSES, DEFAULT_AM_MARGIN, DEFAULT_MPS_MARGIN, PRESETS, TrainConfig

TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))
DATA_KEYS = ("seed", "num_subjects", "num_classes", "samples_per_class", "input_dim",
             "latent_dim", "nuisance_dim", "nuisance_scale", "noise_sigma_id",
             "noise_sigma_selfie", "noise_sigma_source", "id_shift", "selfie_shift",
             "cross_drift", "cross_selfies")
MODEL_KEYS = ("hidden_dims", "embedding_dim", "activation", "init_seed")
EVAL_KEYS = ("folds", "far_targets", "roc_points")

# desk-scale defaults: small enough for a toy run in seconds
DESK_PRETRAIN = TrainConfig(batch_size=128, total_steps=500,
                            lr_schedule=((0, 0.1), (285, 0.01), (428, 0.001)), log_every=10)
DESK_FINETUNE = TrainConfig(batch_size=64, total_steps=200,
                            lr_schedule=((0, 0.01), (125, 0.001)), log_every=10)


@dataclass
class DataSection:
    bench: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    cross_drift: float = 0.5
    cross_selfies: Tuple[int, int] = (1, 4)


@dataclass
class ModelSection:
    hidden_dims: Tuple[int, ...] = (64,)
    embedding_dim: int = 16
    activation: str = "relu"
    init_seed: int = 0


@dataclass
class PretrainSection:
    train: TrainConfig = DESK_PRETRAIN
    margin: float = DEFAULT_AM_MARGIN


@dataclass
class FinetuneSection:
    train: TrainConfig = DESK_FINETUNE
    loss: str = "mps"
    shared: bool = False
    mps_margin: float = DEFAULT_MPS_MARGIN
    train_size: Optional[int] = None
    head_init: str = "random"


@dataclass
class EvalSection:
    folds: int = 5
    far_targets: Tuple[float, ...] = (0.0001, 0.001, 0.01)
    roc_points: int = 200


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output_dir: Path = Path("out")


def _check_keys(section, obj, allowed):
    if not isinstance(obj, dict):
        raise ConfigInvalid(f"section '{section}' must be an object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigInvalid(f"unknown key(s) in '{section}': {', '.join(unknown)}")


def _train_section(name, obj, default, extra):
    _check_keys(name, obj, TRAIN_KEYS + extra + ("preset",))
    base = default
    if "preset" in obj:
        if obj["preset"] not in PRESETS:
            raise ConfigInvalid(f"unknown preset {obj['preset']!r}; choose from {sorted(PRESETS)}")
        base = PRESETS[obj["preset"]]
    overrides = {k: v for k, v in obj.items() if k in TRAIN_KEYS}
    if "lr_schedule" in overrides:
        overrides["lr_schedule"] = tuple(tuple(e) for e in overrides["lr_schedule"])
    try:
        return replace(base, **overrides)
    except TypeError as exc:
        raise ConfigInvalid(f"bad value in '{name}': {exc}") from exc


def parse_config(obj) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a decoded JSON object."""
    _check_keys("config", obj, ("data", "model", "pretrain", "finetune", "eval", "output_dir"))
    cfg = ExperimentConfig()

    data = obj.get("data", {})
    _check_keys("data", data, DATA_KEYS)
    bench_keys = {k: v for k, v in data.items() if not k.startswith("cross_")}
    cfg.data = DataSection(replace(BenchmarkConfig(), **bench_keys),
                           float(data.get("cross_drift", 0.5)),
                           tuple(data.get("cross_selfies", (1, 4))))

    model = obj.get("model", {})
    _check_keys("model", model, MODEL_KEYS)
    cfg.model = replace(ModelSection(), **model)
    cfg.model.hidden_dims = tuple(cfg.model.hidden_dims)

    pre = obj.get("pretrain", {})
    cfg.pretrain = PretrainSection(_train_section("pretrain", pre, DESK_PRETRAIN, ("margin",)),
                                   float(pre.get("margin", DEFAULT_AM_MARGIN)))

    ft = obj.get("finetune", {})
    extra = ("loss", "shared", "mps_margin", "train_size", "head_init")
    cfg.finetune = FinetuneSection(_train_section("finetune", ft, DESK_FINETUNE, extra),
                                   **{k: ft[k] for k in extra if k in ft})
    if cfg.finetune.loss not in LOSSES:
        raise ConfigInvalid(f"finetune.loss must be one of {LOSSES}")

    ev = obj.get("eval", {})
    _check_keys("eval", ev, EVAL_KEYS)
    cfg.eval = replace(EvalSection(), **ev)
    cfg.eval.far_targets = tuple(float(f) for f in cfg.eval.far_targets)
    if not all(0 < f <= 1 for f in cfg.eval.far_targets) or not cfg.eval.far_targets:
        raise ConfigInvalid("eval.far_targets must be non-empty and lie in (0, 1]")

    if "output_dir" in obj:
        cfg.output_dir = Path(obj["output_dir"])
    return cfg


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(obj)
