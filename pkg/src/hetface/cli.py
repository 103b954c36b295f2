"""Command-line pipeline: gen-data, pretrain, finetune, crossval, eval,
plus ``experiment`` for the benchmark recipes.

Every command reads an optional JSON config (``--config``, documented in
:mod:`hetface.config`) and writes into the config's ``output_dir`` (or
``--out``). File names inside the output directory::

    source.hvd, pairs.hvd, cross.hvd        gen-data
    base.ckpt, base_head.json,
    pretrain_loss.csv                       pretrain
    id.ckpt, selfie.ckpt, finetune_loss.csv finetune
    crossval_report.txt, crossval_roc.csv   crossval
    eval_report.txt, eval_roc.csv           eval
    experiment_<name>.txt                   experiment

All outputs are written atomically, and each command is a deterministic
function of its config and inputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .datasets import LabeledDataset, PairDataset
from .errors import ConfigInvalid, HetFaceError
from .evaluation import cross_validate, evaluate, format_table
from .experiments import (Benchmark, ablation, build_benchmark, cross_dataset, second_dataset,
                          size_sweep)
from .fileio import atomic_write
from .losses import MPSConfig, make_am_head
from .model import ModelConfig, SiblingPair, init_model
from .synthdata import load_dataset, save_dataset
from .trainer import LOSSES, finetune, pretrain

logger = logging.getLogger("hetface")


def _out_dir(cfg: ExperimentConfig, args) -> Path:
    out = Path(args.out) if args.out else cfg.output_dir
    if not out.is_dir():
        raise ConfigInvalid(f"output directory {out} does not exist")
    return out


def _input(path, default, what):
    p = Path(path) if path else default
    if not p.is_file():
        raise ConfigInvalid(f"{what} file {p} does not exist")
    return p


def _load(path, kind, what):
    ds = load_dataset(path)
    if not isinstance(ds, kind):
        raise ConfigInvalid(f"{path} is not a {what} dataset")
    return ds


def _finetune_settings(cfg: ExperimentConfig, args):
    ft = cfg.finetune
    loss = args.loss or ft.loss
    shared = args.shared or ft.shared
    train_size = args.train_size if args.train_size is not None else ft.train_size
    train = ft.train
    if getattr(args, "steps", None) is not None:
        train = replace(train, total_steps=args.steps)
    return loss, shared, train_size, train


def _head_scale(base_path):
    sidecar = Path(base_path).with_name(Path(base_path).stem + "_head.json")
    if sidecar.is_file():
        return float(json.loads(sidecar.read_text())["scale"])
    return None


# -- commands ----------------------------------------------------------------

def cmd_gen_data(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    bench = build_benchmark(cfg.data.bench)
    cross = second_dataset(bench, cfg.data.cross_drift, selfies=cfg.data.cross_selfies)
    save_dataset(bench.source, out / "source.hvd")
    save_dataset(bench.pairs, out / "pairs.hvd")
    save_dataset(cross, out / "cross.hvd")
    print(f"source: {bench.source.num_classes} classes, {len(bench.source)} samples")
    print(f"pairs: {len(bench.pairs)} subjects, "
          f"{sum(s.shape[0] for s in bench.pairs.selfie_inputs)} selfies")
    print(f"cross: {len(cross)} subjects, {sum(s.shape[0] for s in cross.selfie_inputs)} selfies")
    return 0


def cmd_pretrain(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    source = _load(_input(args.source, out / "source.hvd", "source dataset"), LabeledDataset,
                   "labeled")
    m = cfg.model
    model = init_model(ModelConfig(source.input_dim, m.hidden_dims, m.embedding_dim,
                                   m.activation, m.init_seed))
    head = make_am_head(m.embedding_dim, source.num_classes, cfg.pretrain.margin,
                        seed=m.init_seed)
    base, head, trace = pretrain(model, head, source, cfg.pretrain.train)
    save_checkpoint(base, out / "base.ckpt")
    atomic_write(out / "base_head.json",
                 json.dumps({"scale": head.scale, "margin": head.margin}, sort_keys=True) + "\n")
    atomic_write(out / "pretrain_loss.csv", trace.to_csv())
    last = trace.losses[-1] if trace.losses else float("nan")
    print(f"pretrained {cfg.pretrain.train.total_steps} steps, final loss {last:.6f}, "
          f"scale {head.scale:.4f}")
    return 0


def cmd_finetune(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    base_path = _input(args.base, out / "base.ckpt", "base checkpoint")
    pairs = _load(_input(args.pairs, out / "pairs.hvd", "pair dataset"), PairDataset, "pair")
    loss, shared, train_size, train = _finetune_settings(cfg, args)
    if train_size is not None:
        if not 2 <= train_size <= len(pairs):
            raise ConfigInvalid(f"train size {train_size} outside [2, {len(pairs)}]")
        rng = np.random.default_rng([train.rng_seed, 1])
        pairs = pairs.subset(np.sort(rng.permutation(len(pairs))[:train_size]))
    siblings, trace = finetune(load_checkpoint(base_path), pairs, train,
                               MPSConfig(cfg.finetune.mps_margin), share_weights=shared,
                               loss=loss, head_init=cfg.finetune.head_init,
                               head_scale=_head_scale(base_path))
    save_checkpoint(siblings.id_model, out / "id.ckpt")
    save_checkpoint(siblings.selfie_model, out / "selfie.ckpt")
    atomic_write(out / "finetune_loss.csv", trace.to_csv())
    print(f"fine-tuned on {len(pairs)} subjects with {loss}"
          f"{' (shared weights)' if shared else ''}, {train.total_steps} steps")
    return 0


def cmd_crossval(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    pairs = _load(_input(args.pairs, out / "pairs.hvd", "pair dataset"), PairDataset, "pair")
    if args.scratch:
        m = cfg.model
        base = init_model(ModelConfig(pairs.input_dim, m.hidden_dims, m.embedding_dim,
                                      m.activation, m.init_seed))
        scale = None
    else:
        base_path = _input(args.base, out / "base.ckpt", "base checkpoint")
        base, scale = load_checkpoint(base_path), _head_scale(base_path)
    loss, shared, train_size, train = _finetune_settings(cfg, args)
    rep = cross_validate(pairs, base, train, MPSConfig(cfg.finetune.mps_margin),
                         cfg.eval.folds, cfg.eval.far_targets, share_weights=shared, loss=loss,
                         train_size=train_size, roc_points=cfg.eval.roc_points,
                         head_init=cfg.finetune.head_init, head_scale=scale)
    table = format_table([("", rep)], include_folds=True)
    atomic_write(out / "crossval_report.txt", table)
    atomic_write(out / "crossval_roc.csv", rep.roc_csv())
    print(table, end="")
    return 0


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    pairs = _load(_input(args.pairs, out / "cross.hvd", "pair dataset"), PairDataset, "pair")
    id_model = load_checkpoint(_input(args.id, out / "id.ckpt", "ID checkpoint"))
    selfie_model = load_checkpoint(_input(args.selfie, out / "selfie.ckpt", "selfie checkpoint"))
    rep = evaluate(pairs, SiblingPair(id_model, selfie_model), cfg.eval.far_targets,
                   cfg.eval.roc_points)
    label = args.label or "model"
    table = format_table([(label, rep)])
    table += (f"subjects: {len(pairs)}, genuine: {rep.num_genuine}, "
              f"impostor: {rep.num_impostor}, fused probes: {rep.fused_probes}\n")
    atomic_write(out / "eval_report.txt", table)
    atomic_write(out / "eval_roc.csv", rep.roc_csv())
    print(table, end="")
    return 0


def cmd_experiment(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg, args)
    bench_cfg = replace(cfg.data.bench, far_targets=cfg.eval.far_targets, folds=cfg.eval.folds)
    bench: Benchmark = build_benchmark(bench_cfg)
    if args.name == "ablation":
        rows = list(ablation(bench).items())
    elif args.name == "size":
        rows = [(f"{n} subjects", r) for n, r in size_sweep(bench).items()]
    else:
        rows = list(cross_dataset(bench).items())
    table = format_table(rows)
    atomic_write(out / f"experiment_{args.name}.txt", table)
    print(table, end="")
    return 0


# -- argument parsing ------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON experiment config (defaults if omitted)")
    p.add_argument("--out", help="output directory (overrides output_dir; must exist)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _add_finetune_flags(p):
    p.add_argument("--pairs", help="pair dataset (default: <out>/pairs.hvd)")
    p.add_argument("--loss", choices=LOSSES, help="fine-tuning loss (overrides finetune.loss)")
    p.add_argument("--shared", action="store_true",
                   help="one shared model for ID and selfie inputs")
    p.add_argument("--train-size", type=int, metavar="N",
                   help="fine-tune on a random subset of N training subjects")
    p.add_argument("--steps", type=int, metavar="N",
                   help="override finetune.total_steps (0 evaluates the base model)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetface", description="Train and evaluate ID-vs-selfie face matchers on "
        "synthetic heterogeneous data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write source, pair and cross-domain datasets")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="train the base model on the source dataset")
    _add_common(p)
    p.add_argument("--source", help="labeled dataset (default: <out>/source.hvd)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune ID and selfie models from the base model")
    _add_common(p)
    p.add_argument("--base", help="base checkpoint (default: <out>/base.ckpt)")
    _add_finetune_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("crossval", help="k-fold fine-tune and evaluate on the pair dataset")
    _add_common(p)
    p.add_argument("--base", help="base checkpoint (default: <out>/base.ckpt)")
    p.add_argument("--scratch", action="store_true",
                   help="start from a randomly initialized model instead of --base")
    _add_finetune_flags(p)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("eval", help="evaluate an ID/selfie model pair on a dataset")
    _add_common(p)
    p.add_argument("--pairs", help="pair dataset (default: <out>/cross.hvd)")
    p.add_argument("--id", help="ID-side checkpoint (default: <out>/id.ckpt)")
    p.add_argument("--selfie", help="selfie-side checkpoint (default: <out>/selfie.ckpt)")
    p.add_argument("--label", help="row label in the report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a benchmark recipe end to end")
    _add_common(p)
    p.add_argument("name", choices=("ablation", "size", "cross"))
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(cfg, args)
    except (HetFaceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
