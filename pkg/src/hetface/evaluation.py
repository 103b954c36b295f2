"""Verification protocol: cosine scoring of ID templates against selfie
probes, ROC / VR@FAR, selfie fusion and k-fold cross-validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .datasets import PairDataset
from .errors import BadK, DimMismatch, EmptyScores, TooFewSubjects
from .losses import MPSConfig
from .model import EmbeddingModel, SiblingPair, embed
from .numerics import normalize_rows

DEFAULT_FAR_TARGETS = (0.0001, 0.001, 0.01)


@dataclass
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64).ravel()
        self.impostor = np.asarray(self.impostor, dtype=np.float64).ravel()

    def check(self):
        if self.genuine.size == 0 or self.impostor.size == 0:
            raise EmptyScores("need at least one genuine and one impostor score")


@dataclass
class EvalReport:
    """Verification results for one test set, or the aggregate of k folds.

    ``vr_at_far`` maps each FAR target to ``(vr, threshold)``. For a
    cross-validated report, ``folds`` holds the per-fold reports,
    ``fold_stats`` maps targets to ``(mean, sample std)`` of the fold VRs,
    and the top-level VR entries are those fold means.
    """

    vr_at_far: Dict[float, Tuple[float, float]]
    roc_points: np.ndarray
    fold_stats: Optional[Dict[float, Tuple[float, float]]] = None
    folds: List["EvalReport"] = field(default_factory=list)
    num_genuine: int = 0
    num_impostor: int = 0
    fused_probes: int = 0

    def vr(self, far):
        return self.vr_at_far[far][0]

    def to_table(self, label="") -> str:
        return format_table([(label, self)], include_folds=bool(self.folds))

    def roc_csv(self) -> str:
        lines = ["far,tar"]
        lines += [f"{f:.6f},{t:.6f}" for f, t in self.roc_points]
        return "\n".join(lines) + "\n"


def _far_header(far):
    return f"VR(%) @FAR={far * 100:g}%"


def format_table(rows, include_folds=False) -> str:
    """Plain-text table with one column per FAR target.

    ``rows`` is a sequence of ``(label, EvalReport)``; reports with fold
    statistics show ``mean ± std``, and with ``include_folds`` each fold gets
    its own line above the aggregate.
    """
    fars = sorted(rows[0][1].vr_at_far)
    label_w = max([len("Model")] + [len(r[0]) for r in rows] + [len("fold 10")])
    col_w = max(len(_far_header(f)) for f in fars)
    out = ["Model".ljust(label_w) + "  " + "  ".join(_far_header(f).rjust(col_w) for f in fars)]
    out.append("-" * len(out[0]))
    for label, rep in rows:
        if include_folds:
            for i, fold in enumerate(rep.folds):
                cells = [f"{fold.vr(f) * 100:.2f}".rjust(col_w) for f in fars]
                out.append(f"fold {i}".ljust(label_w) + "  " + "  ".join(cells))
        if rep.fold_stats:
            cells = [f"{m * 100:.2f} ± {s * 100:.2f}".rjust(col_w)
                     for m, s in (rep.fold_stats[f] for f in fars)]
        else:
            cells = [f"{rep.vr(f) * 100:.2f}".rjust(col_w) for f in fars]
        out.append((label or "mean ± std").ljust(label_w) + "  " + "  ".join(cells))
    return "\n".join(out) + "\n"


# -- scoring ---------------------------------------------------------------

def embed_dataset(dataset: PairDataset, siblings: SiblingPair):
    """ID inputs through ``id_model``, selfies through ``selfie_model``.

    Returns ``(id_embeddings (N, d), [selfie embeddings (k_i, d) per subject])``.
    """
    cfg = siblings.id_model.config
    if dataset.input_dim != cfg.input_dim:
        raise DimMismatch(f"dataset width {dataset.input_dim} != model input {cfg.input_dim}")
    G = embed(siblings.id_model, dataset.id_inputs)
    counts = [s.shape[0] for s in dataset.selfie_inputs]
    H_all = embed(siblings.selfie_model, np.vstack(dataset.selfie_inputs))
    splits = np.cumsum(counts)[:-1]
    return G, np.split(H_all, splits)


def fuse_selfies(embeddings) -> np.ndarray:
    """Average several unit embeddings and re-normalize the mean."""
    E = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if E.shape[0] == 0:
        raise EmptyScores("nothing to fuse")
    if E.shape[0] == 1:
        return E[0].copy()
    return normalize_rows(E.mean(axis=0)[None, :])[0][0]


def score_protocol(id_embeddings, probe_embeddings) -> ScoreSet:
    """All ID-template vs selfie-probe cosine scores.

    Genuine: ``g_i . h_i``. Impostor: ``g_i . h_j`` for every ordered
    ``i != j``, in row-major order.
    """
    G = np.asarray(id_embeddings, dtype=np.float64)
    H = np.asarray(probe_embeddings, dtype=np.float64)
    if G.shape != H.shape or G.ndim != 2:
        raise DimMismatch("need matching (N, d) template and probe arrays")
    n = G.shape[0]
    if n < 2:
        raise TooFewSubjects("scoring needs at least two subjects")
    S = np.clip(G @ H.T, -1.0, 1.0)
    off = ~np.eye(n, dtype=bool)
    return ScoreSet(np.diag(S).copy(), S[off])


def score_dataset(dataset: PairDataset, siblings: SiblingPair):
    """Embed, fuse multi-selfie subjects and score. Returns ``(scores, n_fused)``."""
    G, selfies = embed_dataset(dataset, siblings)
    H = np.vstack([fuse_selfies(s) for s in selfies])
    fused = sum(1 for s in selfies if s.shape[0] > 1)
    return score_protocol(G, H), fused


# -- metrics ---------------------------------------------------------------

def _allowed_false_accepts(far, n):
    """Largest integer ``a`` with ``a / n <= far``."""
    a = int(math.floor(far * n))
    while a + 1 <= n and (a + 1) / n <= far:
        a += 1
    while a > 0 and a / n > far:
        a -= 1
    return a


def vr_at_far(scores: ScoreSet, far_target: float):
    """Verification rate at the lowest threshold whose FAR is within target.

    A pair is accepted when ``score >= threshold``. The returned threshold
    is the smallest real value whose impostor accept rate does not exceed
    ``far_target``: just above the highest impostor that must be rejected,
    or ``-inf`` when every impostor may be accepted.
    """
    scores.check()
    if not 0 < far_target <= 1:
        raise ValueError("far_target must lie in (0, 1]")
    imp = np.sort(scores.impostor)[::-1]
    n = imp.size
    allowed = _allowed_false_accepts(far_target, n)
    if allowed >= n:
        threshold = -np.inf
    else:
        threshold = float(np.nextafter(imp[allowed], np.inf))
    vr = np.count_nonzero(scores.genuine >= threshold) / scores.genuine.size
    return float(vr), threshold


def roc_curve(scores: ScoreSet, num_points: Optional[int] = None) -> np.ndarray:
    """``(FAR, TAR)`` rows at every distinct score threshold, FAR ascending.

    Starts at ``(0, 0)`` (threshold ``+inf``) and ends at ``(1, 1)``. With
    ``num_points`` the curve is thinned to that many evenly spaced rows,
    endpoints kept.
    """
    scores.check()
    thresholds = np.unique(np.concatenate([scores.genuine, scores.impostor]))[::-1]
    gen = np.sort(scores.genuine)
    imp = np.sort(scores.impostor)
    tar = (gen.size - np.searchsorted(gen, thresholds, side="left")) / gen.size
    far = (imp.size - np.searchsorted(imp, thresholds, side="left")) / imp.size
    pts = np.column_stack([np.concatenate([[0.0], far]), np.concatenate([[0.0], tar])])
    if num_points is not None and num_points < len(pts):
        if num_points < 2:
            raise ValueError("num_points must be at least 2")
        idx = np.unique(np.linspace(0, len(pts) - 1, num_points).round().astype(int))
        pts = pts[idx]
    return pts


def evaluate(dataset: PairDataset, siblings: SiblingPair,
             far_targets: Sequence[float] = DEFAULT_FAR_TARGETS,
             roc_points: Optional[int] = 200) -> EvalReport:
    scores, fused = score_dataset(dataset, siblings)
    return report_from_scores(scores, far_targets, roc_points, fused)


def report_from_scores(scores: ScoreSet, far_targets, roc_points=200, fused=0):
    return EvalReport(
        {float(f): vr_at_far(scores, f) for f in far_targets},
        roc_curve(scores, roc_points),
        num_genuine=scores.genuine.size,
        num_impostor=scores.impostor.size,
        fused_probes=fused,
    )


# -- cross-validation --------------------------------------------------------

@dataclass
class FoldSplit:
    k: int
    assignments: np.ndarray

    def test_indices(self, fold):
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold):
        return np.flatnonzero(self.assignments != fold)

    def sizes(self):
        return np.bincount(self.assignments, minlength=self.k)


def kfold_split(num_subjects: int, k: int, rng) -> FoldSplit:
    """Random partition of subjects into ``k`` folds; the first
    ``num_subjects % k`` folds get one extra subject."""
    if k < 2:
        raise BadK("k must be at least 2")
    if num_subjects < k:
        raise BadK(f"cannot split {num_subjects} subjects into {k} folds")
    perm = rng.permutation(num_subjects)
    base, extra = divmod(num_subjects, k)
    sizes = [base + (1 if f < extra else 0) for f in range(k)]
    assignments = np.empty(num_subjects, dtype=np.int64)
    assignments[perm] = np.repeat(np.arange(k), sizes)
    return FoldSplit(k, assignments)


def aggregate_folds(folds: List[EvalReport], far_targets, roc_points=200) -> EvalReport:
    stats = {}
    for f in far_targets:
        vals = np.array([r.vr(f) for r in folds])
        stats[float(f)] = (float(vals.mean()), float(vals.std(ddof=1)) if len(vals) > 1 else 0.0)
    rocs = [r.roc_points for r in folds]
    return EvalReport(
        {f: (m, float("nan")) for f, (m, _) in stats.items()},
        _mean_roc(rocs, roc_points),
        fold_stats=stats,
        folds=list(folds),
        num_genuine=sum(r.num_genuine for r in folds),
        num_impostor=sum(r.num_impostor for r in folds),
        fused_probes=sum(r.fused_probes for r in folds),
    )


def _mean_roc(rocs, num_points):
    # vertical averaging: TAR interpolated on a shared FAR grid
    grid = np.unique(np.concatenate([r[:, 0] for r in rocs]))
    if num_points is not None and len(grid) > num_points:
        grid = grid[np.unique(np.linspace(0, len(grid) - 1, num_points).round().astype(int))]
    tars = [np.interp(grid, r[:, 0], r[:, 1]) for r in rocs]
    tar = np.maximum.accumulate(np.mean(tars, axis=0))
    return np.column_stack([grid, tar])


def cross_validate(dataset: PairDataset, base: EmbeddingModel, train_config,
                   mps_config: Optional[MPSConfig] = None, k: int = 5,
                   far_targets: Sequence[float] = DEFAULT_FAR_TARGETS,
                   share_weights: bool = False, loss: str = "mps",
                   train_size: Optional[int] = None, split_seed: Optional[int] = None,
                   roc_points: Optional[int] = 200, head_init: str = "random",
                   head_scale: Optional[float] = None) -> EvalReport:
    """k-fold protocol: per fold, fine-tune on the other folds (optionally a
    random ``train_size`` subset of them) and evaluate on the held-out fold.

    Fold ``f`` trains with seed ``train_config.rng_seed + f``.
    """
    from .trainer import finetune, with_overrides

    seed = train_config.rng_seed if split_seed is None else split_seed
    split = kfold_split(len(dataset), k, np.random.default_rng(seed))
    folds = []
    for f in range(k):
        train_idx = split.train_indices(f)
        fold_seed = train_config.rng_seed + f
        if train_size is not None:
            if train_size > len(train_idx):
                raise TooFewSubjects(
                    f"train_size {train_size} exceeds the {len(train_idx)} training subjects")
            # a prefix of one per-fold permutation: subsets of different
            # sizes within a fold are nested
            order = np.random.default_rng([fold_seed, 1]).permutation(train_idx)
            train_idx = np.sort(order[:train_size])
        siblings, _ = finetune(base, dataset.subset(train_idx),
                               with_overrides(train_config, rng_seed=fold_seed),
                               mps_config, share_weights=share_weights, loss=loss,
                               head_init=head_init, head_scale=head_scale)
        folds.append(evaluate(dataset.subset(split.test_indices(f)), siblings,
                              far_targets, roc_points))
    return aggregate_folds(folds, far_targets, roc_points)
