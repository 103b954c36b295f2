import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetface.datasets import PairDataset
from hetface.errors import BadK, DegenerateNorm, DimMismatch, EmptyScores, TooFewSubjects
from hetface.evaluation import (ScoreSet, aggregate_folds, cross_validate, embed_dataset,
                                evaluate, format_table, fuse_selfies, kfold_split, roc_curve,
                                score_protocol, vr_at_far)
from hetface.losses import MPSConfig
from hetface.model import EmbeddingModel, ModelConfig, clone_siblings, init_model
from hetface.trainer import TrainConfig, finetune, with_overrides

from oracles import cross_pairs_bruteforce, far_tar_at, random_unit_rows, vr_at_far_bruteforce


def random_scores(rng, n_gen, n_imp, grid=None):
    """Scores in [-1, 1]; with ``grid`` they are rounded so ties are common."""
    g, i = rng.uniform(-1, 1, n_gen), rng.uniform(-1, 1, n_imp)
    if grid:
        g, i = np.round(g * grid) / grid, np.round(i * grid) / grid
    return ScoreSet(g, i)


def identity_siblings(dim):
    cfg = ModelConfig(dim, (), dim, "relu", 0)
    return clone_siblings(EmbeddingModel(cfg, [np.eye(dim)], [np.zeros(dim)]))


def orthogonal_pairs(n, dim=None, seed=0):
    """Subjects whose ID and selfie inputs are the same basis vector, up to
    a positive scale, so an identity model separates them perfectly."""
    dim = dim or n
    rng = np.random.default_rng(seed)
    E = np.eye(dim)[:n]
    return PairDataset(E * rng.uniform(1, 2, (n, 1)),
                       [E[i] * rng.uniform(1, 2) for i in range(n)], np.arange(n))


class TestFuse:
    def test_single(self):
        v = np.array([0.6, 0.8])
        assert fuse_selfies([v]).tolist() == v.tolist()

    def test_two_axes(self):
        np.testing.assert_allclose(fuse_selfies([[1.0, 0.0], [0.0, 1.0]]),
                                   [0.70711, 0.70711], atol=1e-5)

    def test_opposite(self):
        with pytest.raises(DegenerateNorm):
            fuse_selfies([[0.6, 0.8], [-0.6, -0.8]])

    def test_copies(self, rng):
        v = random_unit_rows(rng, 1, 5)[0]
        np.testing.assert_allclose(fuse_selfies(np.tile(v, (7, 1))), v, atol=1e-9)

    def test_empty(self):
        with pytest.raises(EmptyScores):
            fuse_selfies(np.zeros((0, 3)))


class TestScoreProtocol:
    def test_counts(self, rng):
        s = score_protocol(random_unit_rows(rng, 3, 4), random_unit_rows(rng, 3, 4))
        assert s.genuine.size == 3 and s.impostor.size == 6

    def test_orthonormal(self):
        s = score_protocol(np.eye(4), np.eye(4))
        assert s.genuine.tolist() == [1.0] * 4
        assert s.impostor.tolist() == [0.0] * 12

    def test_bruteforce(self, rng):
        G, H = random_unit_rows(rng, 4, 5), random_unit_rows(rng, 4, 5)
        s = score_protocol(G, H)
        genuine, impostor = cross_pairs_bruteforce(G, H)
        np.testing.assert_allclose(s.genuine, genuine, atol=1e-15)
        np.testing.assert_allclose(np.sort(s.impostor), np.sort(impostor), atol=1e-15)

    def test_relabeling(self, rng):
        G, H = random_unit_rows(rng, 6, 3), random_unit_rows(rng, 6, 3)
        perm = rng.permutation(6)
        a, b = score_protocol(G, H), score_protocol(G[perm], H[perm])
        np.testing.assert_allclose(np.sort(a.genuine), np.sort(b.genuine), atol=1e-15)
        np.testing.assert_allclose(np.sort(a.impostor), np.sort(b.impostor), atol=1e-15)

    def test_one_subject(self):
        with pytest.raises(TooFewSubjects):
            score_protocol([[1.0, 0.0]], [[1.0, 0.0]])

    def test_shape_mismatch(self):
        with pytest.raises(DimMismatch):
            score_protocol(np.eye(3), np.eye(2))


class TestVrAtFar:
    def test_separable(self):
        vr, thr = vr_at_far(ScoreSet([0.9, 0.8], [0.1, 0.2]), 0.001)
        assert vr == 1.0
        assert 0.2 < thr <= 0.8

    def test_inverted(self):
        assert vr_at_far(ScoreSet([0.1], [0.9]), 0.001)[0] == 0.0

    def test_accept_all(self):
        vr, thr = vr_at_far(ScoreSet([-0.5, 0.3], [0.9, 0.1]), 1.0)
        assert vr == 1.0 and thr == -math.inf

    def test_empty(self):
        with pytest.raises(EmptyScores):
            vr_at_far(ScoreSet([], [0.1]), 0.1)
        with pytest.raises(EmptyScores):
            vr_at_far(ScoreSet([0.1], []), 0.1)

    def test_tied_impostors(self):
        # half the impostors tie at 0.5: a 10% budget cannot admit the tie
        s = ScoreSet([0.5, 0.6], [0.5] * 5 + [0.0] * 5)
        vr, thr = vr_at_far(s, 0.1)
        assert vr == 0.5 and thr > 0.5

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(31)
        for trial in range(200):
            s = random_scores(rng, int(rng.integers(1, 60)), int(rng.integers(1, 400)),
                              grid=10 if trial % 2 else None)
            for far in (0.0001, 0.001, 0.01, 0.05, 0.3, 1.0):
                assert vr_at_far(s, far) == vr_at_far_bruteforce(s.genuine, s.impostor, far)

    def test_far_within_target(self, rng):
        for _ in range(50):
            s = random_scores(rng, 30, 300, grid=20)
            for far in (0.001, 0.01, 0.1, 0.5):
                _, thr = vr_at_far(s, far)
                assert far_tar_at(s.genuine, s.impostor, thr)[0] <= far

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-4, 1.0), st.floats(1e-4, 1.0))
    def test_monotone(self, seed, f1, f2):
        rng = np.random.default_rng(seed)
        s = random_scores(rng, int(rng.integers(1, 200)), int(rng.integers(1, 1000)),
                          grid=int(rng.integers(0, 50)) or None)
        lo, hi = sorted((f1, f2))
        assert vr_at_far(s, lo)[0] <= vr_at_far(s, hi)[0]


class TestRoc:
    def test_separated(self):
        roc = roc_curve(ScoreSet([0.9, 0.8], [0.1, 0.2]))
        assert any(f == 0.0 and t == 1.0 for f, t in roc)
        assert roc[0].tolist() == [0.0, 0.0] and roc[-1].tolist() == [1.0, 1.0]

    def test_identical_multisets(self, rng):
        x = np.round(rng.uniform(-1, 1, 40), 1)
        roc = roc_curve(ScoreSet(x, x.copy()))
        np.testing.assert_array_equal(roc[:, 0], roc[:, 1])

    def test_counting_oracle(self):
        rng = np.random.default_rng(12)
        for trial in range(50):
            s = random_scores(rng, int(rng.integers(1, 200)), int(rng.integers(1, 800)),
                              grid=25 if trial % 2 else None)
            roc = roc_curve(s)
            thresholds = np.unique(np.concatenate([s.genuine, s.impostor]))[::-1]
            expected = [(0.0, 0.0)] + [far_tar_at(s.genuine, s.impostor, t) for t in thresholds]
            assert [tuple(p) for p in roc.tolist()] == expected

    def test_monotone_and_thinned(self, rng):
        roc = roc_curve(random_scores(rng, 100, 900), num_points=50)
        assert len(roc) == 50
        assert np.all(np.diff(roc[:, 0]) >= 0) and np.all(np.diff(roc[:, 1]) >= 0)
        assert roc[-1].tolist() == [1.0, 1.0]

    def test_empty(self):
        with pytest.raises(EmptyScores):
            roc_curve(ScoreSet([], []))


class TestKFold:
    def test_exact(self):
        split = kfold_split(10, 5, np.random.default_rng(0))
        assert split.sizes().tolist() == [2] * 5
        seen = np.concatenate([split.test_indices(f) for f in range(5)])
        assert sorted(seen.tolist()) == list(range(10))

    def test_remainder(self):
        assert kfold_split(9, 5, np.random.default_rng(0)).sizes().tolist() == [2, 2, 2, 2, 1]

    def test_bad_k(self):
        with pytest.raises(BadK):
            kfold_split(10, 1, np.random.default_rng(0))
        with pytest.raises(BadK):
            kfold_split(3, 5, np.random.default_rng(0))

    def test_registry_counts(self):
        split = kfold_split(9915, 5, np.random.default_rng(0))
        for f in range(5):
            assert len(split.train_indices(f)) == 7932
            assert len(split.test_indices(f)) == 1983

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 300), st.integers(2, 10), st.integers(0, 1000))
    def test_partition(self, n, k, seed):
        if n < k:
            return
        split = kfold_split(n, k, np.random.default_rng(seed))
        sizes = split.sizes()
        assert sizes.sum() == n and sizes.max() - sizes.min() <= 1
        assert list(sizes) == sorted(sizes, reverse=True)


class TestEmbedDataset:
    def test_identical_clones(self, small_model, rng):
        pair = clone_siblings(small_model)
        x = rng.standard_normal((3, 6))
        ds = PairDataset(x, list(x), np.arange(3))
        G, H = embed_dataset(ds, pair)
        np.testing.assert_array_equal(G, np.vstack(H))

    def test_counts(self, small_model, rng):
        ds = PairDataset(rng.standard_normal((5, 6)), list(rng.standard_normal((5, 6))),
                         np.arange(5))
        G, H = embed_dataset(ds, clone_siblings(small_model))
        assert G.shape == (5, 4) and len(H) == 5 and all(h.shape == (1, 4) for h in H)

    def test_routes_differ_after_training(self, rng):
        base = init_model(ModelConfig(6, (8,), 4, "tanh", 1))
        ds = PairDataset(rng.standard_normal((12, 6)), list(rng.standard_normal((12, 6))),
                         np.arange(12))
        pair, _ = finetune(base, ds, TrainConfig(batch_size=8, total_steps=20))
        x = ds.selfie_inputs[0]
        _, H = embed_dataset(ds, pair)
        G_route, H_route = embed_dataset(PairDataset(x, [x], [0]), pair)
        np.testing.assert_allclose(H_route[0], H[0], atol=1e-12)
        assert not np.allclose(G_route, H[0], atol=1e-3)

    def test_width_mismatch(self, small_model):
        ds = PairDataset(np.ones((2, 3)), [np.ones(3), np.ones(3)], [0, 1])
        with pytest.raises(DimMismatch):
            embed_dataset(ds, clone_siblings(small_model))

    def test_fusion_counted(self):
        ds = PairDataset(np.eye(3), [np.eye(3)[0], np.eye(3)[[1, 1]], np.eye(3)[2]], [0, 1, 2])
        rep = evaluate(ds, identity_siblings(3), (0.01,))
        assert rep.fused_probes == 1 and rep.vr(0.01) == 1.0


class TestCrossValidate:
    def test_perfect_base(self):
        ds = orthogonal_pairs(20)
        cfg = ModelConfig(20, (), 20, "relu", 0)
        base = EmbeddingModel(cfg, [np.eye(20)], [np.zeros(20)])
        rep = cross_validate(ds, base, TrainConfig(total_steps=0), k=5, far_targets=(0.01, 0.1))
        for far in (0.01, 0.1):
            assert rep.fold_stats[far] == (1.0, 0.0)
            assert [f.vr(far) for f in rep.folds] == [1.0] * 5

    def test_each_subject_tested_once(self):
        split = kfold_split(50, 5, np.random.default_rng(3))
        tested = np.concatenate([split.test_indices(f) for f in range(5)])
        assert sorted(tested.tolist()) == list(range(50))
        for f in range(5):
            assert not set(split.test_indices(f)) & set(split.train_indices(f))

    def test_compositional(self, rng):
        n, dim = 30, 6
        ds = PairDataset(rng.standard_normal((n, dim)), list(rng.standard_normal((n, dim))),
                         np.arange(n))
        base = init_model(ModelConfig(dim, (8,), 4, "tanh", 2))
        cfg = TrainConfig(batch_size=8, total_steps=15, rng_seed=11)
        fars = (0.05, 0.2)
        rep = cross_validate(ds, base, cfg, MPSConfig(0.5), k=3, far_targets=fars)
        split = kfold_split(n, 3, np.random.default_rng(11))
        manual = []
        for f in range(3):
            pair, _ = finetune(base, ds.subset(split.train_indices(f)),
                               with_overrides(cfg, rng_seed=11 + f), MPSConfig(0.5))
            manual.append(evaluate(ds.subset(split.test_indices(f)), pair, fars))
        for far in fars:
            assert [r.vr(far) for r in rep.folds] == [r.vr(far) for r in manual]
            vals = np.array([r.vr(far) for r in manual])
            assert rep.fold_stats[far] == (vals.mean(), vals.std(ddof=1))

    def test_train_size(self):
        ds = orthogonal_pairs(25)
        cfg = ModelConfig(25, (), 25, "relu", 0)
        base = EmbeddingModel(cfg, [np.eye(25)], [np.zeros(25)])
        with pytest.raises(TooFewSubjects):
            cross_validate(ds, base, TrainConfig(total_steps=0), k=5, train_size=21)
        rep = cross_validate(ds, base, TrainConfig(total_steps=0), k=5, train_size=10)
        assert len(rep.folds) == 5


class TestReport:
    def test_table_and_csv(self):
        s = ScoreSet([0.9, 0.4], [0.1, 0.5, 0.2, 0.3])
        from hetface.evaluation import report_from_scores
        rep = report_from_scores(s, (0.001, 0.5))
        agg = aggregate_folds([rep, rep], (0.001, 0.5))
        table = format_table([("TL", agg)], include_folds=True)
        assert "VR(%) @FAR=0.1%" in table and "VR(%) @FAR=50%" in table
        assert "fold 1" in table and "50.00 ± 0.00" in table
        csv = rep.roc_csv().splitlines()
        assert csv[0] == "far,tar" and csv[1] == "0.000000,0.000000"
        assert csv[-1] == "1.000000,1.000000"
