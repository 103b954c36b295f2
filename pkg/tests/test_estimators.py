import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hetface.errors import ConfigInvalid, DimMismatch
from hetface.estimators import MarginEmbedder, SiblingVerifier
from hetface.synthdata import SynthConfig, domain_transforms, gen_pair_dataset, gen_source_dataset


@pytest.fixture(scope="module")
def data():
    A, T_id, T_sf = domain_transforms(12, 4, 0.5, 0.5, seed=0)
    cfg = SynthConfig(num_subjects=40, latent_dim=4, input_dim=12, num_classes=10,
                      samples_per_class=20, source_transform=A, id_domain_transform=T_id,
                      selfie_domain_transform=T_sf, noise_sigma_source=0.05,
                      noise_sigma_id=0.05, noise_sigma_selfie=0.05, rng_seed=0)
    return gen_source_dataset(cfg), gen_pair_dataset(cfg)


@pytest.fixture(scope="module")
def embedder(data):
    source, _ = data
    return MarginEmbedder(hidden_dims=(16,), embedding_dim=4, margin=1.0, batch_size=32,
                          total_steps=200).fit(source.inputs, source.labels + 100)


def test_embedder_params_roundtrip():
    est = MarginEmbedder(embedding_dim=8, total_steps=5)
    assert clone(est).get_params() == est.get_params()
    assert est.set_params(margin=2.0).margin == 2.0


def test_embedder_transform(embedder, data):
    source, _ = data
    E = embedder.transform(source.inputs[:7])
    assert E.shape == (7, 4)
    np.testing.assert_allclose(np.linalg.norm(E, axis=1), 1.0, atol=1e-12)
    assert embedder.classes_.tolist() == list(range(100, 110))
    assert np.array_equal(E, embedder.fit_transform(source.inputs, source.labels + 100)[:7])


def test_embedder_errors(embedder, data):
    with pytest.raises(NotFittedError):
        MarginEmbedder().transform(np.zeros((2, 3)))
    with pytest.raises(DimMismatch):
        embedder.transform(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        MarginEmbedder(total_steps=1).fit(np.full((4, 3), np.nan), [0, 1, 0, 1])
    with pytest.raises(ConfigInvalid):
        MarginEmbedder(total_steps=1, loss="hinge").fit(np.eye(3), [0, 1, 2])


def test_l2_embedder(data):
    source, _ = data
    est = MarginEmbedder(hidden_dims=(), embedding_dim=4, loss="l2_softmax", margin=0.0,
                         total_steps=10).fit(source.inputs, source.labels)
    assert est.head_.scale == pytest.approx(16.0)


def test_verifier(embedder, data):
    _, pairs = data
    X_id = pairs.id_inputs
    X_sf = np.vstack([s[0] for s in pairs.selfie_inputs])
    ver = SiblingVerifier(embedder, batch_size=16, total_steps=50).fit(X_id, X_sf)
    scores = ver.decision_function(X_id, X_sf)
    S = ver.score_matrix(X_id, X_sf)
    np.testing.assert_allclose(np.diag(S), scores, atol=1e-12)
    assert scores.shape == (40,) and np.all(np.abs(scores) <= 1.0)
    assert not ver.siblings_.id_model.equals(ver.siblings_.selfie_model)
    shared = SiblingVerifier(embedder, share_weights=True, batch_size=16, total_steps=20)
    shared.fit(X_id, X_sf)
    np.testing.assert_array_equal(shared.transform_id(X_id), shared.transform_selfie(X_id))


def test_verifier_errors(embedder):
    with pytest.raises(NotFittedError):
        SiblingVerifier(embedder).decision_function(np.zeros((2, 12)), np.zeros((2, 12)))
    with pytest.raises(ConfigInvalid):
        SiblingVerifier(None, total_steps=1).fit(np.ones((4, 12)), np.ones((4, 12)))
    with pytest.raises(DimMismatch):
        SiblingVerifier(embedder, total_steps=1).fit(np.ones((4, 12)), np.ones((4, 11)))
