"""Synthetic heterogeneous-identity data.

Every identity is a unit latent vector ``z``. An image from a domain with
transform ``T`` is::

    x = normalize(T @ z + nuisance_scale * N @ u + sigma * eps)

where ``u`` and ``eps`` are fresh standard normal draws per image and ``N``
is a fixed nuisance basis shared by all domains (pose, lighting and the
like). The source domain has its own mixing transform and many labeled
samples per class; the target domain gives each subject one ID image and a
few selfies, with the ID domain noisier than the selfie domain.

Binary dataset layout (little-endian)::

    b"HVDATA", u32 version, u8 kind (0 labeled, 1 pairs), payload, u64 checksum

    labeled payload: u64 n, u32 input_dim, u32 num_classes,
                     i64 * n labels, f64 * n * input_dim inputs
    pairs payload:   u64 n, u32 input_dim, i64 * n subject ids,
                     u32 * n selfie counts, f64 id inputs, f64 selfie inputs

The checksum is BLAKE2b-64 over everything between the header and itself.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .datasets import LabeledDataset, PairDataset
from .errors import ChecksumMismatch, ConfigInvalid, FormatVersionMismatch
from .fileio import atomic_write, checksum64, read_bytes
from .numerics import normalize_rows

MAGIC = b"HVDATA"
VERSION = 1
KIND_LABELED = 0
KIND_PAIRS = 1

# SeedSequence stream tags
_SOURCE_POOL = 0
_TARGET_POOL = 1


@dataclass
class SynthConfig:
    num_subjects: int = 200
    latent_dim: int = 16
    input_dim: int = 48
    num_classes: int = 200
    samples_per_class: int = 20
    id_domain_transform: Optional[np.ndarray] = None
    selfie_domain_transform: Optional[np.ndarray] = None
    source_transform: Optional[np.ndarray] = None
    nuisance_basis: Optional[np.ndarray] = None
    nuisance_scale: float = 0.0
    noise_sigma_id: float = 0.0
    noise_sigma_selfie: float = 0.0
    noise_sigma_source: float = 0.0
    selfies_per_subject: Tuple[int, int] = (1, 1)
    rng_seed: int = 0
    latent_pool: int = 0

    def __post_init__(self):
        d, k = self.input_dim, self.latent_dim
        if min(self.num_subjects, k, d, self.num_classes, self.samples_per_class) < 1:
            raise ConfigInvalid("sizes must be positive")
        eye = np.eye(d, k)
        for name in ("id_domain_transform", "selfie_domain_transform", "source_transform"):
            T = getattr(self, name)
            T = eye.copy() if T is None else np.asarray(T, dtype=np.float64)
            if T.shape != (d, k):
                raise ConfigInvalid(f"{name} must have shape ({d}, {k}), got {T.shape}")
            if not np.all(np.isfinite(T)):
                raise ConfigInvalid(f"{name} must be finite")
            setattr(self, name, T)
        if self.nuisance_basis is not None:
            self.nuisance_basis = np.asarray(self.nuisance_basis, dtype=np.float64)
            if self.nuisance_basis.ndim != 2 or self.nuisance_basis.shape[0] != d:
                raise ConfigInvalid("nuisance_basis must have input_dim rows")
        sigmas = (self.nuisance_scale, self.noise_sigma_id, self.noise_sigma_selfie,
                  self.noise_sigma_source)
        if not all(np.isfinite(s) and s >= 0 for s in sigmas):
            raise ConfigInvalid("noise levels must be finite and non-negative")
        lo, hi = (int(v) for v in self.selfies_per_subject)
        if not 1 <= lo <= hi:
            raise ConfigInvalid("selfies_per_subject must be a range 1 <= lo <= hi")
        self.selfies_per_subject = (lo, hi)


def random_orthonormal(rows, cols, rng):
    """``rows x cols`` matrix with orthonormal columns (``rows >= cols``)."""
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def domain_transforms(input_dim, latent_dim, id_shift, selfie_shift, seed):
    """A source mixing transform and two perturbed copies of it.

    Each perturbed transform is ``A + shift * D`` with ``D`` an independent
    random orthonormal matrix, rescaled so ``||T||_F == ||A||_F``.
    Returns ``(source, id, selfie)``.
    """
    rng = np.random.default_rng([seed, 7])
    A = random_orthonormal(input_dim, latent_dim, rng)
    out = [A]
    for shift in (id_shift, selfie_shift):
        T = A + shift * random_orthonormal(input_dim, latent_dim, rng)
        out.append(T * (np.linalg.norm(A) / np.linalg.norm(T)))
    return tuple(out)


def _latents(n, dim, seed, pool, stream):
    rng = np.random.default_rng([seed, stream, pool])
    return normalize_rows(rng.standard_normal((n, dim)))[0]


def source_latents(config: SynthConfig):
    return _latents(config.num_classes, config.latent_dim, config.rng_seed,
                    config.latent_pool, _SOURCE_POOL)


def subject_latents(config: SynthConfig):
    return _latents(config.num_subjects, config.latent_dim, config.rng_seed,
                    config.latent_pool, _TARGET_POOL)


def _render(T, Z, sigma, config, rng):
    X = Z @ T.T
    if config.nuisance_basis is not None and config.nuisance_scale > 0:
        U = rng.standard_normal((Z.shape[0], config.nuisance_basis.shape[1]))
        X = X + config.nuisance_scale * (U @ config.nuisance_basis.T)
    if sigma > 0:
        X = X + sigma * rng.standard_normal(X.shape)
    return normalize_rows(X)[0]


def gen_source_dataset(config: SynthConfig) -> LabeledDataset:
    """``samples_per_class`` images per class, rendered through the source transform."""
    if config.num_classes < 2:
        raise ConfigInvalid("source data needs at least two classes")
    Z = source_latents(config)
    labels = np.repeat(np.arange(config.num_classes), config.samples_per_class)
    rng = np.random.default_rng([config.rng_seed, 2, config.latent_pool])
    X = _render(config.source_transform, Z[labels], config.noise_sigma_source, config, rng)
    return LabeledDataset(X, labels, config.num_classes)


def gen_pair_dataset(config: SynthConfig) -> PairDataset:
    """One ID image and ``selfies_per_subject`` selfies per subject."""
    if config.num_subjects < 2:
        raise ConfigInvalid("pair data needs at least two subjects")
    Z = subject_latents(config)
    rng = np.random.default_rng([config.rng_seed, 3, config.latent_pool])
    lo, hi = config.selfies_per_subject
    counts = rng.integers(lo, hi + 1, size=config.num_subjects)
    X_id = _render(config.id_domain_transform, Z, config.noise_sigma_id, config, rng)
    X_sf = _render(config.selfie_domain_transform, np.repeat(Z, counts, axis=0),
                   config.noise_sigma_selfie, config, rng)
    selfies = np.split(X_sf, np.cumsum(counts)[:-1])
    subject_ids = np.arange(config.num_subjects, dtype=np.int64)
    return PairDataset(X_id, selfies, subject_ids)


def with_overrides(config: SynthConfig, **changes) -> SynthConfig:
    return replace(config, **changes)


# -- file I/O ----------------------------------------------------------------

def dataset_to_bytes(dataset) -> bytes:
    if isinstance(dataset, LabeledDataset):
        kind = KIND_LABELED
        payload = b"".join([
            struct.pack("<QII", len(dataset), dataset.input_dim, dataset.num_classes),
            dataset.labels.astype("<i8").tobytes(),
            dataset.inputs.astype("<f8").tobytes(),
        ])
    elif isinstance(dataset, PairDataset):
        kind = KIND_PAIRS
        counts = np.array([s.shape[0] for s in dataset.selfie_inputs], dtype="<u4")
        payload = b"".join([
            struct.pack("<QI", len(dataset), dataset.input_dim),
            dataset.subject_ids.astype("<i8").tobytes(),
            counts.tobytes(),
            dataset.id_inputs.astype("<f8").tobytes(),
            np.vstack(dataset.selfie_inputs).astype("<f8").tobytes(),
        ])
    else:
        raise TypeError(f"cannot serialize {type(dataset).__name__}")
    head = MAGIC + struct.pack("<IB", VERSION, kind)
    return head + payload + struct.pack("<Q", checksum64(payload))


def dataset_from_bytes(data: bytes):
    hlen = len(MAGIC) + 5
    if len(data) < hlen or data[: len(MAGIC)] != MAGIC:
        raise FormatVersionMismatch("not a dataset file (bad magic or truncated header)")
    version, kind = struct.unpack_from("<IB", data, len(MAGIC))
    if version != VERSION:
        raise FormatVersionMismatch(f"unsupported dataset version {version}")
    if len(data) < hlen + 8:
        raise ChecksumMismatch("dataset file truncated")
    payload = data[hlen:-8]
    (stored,) = struct.unpack("<Q", data[-8:])
    if stored != checksum64(payload):
        raise ChecksumMismatch("dataset checksum mismatch")
    try:
        if kind == KIND_LABELED:
            return _labeled_from_payload(payload)
        if kind == KIND_PAIRS:
            return _pairs_from_payload(payload)
    except (struct.error, ValueError) as exc:
        raise ChecksumMismatch(f"corrupt dataset payload: {exc}") from exc
    raise FormatVersionMismatch(f"unknown dataset kind {kind}")


def _take(payload, off, dtype, count):
    size = np.dtype(dtype).itemsize * count
    if off + size > len(payload):
        raise ValueError("payload shorter than its header declares")
    return np.frombuffer(payload, dtype=dtype, count=count, offset=off).copy(), off + size


def _labeled_from_payload(payload):
    n, d, c = struct.unpack_from("<QII", payload, 0)
    off = struct.calcsize("<QII")
    labels, off = _take(payload, off, "<i8", n)
    X, off = _take(payload, off, "<f8", n * d)
    if off != len(payload):
        raise ValueError("trailing bytes in payload")
    return LabeledDataset(X.reshape(n, d).astype(np.float64), labels.astype(np.int64), c)


def _pairs_from_payload(payload):
    n, d = struct.unpack_from("<QI", payload, 0)
    off = struct.calcsize("<QI")
    ids, off = _take(payload, off, "<i8", n)
    counts, off = _take(payload, off, "<u4", n)
    X_id, off = _take(payload, off, "<f8", n * d)
    total = int(counts.sum())
    X_sf, off = _take(payload, off, "<f8", total * d)
    if off != len(payload):
        raise ValueError("trailing bytes in payload")
    X_sf = X_sf.reshape(total, d).astype(np.float64)
    selfies = np.split(X_sf, np.cumsum(counts.astype(np.int64))[:-1])
    return PairDataset(X_id.reshape(n, d).astype(np.float64), selfies, ids.astype(np.int64))


def save_dataset(dataset, path):
    atomic_write(path, dataset_to_bytes(dataset))


def load_dataset(path):
    return dataset_from_bytes(read_bytes(path))
