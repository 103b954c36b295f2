"""Versioned binary checkpoints for :class:`~hetface.model.EmbeddingModel`.

Layout (all integers little-endian)::

    b"HVCKPT"                 magic
    u32                       format version
    u32 input_dim
    u32 n_hidden, u32 * n_hidden hidden dims
    u32 embedding_dim
    u8  activation            0 = relu, 1 = tanh
    u64 init_seed
    f64 *                     W0 (row-major), b0, W1, b1, ...
    u64                       BLAKE2b-64 of the parameter bytes
"""

import struct

import numpy as np

from .errors import ChecksumMismatch, FormatVersionMismatch
from .fileio import atomic_write, checksum64, read_bytes
from .model import ACTIVATIONS, EmbeddingModel, ModelConfig

MAGIC = b"HVCKPT"
VERSION = 1


def to_bytes(model: EmbeddingModel) -> bytes:
    cfg = model.config
    head = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", cfg.input_dim)]
    head.append(struct.pack("<I", len(cfg.hidden_dims)))
    head.extend(struct.pack("<I", h) for h in cfg.hidden_dims)
    head.append(struct.pack("<IBQ", cfg.embedding_dim, ACTIVATIONS.index(cfg.activation),
                            cfg.init_seed))
    params = b"".join(p.astype("<f8").tobytes() for p in model.parameters())
    return b"".join(head) + params + struct.pack("<Q", checksum64(params))


def from_bytes(data: bytes) -> EmbeddingModel:
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise FormatVersionMismatch("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", data, len(MAGIC))
    if version != VERSION:
        raise FormatVersionMismatch(f"unsupported checkpoint version {version}")
    try:
        off = len(MAGIC) + 4
        input_dim, n_hidden = struct.unpack_from("<II", data, off)
        off += 8
        hidden = struct.unpack_from(f"<{n_hidden}I", data, off)
        off += 4 * n_hidden
        emb_dim, act, seed = struct.unpack_from("<IBQ", data, off)
        off += struct.calcsize("<IBQ")
        config = ModelConfig(input_dim, hidden, emb_dim, ACTIVATIONS[act], seed)
    except (struct.error, IndexError, ValueError) as exc:
        raise ChecksumMismatch(f"corrupt checkpoint header: {exc}") from exc

    dims = config.layer_dims
    n_params = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if len(data) != off + 8 * n_params + 8:
        raise ChecksumMismatch("checkpoint size does not match its header")
    params = data[off: off + 8 * n_params]
    (stored,) = struct.unpack_from("<Q", data, off + 8 * n_params)
    if stored != checksum64(params):
        raise ChecksumMismatch("parameter checksum mismatch")

    flat = np.frombuffer(params, dtype="<f8").astype(np.float64)
    weights, biases, pos = [], [], 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(flat[pos: pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        biases.append(flat[pos: pos + fan_out].copy())
        pos += fan_out
    return EmbeddingModel(config, weights, biases)


def save_checkpoint(model: EmbeddingModel, path):
    atomic_write(path, to_bytes(model))


def load_checkpoint(path) -> EmbeddingModel:
    return from_bytes(read_bytes(path))
