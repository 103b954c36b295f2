"""Shared helpers for the binary file formats: atomic writes and checksums."""

import hashlib
import os
import tempfile

from .errors import IoFailure


def checksum64(data: bytes) -> int:
    """64-bit BLAKE2b digest of ``data`` as an unsigned integer."""
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def atomic_write(path, data):
    """Write ``data`` (bytes or str) to ``path`` via a temp file and rename.

    Nothing is left behind at ``path`` if the write fails.
    """
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise IoFailure(f"output directory does not exist: {directory}")
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoFailure(str(exc)) from exc


def read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
