"""Versioned binary checkpoint container shared by all networks.

Layout (little-endian):
    8s   magic "RMGTNSR1"
    I    format version
    I    number of tensors
    B    optimizer-state flag (0/1)
    per tensor: I name length, name utf-8, I ndim, ndim * q shape, float64 data
    if flag: Q optimizer step count, then per tensor first and second moments
"""
from __future__ import annotations

import hashlib
import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from repmolgen.nn.params import ParamStore

MAGIC = b"RMGTNSR1"
FORMAT_VERSION = 1


def _write_array(buf: io.BytesIO, arr: np.ndarray) -> None:
    buf.write(arr.astype("<f8").tobytes(order="C"))


def _read_array(buf: io.BytesIO, shape: tuple) -> np.ndarray:
    n = int(np.prod(shape)) if shape else 1
    raw = buf.read(8 * n)
    if len(raw) != 8 * n:
        raise ValueError("checkpoint truncated while reading tensor data")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write bytes via a temp file + rename so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, store: ParamStore, include_optimizer: bool = False) -> None:
    buf = io.BytesIO()
    names = store.names()
    buf.write(MAGIC)
    buf.write(struct.pack("<II B", FORMAT_VERSION, len(names), 1 if include_optimizer else 0))
    for name in names:
        encoded = name.encode("utf-8")
        data = store[name].data
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", data.ndim))
        buf.write(struct.pack(f"<{data.ndim}q", *data.shape))
        _write_array(buf, data)
    if include_optimizer:
        buf.write(struct.pack("<Q", store.step_count))
        for name in names:
            _write_array(buf, store.moment1(name))
            _write_array(buf, store.moment2(name))
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path) -> ParamStore:
    raw = Path(path).read_bytes()
    buf = io.BytesIO(raw)
    magic = buf.read(8)
    if magic != MAGIC:
        raise ValueError(f"bad checkpoint magic in {path}: {magic!r}")
    version, n_tensors, has_opt = struct.unpack("<II B", buf.read(9))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version} in {path}")
    store = ParamStore()
    shapes: dict[str, tuple] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<I", buf.read(4))
        name = buf.read(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", buf.read(4))
        shape = struct.unpack(f"<{ndim}q", buf.read(8 * ndim)) if ndim else ()
        store.add(name, _read_array(buf, shape))
        shapes[name] = shape
    if has_opt:
        (step,) = struct.unpack("<Q", buf.read(8))
        m = {}
        v = {}
        for name in store.names():
            m[name] = _read_array(buf, shapes[name])
            v[name] = _read_array(buf, shapes[name])
        store.set_optimizer_state(step, m, v)
    return store


def checkpoint_hash(path) -> str:
    """SHA-256 of the checkpoint file bytes; used for determinism contracts."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
