"""STMW checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  "STMW"
    version u32      (currently 1)
    count   u32      number of tensors
    per tensor:
        name_len u16, name UTF-8
        dtype    u8   (0 = float32)
        rank     u8
        extents  rank * u64
        payload  raw little-endian float32

Tensor order is the model's deterministic parameter enumeration, so a
round trip reproduces the model bit for bit.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from stmlab.model import Model, ModelConfig, empty_model, named_parameters, phantom_model

MAGIC = b"STMW"
VERSION = 1
DTYPE_F32 = 0


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint file."""


def save(model: Model, path: str) -> None:
    """Write the model's parameters atomically (temp file + rename)."""
    if model.phantom:
        raise CheckpointError("refusing to save a shape-only (phantom) model")
    params = list(named_parameters(model))
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", VERSION, len(params)))
            for name, arr in params:
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_entries(path: str) -> list[tuple[str, np.ndarray]]:
    """Parse an STMW file into (name, array) pairs, validating the framing."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 12:
        raise CheckpointError(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    entries = []
    for i in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + name_len].decode("utf-8")
            off += name_len
            dtype, rank = struct.unpack_from("<BB", data, off)
            off += 2
            if dtype != DTYPE_F32:
                raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype {dtype}")
            shape = struct.unpack_from(f"<{rank}Q", data, off)
            off += 8 * rank
            size = int(np.prod(shape)) if rank else 1
            nbytes = 4 * size
            if off + nbytes > len(data):
                raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
            arr = np.frombuffer(data[off : off + nbytes], dtype="<f4").reshape(shape)
            off += nbytes
            entries.append((name, np.ascontiguousarray(arr)))
        except struct.error as exc:
            raise CheckpointError(f"{path}: truncated at tensor {i}") from exc
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return entries


def load(config: ModelConfig, path: str) -> Model:
    """Materialize a model from `path`, verifying names and shapes first."""
    entries = read_entries(path)
    expected = phantom_model(config)
    want = list(named_parameters(expected))
    if len(entries) != len(want):
        raise CheckpointError(
            f"{path}: {len(entries)} tensors, config expects {len(want)}"
        )
    for (got_name, got_arr), (want_name, want_arr) in zip(entries, want):
        if got_name != want_name:
            raise CheckpointError(
                f"{path}: tensor {got_name!r} where config expects {want_name!r}"
            )
        if got_arr.shape != want_arr.shape:
            raise CheckpointError(
                f"{path}: tensor {got_name!r} has shape {got_arr.shape}, "
                f"config expects {want_arr.shape}"
            )
    model = empty_model(config)
    by_name = dict(entries)
    for name, arr in named_parameters(model):
        arr[...] = by_name[name]
    return model
