"""STMW checkpoint format: byte layout, round trips, error contracts."""

import os
import struct

import numpy as np
import pytest

from stmlab import checkpoint
from stmlab.checkpoint import CheckpointError
from stmlab.mixers import StmKind
from stmlab.model import ModelConfig, build_model, forward_classify, named_parameters
from stmlab.tensor import Tensor

from conftest import make_rng

CFG = ModelConfig(stm=StmKind.DWCONV, depths=(1, 1, 1, 1), widths=(8, 16, 32, 64),
                  heads=(1, 2, 4, 8), num_classes=5, input_size=64,
                  window_size=4, halo_size=1)


def test_byte_layout(tmp_path):
    model = build_model(CFG, seed=1)
    path = str(tmp_path / "m.stmw")
    checkpoint.save(model, path)
    with open(path, "rb") as fh:
        data = fh.read()
    assert data[:4] == b"STMW"
    version, count = struct.unpack_from("<II", data, 4)
    assert version == 1
    params = list(named_parameters(model))
    assert count == len(params)
    # hand-parse the first record
    off = 12
    (name_len,) = struct.unpack_from("<H", data, off)
    off += 2
    name = data[off : off + name_len].decode()
    off += name_len
    dtype, rank = struct.unpack_from("<BB", data, off)
    off += 2
    shape = struct.unpack_from(f"<{rank}Q", data, off)
    off += 8 * rank
    want_name, want_arr = params[0]
    assert name == want_name == "stem.conv1.w"
    assert dtype == 0 and shape == want_arr.shape
    payload = np.frombuffer(data[off : off + 4 * want_arr.size], dtype="<f4")
    np.testing.assert_array_equal(payload.reshape(shape), want_arr)


def test_roundtrip_bit_identical_forward(tmp_path):
    model = build_model(CFG, seed=2)
    path = str(tmp_path / "m.stmw")
    checkpoint.save(model, path)
    reloaded = checkpoint.load(CFG, path)
    rng = make_rng(120)
    x = Tensor(rng.random((1, 3, 64, 64), dtype=np.float32))
    a = forward_classify(model, x).data
    b = forward_classify(reloaded, x).data
    assert np.array_equal(a, b)


def test_save_twice_identical_bytes(tmp_path):
    p1, p2 = str(tmp_path / "a.stmw"), str(tmp_path / "b.stmw")
    checkpoint.save(build_model(CFG, seed=3), p1)
    checkpoint.save(build_model(CFG, seed=3), p2)
    with open(p1, "rb") as f1, open(p2, "rb") as f2:
        assert f1.read() == f2.read()


def test_bad_magic(tmp_path):
    path = str(tmp_path / "bad.stmw")
    with open(path, "wb") as fh:
        fh.write(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint.read_entries(path)


def test_truncated_file(tmp_path):
    model = build_model(CFG, seed=4)
    path = str(tmp_path / "m.stmw")
    checkpoint.save(model, path)
    with open(path, "rb") as fh:
        data = fh.read()
    cut = str(tmp_path / "cut.stmw")
    with open(cut, "wb") as fh:
        fh.write(data[: len(data) // 2])
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint.read_entries(cut)


def test_shape_mismatch_names_tensor(tmp_path):
    model = build_model(CFG, seed=5)
    path = str(tmp_path / "m.stmw")
    checkpoint.save(model, path)
    other = ModelConfig(stm=StmKind.DWCONV, depths=(1, 1, 1, 1), widths=(16, 32, 64, 128),
                        heads=(1, 2, 4, 8), num_classes=5, input_size=64,
                        window_size=4, halo_size=1)
    with pytest.raises(CheckpointError, match="stem.conv2.w"):  # first mismatch
        checkpoint.load(other, path)


def test_wrong_model_layout_mismatch(tmp_path):
    model = build_model(CFG, seed=6)
    path = str(tmp_path / "m.stmw")
    checkpoint.save(model, path)
    other = ModelConfig(stm=StmKind.SWIN, depths=(1, 1, 1, 1), widths=(8, 16, 32, 64),
                        heads=(1, 2, 4, 8), num_classes=5, input_size=64,
                        window_size=4, halo_size=1)
    with pytest.raises(CheckpointError):
        checkpoint.load(other, path)


def test_no_temp_files_left(tmp_path):
    path = str(tmp_path / "m.stmw")
    checkpoint.save(build_model(CFG, seed=7), path)
    leftovers = [f for f in os.listdir(tmp_path) if f.endswith(".tmp")]
    assert leftovers == []


def test_phantom_refused(tmp_path):
    from stmlab.model import phantom_model

    with pytest.raises(CheckpointError):
        checkpoint.save(phantom_model(CFG), str(tmp_path / "p.stmw"))
