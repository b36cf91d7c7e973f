import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swinsight.checkpoint import MAGIC, Checkpoint, decode, encode, load_checkpoint, save_checkpoint
from swinsight.errors import (
    BadMagicError,
    CheckpointError,
    ChecksumError,
    IntegrityError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from swinsight.swin import SwinModel, preset
from swinsight.training import AdamState, EpochRecord, TrainTrace

TINY = preset("swin-micro", image_size=8, patch_size=2, embed_dim=8, depths=(1, 1), num_heads=(2, 2), window_size=2)


def _ckpt(dtype="float32", seed=3):
    model = SwinModel.initialize(TINY, seed, dtype)
    adam = AdamState(
        {k: np.full(v.shape, 0.5, v.dtype) for k, v in model.params.items()},
        {k: np.full(v.shape, 0.25, v.dtype) for k, v in model.params.items()},
        7,
    )
    trace = TrainTrace([EpochRecord(1, 0.7, 0.5, 0.69, 0.55), EpochRecord(2, 0.1 + 0.2, 0.9, 0.4, 0.85)])
    return Checkpoint.from_model(model, adam, trace, seed, "A+B")


def _reseal(body: bytes) -> bytes:
    return MAGIC + body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


@pytest.mark.parametrize("dtype", ["float32", "float64"])
def test_round_trip_bit_exact(tmp_path, dtype):
    ck = _ckpt(dtype)
    path = save_checkpoint(tmp_path / "m.swck", ck)
    back = load_checkpoint(path)
    assert back.config == ck.config and back.seed == 3 and back.train_set == "A+B"
    assert back.class_map == {0: "real", 1: "cgi"}
    assert list(back.params) == list(ck.params)
    for k, v in ck.params.items():
        assert back.params[k].dtype == v.dtype
        assert back.params[k].tobytes() == v.tobytes()
        assert back.adam.m[k].tobytes() == ck.adam.m[k].tobytes()
    assert back.adam.t == 7
    assert [r.train_loss for r in back.trace.records] == [0.7, 0.1 + 0.2]
    assert encode(back) == encode(ck)
    model = back.to_model()
    x = np.random.default_rng(0).standard_normal((2, 3, 8, 8)).astype(dtype)
    np.testing.assert_array_equal(model.predict_logits(x), SwinModel(ck.config, ck.to_model().params).predict_logits(x))


def test_layout_header():
    data = encode(_ckpt())
    assert data[:4] == b"SWCK"
    assert struct.unpack("<I", data[4:8])[0] == 1
    (n,) = struct.unpack("<Q", data[8:16])
    assert b"image_size=8" in data[16 : 16 + n]
    assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[4:-4]) & 0xFFFFFFFF


def test_bad_magic(tmp_path):
    data = bytearray(encode(_ckpt()))
    data[0] ^= 0xFF
    with pytest.raises(BadMagicError):
        decode(bytes(data))


def test_checksum_error_on_flipped_payload_byte():
    data = bytearray(encode(_ckpt()))
    data[len(data) // 2] ^= 0x01
    with pytest.raises(ChecksumError):
        decode(bytes(data))


def test_truncated():
    data = encode(_ckpt())
    with pytest.raises(TruncatedCheckpointError):
        decode(data[: len(data) // 2])
    with pytest.raises(TruncatedCheckpointError):
        decode(data[:9])


def test_version_mismatch():
    body = bytearray(encode(_ckpt())[4:-4])
    body[0:4] = struct.pack("<I", 2)
    with pytest.raises(VersionMismatchError):
        decode(_reseal(bytes(body)))


def test_shape_table_inconsistency_is_integrity_error():
    ck = Checkpoint(TINY, {"w": np.zeros((2, 3), np.float32)})
    data = encode(ck)
    body = bytearray(data[4:-4])
    # the single dim pair sits right before the 24 raw bytes of payload
    dims_at = len(body) - 24 - 16
    assert struct.unpack("<QQ", body[dims_at : dims_at + 16]) == (2, 3)
    body[dims_at : dims_at + 16] = struct.pack("<QQ", 2, 2)
    with pytest.raises(IntegrityError):
        decode(_reseal(bytes(body)))
    body[dims_at : dims_at + 16] = struct.pack("<QQ", 2, 4)
    with pytest.raises(IntegrityError):
        decode(_reseal(bytes(body)))


def test_errors_are_distinct_types():
    kinds = {BadMagicError, ChecksumError, TruncatedCheckpointError, VersionMismatchError, IntegrityError}
    assert len(kinds) == 5 and all(issubclass(k, CheckpointError) for k in kinds)
    for a in kinds:
        for b in kinds - {a}:
            assert not issubclass(a, b)


def test_atomic_save_leaves_no_temp_files(tmp_path):
    save_checkpoint(tmp_path / "x.swck", _ckpt())
    save_checkpoint(tmp_path / "x.swck", _ckpt(seed=4))
    assert sorted(p.name for p in tmp_path.iterdir()) == ["x.swck"]
    assert load_checkpoint(tmp_path / "x.swck").seed == 4


@settings(max_examples=100, deadline=None)
@given(
    st.dictionaries(
        st.text("abcdefgh._", min_size=1, max_size=12),
        st.tuples(st.lists(st.integers(0, 4), max_size=3), st.sampled_from(["<f4", "<f8"]), st.integers(0, 2**31)),
        max_size=4,
    )
)
def test_arbitrary_tensor_sets_round_trip(tensors):
    params = {}
    for name, (shape, dt, seed) in tensors.items():
        params[name] = np.random.default_rng(seed).standard_normal(shape).astype(dt)
    back = decode(encode(Checkpoint(TINY, params, seed=1)))
    assert list(back.params) == list(params)
    for k, v in params.items():
        assert back.params[k].shape == v.shape and back.params[k].tobytes() == v.tobytes()


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_any_single_byte_corruption_is_detected(data):
    raw = encode(Checkpoint(TINY, {"w": np.arange(6, dtype=np.float32).reshape(2, 3)}))
    pos = data.draw(st.integers(0, len(raw) - 1))
    flip = data.draw(st.integers(1, 255))
    bad = bytearray(raw)
    bad[pos] ^= flip
    with pytest.raises(CheckpointError):
        decode(bytes(bad))
