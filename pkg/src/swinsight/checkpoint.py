"""Versioned binary checkpoint (``.swck``).

Layout, all integers little-endian::

    b"SWCK"
    u32 version (= 1)
    u64 n + n bytes   config blob, canonical key=value text
    u64 n + n bytes   class map, "index=name" lines
    u32 tensor count
    per tensor: u32 n + name, u8 dtype (0 f32, 1 f64), u8 rank, rank x u64 dims, raw data
    u32 CRC32 of every byte after the magic

Adam moments are stored as tensors named ``adam.m.<param>``/``adam.v.<param>``
with the step count in ``adam.t``; the training trace is a float64 tensor
``trace`` with columns epoch, train_loss, train_acc, val_loss, val_acc.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    IntegrityError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from .swin import CLASS_NAMES, ModelConfig, SwinModel
from .training import AdamState, EpochRecord, TrainTrace

MAGIC = b"SWCK"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    class_map: dict[int, str] = field(default_factory=lambda: dict(enumerate(CLASS_NAMES)))
    adam: AdamState | None = None
    trace: TrainTrace | None = None
    seed: int = 0
    train_set: str = ""

    @classmethod
    def from_model(cls, model: SwinModel, adam=None, trace=None, seed: int = 0, train_set: str = "") -> "Checkpoint":
        params = {k: v.data.copy() for k, v in model.params.items()}
        return cls(model.config, params, dict(enumerate(CLASS_NAMES)), adam, trace, seed, train_set)

    def to_model(self) -> SwinModel:
        from .autodiff import Tensor

        model = SwinModel(
            self.config,
            {k: Tensor(v, requires_grad=True, dtype=v.dtype, name=k) for k, v in self.params.items()},
        )
        model.shape_audit()
        return model


def _blob(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<Q", len(raw)) + raw


def _tensor_record(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if not arr.flags.c_contiguous:
        arr = np.array(arr, order="C")
    le = arr.dtype.newbyteorder("<")
    if le not in _DTYPE_CODES:
        raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
    raw_name = name.encode("utf-8")
    head = struct.pack("<I", len(raw_name)) + raw_name
    head += struct.pack("<BB", _DTYPE_CODES[le], arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.astype(le, copy=False).tobytes()


def _config_text(ckpt: Checkpoint) -> str:
    if "\n" in ckpt.train_set or "=" in ckpt.train_set:
        raise ValueError(f"train_set name {ckpt.train_set!r} may not contain '=' or newlines")
    return ckpt.config.to_text() + f"seed={int(ckpt.seed)}\ntrain_set={ckpt.train_set}\n"


def encode(ckpt: Checkpoint) -> bytes:
    tensors: list[tuple[str, np.ndarray]] = list(ckpt.params.items())
    if ckpt.adam is not None:
        for name in ckpt.params:
            if name in ckpt.adam.m:
                tensors.append((f"adam.m.{name}", ckpt.adam.m[name]))
                tensors.append((f"adam.v.{name}", ckpt.adam.v[name]))
        tensors.append(("adam.t", np.array([ckpt.adam.t], dtype=np.float64)))
    if ckpt.trace is not None and len(ckpt.trace):
        rows = [[r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc] for r in ckpt.trace.records]
        tensors.append(("trace", np.array(rows, dtype=np.float64)))
    class_text = "".join(f"{i}={n}\n" for i, n in sorted(ckpt.class_map.items()))
    body = struct.pack("<I", VERSION) + _blob(_config_text(ckpt)) + _blob(class_text)
    body += struct.pack("<I", len(tensors))
    body += b"".join(_tensor_record(n, a) for n, a in tensors)
    return MAGIC + body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    data = encode(ckpt)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


class _Short(Exception):
    pass


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise _Short
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _parse_body(body: bytes):
    r = _Reader(body)
    (version,) = r.unpack("<I")
    (n,) = r.unpack("<Q")
    config_text = r.take(n).decode("utf-8")
    (n,) = r.unpack("<Q")
    class_text = r.take(n).decode("utf-8")
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<I")
        name = r.take(n).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in _CODE_DTYPES:
            raise IntegrityError(f"tensor {name!r}: unknown dtype code {code}")
        dims = r.unpack(f"<{rank}Q")
        dt = _CODE_DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.uint64)) * dt.itemsize
        tensors[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    return version, config_text, class_text, tensors, r.pos == len(body)


def decode(data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}; not a SWCK checkpoint")
    if len(data) < 4 + 4 + 4:
        raise TruncatedCheckpointError(f"checkpoint is only {len(data)} bytes")
    body, (stored_crc,) = data[4:-4], struct.unpack("<I", data[-4:])
    crc_ok = (zlib.crc32(body) & 0xFFFFFFFF) == stored_crc
    try:
        parsed = _parse_body(body)
    except _Short:
        parsed = None
    except (UnicodeDecodeError, IntegrityError, ValueError, OverflowError):
        parsed = "garbled"
    if not crc_ok:
        if parsed is None:
            raise TruncatedCheckpointError("checkpoint ends before its declared contents")
        raise ChecksumError("CRC32 mismatch; checkpoint is corrupted")
    version = struct.unpack("<I", body[:4])[0]
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, this build reads version {VERSION}")
    if parsed is None or parsed == "garbled" or not parsed[4]:
        raise IntegrityError("shape table does not match payload length")
    _, config_text, class_text, tensors, _ = parsed

    raw = {}
    for line in config_text.splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            raw[k.strip()] = v.strip()
    seed = int(raw.pop("seed", "0"))
    train_set = raw.pop("train_set", "")
    config = ModelConfig.from_mapping(raw)
    class_map = {}
    for line in class_text.splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            class_map[int(k)] = v.strip()

    adam = None
    if "adam.t" in tensors:
        adam = AdamState(t=int(tensors.pop("adam.t")[0]))
        for name in [n for n in tensors if n.startswith("adam.m.")]:
            pname = name[len("adam.m.") :]
            adam.m[pname] = tensors.pop(name)
            adam.v[pname] = tensors.pop("adam.v." + pname)
    trace = None
    if "trace" in tensors:
        trace = TrainTrace()
        for row in tensors.pop("trace"):
            trace.append(EpochRecord(int(row[0]), *(float(x) for x in row[1:])))
    return Checkpoint(config, tensors, class_map, adam, trace, seed, train_set)


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())
