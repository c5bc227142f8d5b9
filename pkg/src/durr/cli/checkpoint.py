"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"DURRCKPT"  u32 version
    str unit                    # "restorer" | "policy"
    str arch                    # JSON architecture descriptor
    u32 n_params, n_params * record
    str opt_method, u64 opt_step, u32 n_slots, n_slots * record
    str metadata                # JSON

    str    := u32 byte length, utf-8 bytes
    record := str name, u32 rank, rank * u32 dims, u32 payload bytes, u32 crc32(payload),
              payload as float32

Float64 tensors are stored as float32.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..tensorcore import NetworkParams, OptState, Tensor

MAGIC = b"DURRCKPT"
VERSION = 1
UNITS = ("restorer", "policy")


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class IntegrityError(CheckpointError):
    pass


class ArchMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: NetworkParams
    opt_state: OptState | None = None
    meta: dict = field(default_factory=dict)

    @property
    def unit(self) -> str:
        return self.params.arch["unit"]


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(_canonical(obj).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- writing

def _w_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _w_record(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    _w_str(buf, name)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(struct.pack("<II", len(payload), zlib.crc32(payload)))
    buf.write(payload)


def to_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _w_str(buf, ckpt.unit)
    _w_str(buf, _canonical(ckpt.params.arch))
    buf.write(struct.pack("<I", len(ckpt.params)))
    for name, t in ckpt.params.items():
        _w_record(buf, name, t.data)
    opt = ckpt.opt_state
    slots = opt.arrays() if opt is not None else {}
    _w_str(buf, opt.method if opt is not None else "")
    buf.write(struct.pack("<Q", opt.step if opt is not None else 0))
    buf.write(struct.pack("<I", len(slots)))
    for key in sorted(slots):
        _w_record(buf, key, slots[key])
    _w_str(buf, _canonical(ckpt.meta))
    return buf.getvalue()


def checkpoint_save(params: NetworkParams, opt_state: OptState | None, meta: dict,
                    path: str | os.PathLike) -> None:
    data = to_bytes(Checkpoint(params, opt_state, meta))
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------- reading

class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(f"truncated checkpoint while reading {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def str(self, what: str) -> str:
        return self.take(self.u32(what), what).decode("utf-8")

    def record(self) -> tuple[str, np.ndarray]:
        name = self.str("record name")
        rank = self.u32(f"rank of {name}")
        dims = struct.unpack(f"<{rank}I", self.take(4 * rank, f"dims of {name}"))
        nbytes, crc = struct.unpack("<II", self.take(8, f"length of {name}"))
        expected = 4 * int(np.prod(dims, dtype=np.int64))
        if nbytes != expected:
            raise IntegrityError(f"record {name!r}: payload length {nbytes} != {expected} for dims {dims}")
        payload = self.take(nbytes, f"payload of {name}")
        if zlib.crc32(payload) != crc:
            raise IntegrityError(f"record {name!r}: checksum mismatch")
        return name, np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def from_bytes(data: bytes, expect_unit: str | None = None) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise BadMagicError("not a DURR checkpoint (bad magic)")
    version = r.u32("version")
    if version != VERSION:
        raise VersionError(f"checkpoint format version {version}, this build reads {VERSION}")
    unit = r.str("unit")
    if unit not in UNITS:
        raise IntegrityError(f"unknown unit kind {unit!r}")
    if expect_unit is not None and unit != expect_unit:
        raise ArchMismatchError(f"expected a {expect_unit} checkpoint, found {unit}")
    arch = json.loads(r.str("arch"))
    params = [r.record() for _ in range(r.u32("parameter count"))]
    method = r.str("optimizer method")
    step = r.u64("optimizer step")
    slots = dict(r.record() for _ in range(r.u32("optimizer slot count")))
    meta = json.loads(r.str("metadata"))
    if r.pos != len(data):
        raise IntegrityError(f"{len(data) - r.pos} trailing bytes after checkpoint")
    net = NetworkParams([(k, Tensor(v)) for k, v in params], arch)
    opt = OptState.from_arrays(method, step, slots) if method else None
    return Checkpoint(net, opt, meta)


def checkpoint_load(path: str | os.PathLike, expect_unit: str | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), expect_unit)


def load_into(params: NetworkParams, path: str | os.PathLike) -> Checkpoint:
    """Load ``path`` into existing ``params``; any mismatch is raised before values change."""
    ckpt = checkpoint_load(path, expect_unit=params.arch.get("unit"))
    if _canonical(ckpt.params.arch) != _canonical(params.arch):
        raise ArchMismatchError("checkpoint architecture differs from the target network")
    params.load_arrays({k: t.data for k, t in ckpt.params.items()})
    return ckpt
