"""Named parameter maps and the ``SCKP`` checkpoint container.

Layout (all little-endian)::

    b"SCKP" | version u16 | hash_len u16 | config hash (utf-8)
    | stage_len u16 | stage tag (utf-8) | seed i64 | record count u32
    then per record:
    name_len u16 | name (utf-8) | rank u8 | dims u32 * rank | f32 payload
"""
from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigHashMismatch, FormatError

CKPT_MAGIC = b"SCKP"
CKPT_VERSION = 1


@dataclass
class ParameterStore:
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    config_hash: str = ""
    stage: str = ""
    seed: int = 0

    @classmethod
    def from_module(cls, module: torch.nn.Module, config_hash: str, stage: str = "",
                    seed: int = 0, prefix: str = "") -> "ParameterStore":
        tensors = OrderedDict()
        for name, t in module.state_dict().items():
            tensors[prefix + name] = t.detach().cpu().numpy().astype(np.float32).copy()
        return cls(tensors, config_hash, stage, seed)

    def load_into(self, module: torch.nn.Module, prefix: str = "") -> None:
        state = module.state_dict()
        wanted = {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}
        missing = set(state) - set(wanted)
        extra = set(wanted) - set(state)
        if missing or extra:
            raise FormatError(f"parameter names differ: missing={sorted(missing)} extra={sorted(extra)}")
        for k, ref in state.items():
            if tuple(ref.shape) != wanted[k].shape:
                raise FormatError(f"{k}: shape {wanted[k].shape} != expected {tuple(ref.shape)}")
        module.load_state_dict({k: torch.from_numpy(wanted[k].copy()).to(state[k].dtype) for k in state})

    def digest(self) -> str:
        """sha256 over names, shapes and raw float32 bytes."""
        h = hashlib.sha256()
        for name, arr in self.tensors.items():
            h.update(name.encode())
            h.update(repr(arr.shape).encode())
            h.update(np.asarray(arr, dtype="<f4").tobytes(order="C"))
        return h.hexdigest()

    def equals(self, other: "ParameterStore") -> bool:
        if list(self.tensors) != list(other.tensors):
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.tensors.values(), other.tensors.values())
        )


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def save_checkpoint(store: ParameterStore, path) -> None:
    out = bytearray(CKPT_MAGIC)
    out += struct.pack("<H", CKPT_VERSION)
    out += _pack_str(store.config_hash)
    out += _pack_str(store.stage)
    out += struct.pack("<qI", store.seed, len(store.tensors))
    for name, arr in store.tensors.items():
        # asarray keeps 0-d shapes; ascontiguousarray would promote them to 1-d
        arr = np.asarray(arr, dtype="<f4")
        out += _pack_str(name)
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes(order="C")
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def load_checkpoint(path, expected_hash: str | None = None) -> ParameterStore:
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    if r.take(4) != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    config_hash = r.string()
    if expected_hash is not None and config_hash != expected_hash:
        raise ConfigHashMismatch(
            f"{path}: checkpoint config hash {config_hash} != expected {expected_hash}")
    stage = r.string()
    seed, count = r.unpack("<qI")
    tensors = OrderedDict()
    for _ in range(count):
        name = r.string()
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = arr
    if r.pos != len(data):
        raise FormatError(f"{path}: trailing bytes after last record")
    return ParameterStore(tensors, config_hash, stage, seed)
