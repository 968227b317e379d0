"""Binary checkpoints.

Layout (little-endian)::

    b"MANTA1"  u16 version  u32 entry_count
    entry_count x { u16 name_len, name (utf-8), u8 rank, rank x u32 extent, f64 payload }

The run configuration snapshot is stored as the entry ``config.text``: its
utf-8 bytes as a rank-1 f64 array.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"MANTA1"
VERSION = 1
CONFIG_ENTRY = "config.text"
MAX_RANK = 8


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: dict  # name -> float64 ndarray
    config_text: str = ""
    version: int = VERSION


def encode(ckpt):
    entries = dict(ckpt.arrays)
    if ckpt.config_text:
        entries[CONFIG_ENTRY] = np.frombuffer(ckpt.config_text.encode("utf-8"), dtype=np.uint8).astype(np.float64)
    parts = [MAGIC, struct.pack("<HI", ckpt.version, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF or arr.ndim > MAX_RANK:
            raise CheckpointFormatError(f"entry {name!r} cannot be encoded (rank {arr.ndim})")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(path, ckpt):
    with open(path, "wb") as fh:
        fh.write(encode(ckpt))


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n, what):
        end = self.pos + n
        if end > len(self.raw):
            raise CheckpointFormatError(
                f"truncated at byte {self.pos} reading {what}: expected {end} bytes, file has {len(self.raw)}")
        out = self.raw[self.pos:end]
        self.pos = end
        return out

    def unpack(self, fmt, what):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def decode(raw):
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"bad magic {bytes(raw[:len(MAGIC)])!r} at byte 0, expected {MAGIC!r}")
    r = _Reader(raw)
    r.pos = len(MAGIC)
    version, count = r.unpack("<HI", "header")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version} at byte {len(MAGIC)}, expected {VERSION}")
    arrays = {}
    config_text = ""
    for i in range(count):
        start = r.pos
        (name_len,) = r.unpack("<H", f"entry {i} name length")
        name = r.take(name_len, f"entry {i} name").decode("utf-8")
        (rank,) = r.unpack("<B", f"entry {name!r} rank")
        if rank > MAX_RANK:
            raise CheckpointFormatError(f"entry {name!r} at byte {start}: rank {rank} exceeds {MAX_RANK}")
        shape = r.unpack(f"<{rank}I", f"entry {name!r} extents")
        size = 8 * int(np.prod(shape, dtype=np.int64))
        payload = r.take(size, f"entry {name!r} payload")
        arr = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
        if name in arrays or (name == CONFIG_ENTRY and config_text):
            raise CheckpointFormatError(f"duplicate entry {name!r} at byte {start}")
        if name == CONFIG_ENTRY:
            config_text = arr.astype(np.uint8).tobytes().decode("utf-8")
        else:
            arrays[name] = arr
    if r.pos != len(raw):
        raise CheckpointFormatError(f"trailing data at byte {r.pos}: expected {r.pos} bytes, file has {len(raw)}")
    return Checkpoint(arrays, config_text, version)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
        if head != MAGIC:
            raise CheckpointFormatError(f"bad magic {head!r} at byte 0, expected {MAGIC!r}")
        raw = head + fh.read()
    return decode(raw)


def from_model(params, config_text=""):
    arrays = {name: t.data.copy() for name, t in params.named().items()}
    arrays.update(params.buffers())
    return Checkpoint(arrays, config_text)


def into_model(ckpt, params):
    """Copy checkpoint arrays into ``params`` in place; names and shapes must match exactly."""
    named = params.named()
    buffers = params.buffers()
    expected = set(named) | set(buffers)
    missing = expected - set(ckpt.arrays)
    extra = set(ckpt.arrays) - expected
    if missing or extra:
        raise CheckpointFormatError(f"checkpoint entries do not match model: missing {sorted(missing)}, "
                                    f"unexpected {sorted(extra)}")
    for name, t in named.items():
        arr = ckpt.arrays[name]
        if arr.shape != t.shape:
            raise CheckpointFormatError(f"entry {name!r}: checkpoint shape {arr.shape}, model shape {t.shape}")
        t.data = arr.copy()
    params.load_buffers({k: ckpt.arrays[k] for k in buffers})
    return params
