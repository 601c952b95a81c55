"""Self-describing named-array archive for model checkpoints.

Layout (all integers little-endian)::

    b"M2W1"  u32 count
    count x [ u16 name_len | name utf-8 | u8 dtype | u8 rank | u32 dims[rank]
              | payload | u32 crc32(payload) ]
    u32 crc32(header region)

The header region is the magic, the count and every entry header (name,
dtype, rank, dims), payload bytes excluded.  A ``__meta__`` entry holds the
model configuration and run metadata as UTF-8 JSON.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptionError, SchemaError

MAGIC = b"M2W1"
META = "__meta__"

DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1"), 3: np.dtype("<i8")}


def _code(a: np.ndarray) -> int:
    for code, dt in DTYPES.items():
        if a.dtype.kind == dt.kind and a.dtype.itemsize == dt.itemsize:
            return code
    raise SchemaError(f"unsupported array dtype {a.dtype}")


def encode(arrays: dict[str, np.ndarray]) -> bytes:
    """Serialize ``arrays`` in insertion order."""
    header = bytearray(MAGIC + struct.pack("<I", len(arrays)))
    body = bytearray(MAGIC + struct.pack("<I", len(arrays)))
    for name, a in arrays.items():
        a = np.asarray(a)
        code = _code(a)
        raw = name.encode("utf-8")
        head = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, a.ndim)
        head += struct.pack(f"<{a.ndim}I", *a.shape)
        payload = np.ascontiguousarray(a, dtype=DTYPES[code]).tobytes()
        header += head
        body += head + payload + struct.pack("<I", zlib.crc32(payload))
    body += struct.pack("<I", zlib.crc32(bytes(header)))
    return bytes(body)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptionError(f"archive truncated at byte {len(self.buf)} (needed {self.pos + n})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes) -> dict[str, np.ndarray]:
    """Parse and fully verify an archive; raises before returning anything partial."""
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CorruptionError("bad magic: not an M2W1 archive")
    (count,) = r.unpack("<I")
    header = bytearray(MAGIC + struct.pack("<I", count))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        start = r.pos
        (n,) = r.unpack("<H")
        try:
            name = r.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptionError("entry name is not valid UTF-8") from None
        code, rank = r.unpack("<BB")
        if code not in DTYPES:
            raise CorruptionError(f"entry {name!r}: unknown dtype code {code}")
        dims = r.unpack(f"<{rank}I")
        header += buf[start:r.pos]
        dt = DTYPES[code]
        size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        payload = r.take(size)
        (crc,) = r.unpack("<I")
        if zlib.crc32(payload) != crc:
            raise CorruptionError(f"entry {name!r}: payload checksum mismatch")
        out[name] = np.frombuffer(payload, dtype=dt).reshape(dims).copy()
    (crc,) = r.unpack("<I")
    if zlib.crc32(bytes(header)) != crc:
        raise CorruptionError("header checksum mismatch")
    if r.pos != len(buf):
        raise CorruptionError(f"{len(buf) - r.pos} trailing bytes after archive")
    return out


def write_archive(path, arrays: dict[str, np.ndarray]) -> None:
    """Atomic write: a temp file in the same directory is renamed into place."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(arrays))
    os.replace(tmp, path)


def read_archive(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def list_entries(path) -> list[tuple[str, str, tuple]]:
    """(name, dtype, shape) of every entry, in archive order."""
    return [(k, str(v.dtype), v.shape) for k, v in read_archive(path).items()]


# --------------------------------------------------------------------------
# model checkpoints


def save_checkpoint(model, path, meta: dict | None = None) -> None:
    from .model import model_config_to_dict

    info = {"model_config": model_config_to_dict(model.cfg)}
    info.update(meta or {})
    blob = json.dumps(info, sort_keys=True, separators=(",", ":")).encode("utf-8")
    arrays = {META: np.frombuffer(blob, dtype=np.uint8)}
    for name, p in model.named_state():
        arrays[name] = p.data
    write_archive(path, arrays)


def read_meta(arrays: dict[str, np.ndarray]) -> dict:
    if META not in arrays:
        raise SchemaError(f"archive has no {META} entry")
    try:
        return json.loads(arrays[META].tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{META} is not valid JSON: {exc}") from None


def load_checkpoint(path):
    """Rebuild the model described by the archive and load every array.

    Returns ``(model, meta)``.  Any missing array raises SchemaError naming it.
    """
    from . import tensor as T
    from .model import ForecastModel, model_config_from_dict

    arrays = read_archive(path)
    meta = read_meta(arrays)
    try:
        cfg = model_config_from_dict(meta["model_config"])
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"model_config in {META} is malformed: {exc}") from None
    bits = 32 if arrays.get("backbone.wte", np.zeros(0, np.float32)).dtype == np.float32 else 64
    with T.precision(bits):
        model = ForecastModel(cfg)
    for name, p in model.named_state():
        if name not in arrays:
            raise SchemaError(f"checkpoint is missing array {name!r}")
        a = arrays[name]
        if a.shape != p.shape:
            raise SchemaError(f"array {name!r} has shape {a.shape}, model expects {p.shape}")
        p.data = a
    return model, meta
