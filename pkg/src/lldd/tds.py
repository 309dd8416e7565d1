"""Tensor dataset (TDS) container: the package's bit-exact file format.

Layout, all integers little-endian:

========  =====================================================
bytes     meaning
========  =====================================================
4         magic ``LLDD``
u32       format version (currently 1)
u32       entry count
per entry:
  u16     name length in bytes, then UTF-8 name
  u8      dtype code (1 = float32, 2 = float64)
  u8      rank
  u64*r   dims
  raw     values, row-major, little-endian
========  =====================================================

Round trips are byte-lossless for both dtypes; malformed input raises
:class:`TDSFormatError`.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LLDD"
VERSION = 1

_DTYPE_BY_CODE = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_BY_KIND = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class TDSFormatError(ValueError):
    """Malformed or inconsistent TDS container."""


Entries = list[tuple[str, np.ndarray]]


def dump_bytes(entries: Entries) -> bytes:
    names = [name for name, _ in entries]
    if len(set(names)) != len(names):
        raise TDSFormatError("duplicate entry names")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(entries)))
    for name, arr in entries:
        arr = np.asarray(arr)
        if arr.dtype not in _CODE_BY_KIND:
            raise TDSFormatError(f"entry {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise TDSFormatError(f"entry name too long ({len(raw)} bytes)")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", _CODE_BY_KIND[arr.dtype], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).astype(
            _DTYPE_BY_CODE[_CODE_BY_KIND[arr.dtype]], copy=False).tobytes())
    return buf.getvalue()


def load_bytes(data: bytes) -> dict[str, np.ndarray]:
    view = memoryview(data)
    if len(view) < 12:
        raise TDSFormatError("truncated header")
    if bytes(view[:4]) != MAGIC:
        raise TDSFormatError(f"bad magic {bytes(view[:4])!r}")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise TDSFormatError(f"unsupported version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        if off + 2 > len(view):
            raise TDSFormatError("truncated entry header")
        (name_len,) = struct.unpack_from("<H", view, off)
        off += 2
        name = bytes(view[off:off + name_len]).decode("utf-8")
        off += name_len
        if off + 2 > len(view):
            raise TDSFormatError(f"entry {name!r}: truncated descriptor")
        code, rank = struct.unpack_from("<BB", view, off)
        off += 2
        if code not in _DTYPE_BY_CODE:
            raise TDSFormatError(f"entry {name!r}: unknown dtype code {code}")
        if off + 8 * rank > len(view):
            raise TDSFormatError(f"entry {name!r}: truncated dims")
        dims = struct.unpack_from(f"<{rank}Q", view, off)
        off += 8 * rank
        dtype = _DTYPE_BY_CODE[code]
        n_bytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        if off + n_bytes > len(view):
            raise TDSFormatError(f"entry {name!r}: payload shorter than declared")
        arr = np.frombuffer(view[off:off + n_bytes], dtype=dtype).reshape(dims)
        off += n_bytes
        if name in out:
            raise TDSFormatError(f"duplicate entry name {name!r}")
        out[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    if off != len(view):
        raise TDSFormatError(f"{len(view) - off} trailing bytes after last entry")
    return out


def write(path: str | Path, entries: Entries) -> int:
    """Write a container; returns the byte count."""
    data = dump_bytes(entries)
    Path(path).write_bytes(data)
    return len(data)


def read(path: str | Path) -> dict[str, np.ndarray]:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise TDSFormatError(f"no such file: {path}") from None
    return load_bytes(data)
