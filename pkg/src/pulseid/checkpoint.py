"""Binary checkpoint format.

Layout (all integers little-endian u32):

    magic "PIDC" | version | entry count
    per entry: name length | UTF-8 name | rank | extents... | f64 LE payload

Names are flat; parameter groups use prefixes such as ``pulse/`` or
``morph/``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import Tensor

MAGIC = b"PIDC"
VERSION = 1


def save_tensors(path, named: dict[str, Tensor]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(named))]
    for name, t in named.items():
        enc = name.encode("utf-8")
        arr = t.data
        chunks.append(struct.pack("<I", len(enc)))
        chunks.append(enc)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path) -> dict[str, Tensor]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    off = 4

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"{path}: truncated at byte {off}")
        piece = blob[off : off + n]
        off += n
        return piece

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    out: dict[str, Tensor] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape)
        out[name] = Tensor(data.copy())
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    return out


def split_groups(named: dict[str, Tensor]) -> dict[str, dict[str, Tensor]]:
    """Group flat 'prefix/rest' names by prefix."""
    groups: dict[str, dict[str, Tensor]] = {}
    for name, t in named.items():
        prefix, _, rest = name.partition("/")
        groups.setdefault(prefix, {})[rest] = t
    return groups


def join_groups(groups: dict[str, dict[str, Tensor]]) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for prefix, entries in groups.items():
        for rest, t in entries.items():
            out[f"{prefix}/{rest}"] = t
    return out
