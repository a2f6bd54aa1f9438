"""LHT1 tensor files and weight directories.

An LHT1 file is the magic ``LHT1``, a little-endian u32 rank, ``rank`` u32
extents, then the row-major little-endian float32 payload. A weight
directory holds one LHT1 file per named parameter plus ``manifest.txt``
with ``name file`` lines.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"LHT1"
MANIFEST = "manifest.txt"


class FormatError(ValueError):
    pass


def encode(arr) -> bytes:
    a = np.require(arr, dtype="<f4", requirements="C")
    header = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + a.tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError("missing LHT1 magic")
    (rank,) = struct.unpack_from("<I", buf, 4)
    off = 8 + 4 * rank
    if len(buf) < off:
        raise FormatError("truncated LHT1 header")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) != off + 4 * count:
        raise FormatError(f"payload holds {(len(buf) - off) // 4} values, dims {dims} need {count}")
    return np.frombuffer(buf, dtype="<f4", offset=off, count=count).astype(np.float32).reshape(dims)


def save(path, arr) -> None:
    Path(path).write_bytes(encode(arr))


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def save_weights(directory, params: Mapping[str, np.ndarray]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in sorted(params):
        fname = name.replace("/", "__") + ".lht"
        save(d / fname, params[name])
        lines.append(f"{name} {fname}")
    (d / MANIFEST).write_text("\n".join(lines) + "\n")


def load_weights(directory) -> dict[str, np.ndarray]:
    d = Path(directory)
    out = {}
    for line in (d / MANIFEST).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, fname = line.split()
        out[name] = load(d / fname)
    return out
