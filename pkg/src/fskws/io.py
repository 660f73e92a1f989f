"""Binary and text containers: FMAP feature maps, WGT1 weights, key=value files."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FMAP_MAGIC = b"FMAP"
WGT_MAGIC = b"WGT1"


def write_fmap(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f4")
    if values.ndim == 1:
        values = values[None, :]
    if values.ndim != 2:
        raise ValueError(f"FMAP holds a matrix, got shape {values.shape}")
    rows, cols = values.shape
    with open(path, "wb") as fh:
        fh.write(FMAP_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(np.ascontiguousarray(values).tobytes())


def read_fmap(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FMAP_MAGIC:
        raise ValueError(f"{path}: not an FMAP file")
    rows, cols = struct.unpack_from("<II", raw, 4)
    expected = 12 + 4 * rows * cols
    if len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} does not match {rows}x{cols} header")
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(rows, cols).astype(np.float32)


def write_weights(path, weights: dict) -> None:
    """Entries are written in the iteration order of ``weights``."""
    with open(path, "wb") as fh:
        fh.write(WGT_MAGIC)
        fh.write(struct.pack("<I", len(weights)))
        for name, arr in weights.items():
            arr = np.asarray(arr, dtype="<f4")
            key = name.encode("utf-8")
            fh.write(struct.pack("<H", len(key)))
            fh.write(key)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def read_weights(path) -> dict:
    raw = Path(path).read_bytes()
    if raw[:4] != WGT_MAGIC:
        raise ValueError(f"{path}: not a WGT1 file")
    (count,) = struct.unpack_from("<I", raw, 4)
    pos = 8
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
        pos += 4 * size
    if pos != len(raw):
        raise ValueError(f"{path}: {len(raw) - pos} trailing bytes")
    return out


def write_kv(path, mapping: dict) -> None:
    lines = [f"{k}={_fmt(v)}" for k, v in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_kv(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v)
