"""Checkpoint files and attention heatmap export.

Checkpoint layout (little-endian)::

    magic  b"LPCKPT01"
    u32    format version
    u32    length of the JSON header, then the UTF-8 JSON header (spec echo etc.)
    u32    tensor count, then per tensor:
             u16 name length, name bytes, u8 ndim, u32 * ndim extents,
             float64 * prod(extents) row-major data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .base import AttentionTrace

MAGIC = b"LPCKPT01"
VERSION = 1


def save_checkpoint(path, state: dict[str, np.ndarray], header: dict) -> None:
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(state)))
        for name, arr in state.items():
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a locproj checkpoint")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    header = json.loads(data[pos:pos + hlen].decode())
    pos += hlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += 8 * n
    return header, state


def _to_gray(a: np.ndarray) -> np.ndarray:
    lo, hi = float(a.min()), float(a.max())
    if hi - lo <= 0.0:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.rint((a - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    """Binary (P5) 8-bit PGM, min-max normalized."""
    img = _to_gray(np.asarray(image, dtype=np.float64))
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def export_attention_trace(trace: AttentionTrace, path) -> list[Path]:
    """Write one heatmap per (layer, query) and a per-layer aggregate; return the paths."""
    maps = trace.maps
    if maps.ndim != 4:
        raise ValueError(f"expected an unbatched trace [layers,M,H,W], got {maps.shape}")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for layer in range(maps.shape[0]):
        for q in range(maps.shape[1]):
            p = out / f"layer{layer:02d}_query{q:04d}.pgm"
            write_pgm(p, maps[layer, q])
            written.append(p)
        p = out / f"layer{layer:02d}_all.pgm"
        write_pgm(p, maps[layer].sum(axis=0))
        written.append(p)
    return written
