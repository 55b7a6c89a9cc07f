"""File formats: PGM images, .pvol float volumes, JSON-lines records."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

PVOL_MAGIC = b"PVL1"


class FormatError(ValueError):
    pass


def write_pgm(path: str | Path, image: np.ndarray, lo: float = -1.0, hi: float = 1.0) -> None:
    """Binary 8-bit PGM; values are mapped from [lo, hi] onto 0..255."""
    if image.ndim != 2:
        raise FormatError(f"PGM wants a 2-d image, got shape {image.shape}")
    scaled = np.clip((image.astype(np.float64) - lo) / (hi - lo), 0.0, 1.0)
    data = np.round(scaled * 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1
    w, h, maxval = (int(x) for x in fields)
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    pixels = np.frombuffer(raw[pos:pos + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise FormatError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w).copy()


def write_pvol(path: str | Path, volume: np.ndarray) -> None:
    """Float volume: magic PVL1, uint32 ndim, uint32 extents, float32 payload (LE)."""
    arr = np.ascontiguousarray(volume, dtype="<f4")
    with open(path, "wb") as f:
        f.write(PVOL_MAGIC)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def read_pvol(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != PVOL_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        (ndim,) = struct.unpack("<I", f.read(4))
        shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        count = int(np.prod(shape))
        raw = f.read(4 * count)
        if len(raw) != 4 * count:
            raise FormatError(f"{path}: truncated volume payload")
        return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def append_jsonl(path: str | Path, record: dict, fsync: bool = False) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record) + "\n")
        if fsync:
            f.flush()
            import os
            os.fsync(f.fileno())


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


class LossCurveLog:
    """Append-only training curve: one {step, loss_name, value} record per line."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def __call__(self, step: int, loss_name: str, value: float) -> None:
        self._fh.write(json.dumps({"step": int(step), "loss_name": loss_name,
                                   "value": float(value)}) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
