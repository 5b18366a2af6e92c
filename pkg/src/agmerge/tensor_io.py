"""Binary tensor container, 16-bit label PNGs and instance metadata JSON.

Tensor layout: ``b"AGMT"``, version byte, dtype byte, ndim byte, ``ndim``
little-endian uint32 dims, then the row-major little-endian float32 payload.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np
from PIL import Image

MAGIC = b"AGMT"
VERSION = 1
DTYPE_FLOAT32 = 0
_MAX_DIM = 2**32 - 1


class TensorFormatError(ValueError):
    """Base class for malformed tensor files."""


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class UnsupportedDtypeError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    def __init__(self, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"truncated payload: expected {expected} bytes, got {actual}")


class LabelOverflowError(ValueError):
    pass


def encode_tensor(grid) -> bytes:
    arr = np.asarray(grid)
    if arr.ndim not in (2, 3):
        raise ValueError(f"ndim must be 2 or 3, got {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise ValueError(f"all dims must be >= 1, got {arr.shape}")
    if any(d > _MAX_DIM for d in arr.shape):
        raise OverflowError(f"dimension does not fit uint32: {arr.shape}")
    header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_FLOAT32, arr.ndim)
    header += struct.pack("<%dI" % arr.ndim, *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return header + payload


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < 7 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, dtype, ndim = struct.unpack_from("<BBB", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if dtype != DTYPE_FLOAT32:
        raise UnsupportedDtypeError(f"unsupported dtype code {dtype}")
    if ndim not in (2, 3):
        raise TensorFormatError(f"unsupported ndim {ndim}")
    offset = 7 + 4 * ndim
    if len(data) < offset:
        raise TruncatedPayloadError(offset, len(data))
    dims = struct.unpack_from("<%dI" % ndim, data, 7)
    if any(d < 1 for d in dims):
        raise TensorFormatError(f"zero-sized dim in {dims}")
    expected = int(np.prod(dims, dtype=np.int64)) * 4
    actual = len(data) - offset
    if actual < expected:
        raise TruncatedPayloadError(expected, actual)
    if actual > expected:
        raise TensorFormatError(f"{actual - expected} trailing bytes after the payload")
    return np.frombuffer(data, dtype="<f4", offset=offset).reshape(dims).astype(np.float32)


def write_tensor(path, grid) -> None:
    data = encode_tensor(grid)
    with open(path, "wb") as f:
        f.write(data)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_tensor(f.read())


def write_label_png(path, labels) -> None:
    """Write an instance label grid as a single-channel 16-bit PNG."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValueError(f"label grid must be 2-D, got shape {arr.shape}")
    if arr.size and arr.min() < 0:
        raise ValueError("labels must be non-negative")
    if arr.size and arr.max() >= 65536:
        raise LabelOverflowError(f"label {int(arr.max())} does not fit 16 bits")
    Image.fromarray(arr.astype(np.uint16)).save(path, format="PNG")


def read_label_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I", "L"):
            raise ValueError(f"unexpected PNG mode {im.mode}")
        return np.array(im).astype(np.int64)


@dataclass
class InstanceRecord:
    id: int
    class_id: int
    confidence: float
    bbox: tuple  # (x0, y0, x1, y1), end-exclusive
    area: int

    def __post_init__(self):
        if self.id < 1:
            raise ValueError(f"instance id must be positive, got {self.id}")
        if self.area <= 0:
            raise ValueError(f"instance area must be positive, got {self.area}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of [0, 1]: {self.confidence}")
        self.bbox = tuple(int(v) for v in self.bbox)


def write_instances_json(path, records) -> None:
    ordered = sorted(records, key=lambda r: (-r.confidence, r.id))
    rows = []
    for r in ordered:
        row = asdict(r)
        row["bbox"] = list(r.bbox)
        rows.append({k: row[k] for k in ("id", "class_id", "confidence", "bbox", "area")})
    text = json.dumps(rows, indent=2) if rows else "[]"
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        f.write(text + "\n")
    os.replace(tmp, path)


def read_instances_json(path) -> list:
    with open(path) as f:
        rows = json.load(f)
    return [InstanceRecord(id=r["id"], class_id=r["class_id"],
                           confidence=r["confidence"], bbox=tuple(r["bbox"]),
                           area=r["area"]) for r in rows]
