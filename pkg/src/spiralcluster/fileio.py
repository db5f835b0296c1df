"""Binary artifact formats and small text sidecars.

Three little-endian binary containers share one layout discipline:

* ``ATC1`` image stacks:  magic, u32 count, u32 height, u32 width,
  then count*height*width float32 row-major pixel values.
* ``ATL1`` latent matrices:  magic, u32 count, u32 dim, then
  count*dim float32 values.
* ``ATM1`` model checkpoints:  magic, u32 header length, a UTF-8 JSON
  header (architecture, seeds, step count), then the float32 parameter
  payload in declaration order.

Labels travel in a ``id,label`` CSV sidecar aligned by row index.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import MagicMismatchError, NonFiniteDataError, TruncatedFileError

IMAGE_MAGIC = b"ATC1"
LATENT_MAGIC = b"ATL1"
MODEL_MAGIC = b"ATM1"


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a temp file + rename so readers never see partial files."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _read_exact(buf: bytes, offset: int, count: int, path, what: str) -> bytes:
    if offset + count > len(buf):
        raise TruncatedFileError(
            f"{path}: truncated {what}: expected {offset + count} bytes, file has {len(buf)}"
        )
    return buf[offset : offset + count]


def _check_magic(buf: bytes, magic: bytes, path) -> None:
    if len(buf) < 4 or buf[:4] != magic:
        raise MagicMismatchError(
            f"{path}: bad magic {buf[:4]!r}, expected {magic!r}"
        )


def write_images(path, values: np.ndarray) -> None:
    """Write an (n, h, w) stack as an ATC1 file."""
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 3:
        raise ValueError(f"image stack must be (n, h, w), got {values.shape}")
    n, h, w = values.shape
    header = IMAGE_MAGIC + struct.pack("<III", n, h, w)
    atomic_write_bytes(path, header + values.astype("<f4").tobytes())


def read_images(path) -> np.ndarray:
    """Read an ATC1 file into an (n, h, w) float64 array."""
    buf = Path(path).read_bytes()
    _check_magic(buf, IMAGE_MAGIC, path)
    n, h, w = struct.unpack("<III", _read_exact(buf, 4, 12, path, "header"))
    payload = _read_exact(buf, 16, 4 * n * h * w, path, "pixel payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(n, h, w)
    if not np.all(np.isfinite(values)):
        raise NonFiniteDataError(f"{path}: image payload contains non-finite values")
    return values.astype(np.float64)


def write_latents(path, values: np.ndarray) -> None:
    """Write an (n, dim) matrix as an ATL1 file."""
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise ValueError(f"latent matrix must be (n, dim), got {values.shape}")
    n, dim = values.shape
    header = LATENT_MAGIC + struct.pack("<II", n, dim)
    atomic_write_bytes(path, header + values.astype("<f4").tobytes())


def read_latents(path) -> np.ndarray:
    """Read an ATL1 file into an (n, dim) float64 array."""
    buf = Path(path).read_bytes()
    _check_magic(buf, LATENT_MAGIC, path)
    n, dim = struct.unpack("<II", _read_exact(buf, 4, 8, path, "header"))
    payload = _read_exact(buf, 12, 4 * n * dim, path, "latent payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(n, dim)
    if not np.all(np.isfinite(values)):
        raise NonFiniteDataError(f"{path}: latent payload contains non-finite values")
    return values.astype(np.float64)


def write_model_blob(path, header: dict, params: list[np.ndarray]) -> None:
    """Write an ATM1 checkpoint: JSON header + flat float32 parameters."""
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.asarray(p, dtype="<f4").tobytes() for p in params)
    atomic_write_bytes(
        path, MODEL_MAGIC + struct.pack("<I", len(head)) + head + payload
    )


def read_model_blob(path) -> tuple[dict, np.ndarray]:
    """Read an ATM1 checkpoint into (header, flat float64 parameter vector)."""
    buf = Path(path).read_bytes()
    _check_magic(buf, MODEL_MAGIC, path)
    (head_len,) = struct.unpack("<I", _read_exact(buf, 4, 4, path, "header length"))
    head = _read_exact(buf, 8, head_len, path, "JSON header")
    header = json.loads(head.decode("utf-8"))
    payload = buf[8 + head_len :]
    if len(payload) % 4 != 0:
        raise TruncatedFileError(f"{path}: parameter payload is not a float32 multiple")
    params = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(params)):
        raise NonFiniteDataError(f"{path}: parameter payload contains non-finite values")
    return header, params


def write_labels_csv(path, ids, labels) -> None:
    """Write the `id,label` sidecar; None labels serialize as empty cells."""
    rows = ["id,label"]
    for i, lab in zip(ids, labels):
        rows.append(f"{i},{'' if lab is None else lab}")
    atomic_write_text(path, "\n".join(rows) + "\n")


def read_labels_csv(path) -> tuple[list[str], list[str | None]]:
    ids: list[str] = []
    labels: list[str | None] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["id", "label"]:
            raise ValueError(f"{path}: expected 'id,label' header, got {header}")
        for row in reader:
            if not row:
                continue
            ids.append(row[0])
            labels.append(row[1] if len(row) > 1 and row[1] != "" else None)
    return ids, labels
