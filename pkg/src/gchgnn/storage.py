"""Binary file formats: FMAT1 feature matrices and GCHG1 checkpoints."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadCheckpoint, MissingFile

FMAT_MAGIC = b"FMAT1\n"
CHECKPOINT_MAGIC = b"GCHG1\n"


def write_fmat(path, matrix: np.ndarray) -> None:
    """Write a dense matrix: magic, u32-LE rows, u32-LE cols, f32-LE row-major."""
    m = np.ascontiguousarray(np.asarray(matrix, dtype=np.float32))
    if m.ndim != 2:
        raise ValueError(f"fmat needs a 2-D matrix, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(FMAT_MAGIC)
        fh.write(struct.pack("<II", m.shape[0], m.shape[1]))
        fh.write(m.tobytes(order="C"))


def read_fmat(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    with open(path, "rb") as fh:
        magic = fh.read(len(FMAT_MAGIC))
        if magic != FMAT_MAGIC:
            raise BadCheckpoint(f"{path}: bad fmat magic {magic!r}")
        rows, cols = struct.unpack("<II", fh.read(8))
        data = fh.read(rows * cols * 4)
        if len(data) != rows * cols * 4:
            raise BadCheckpoint(f"{path}: truncated fmat payload")
        return np.frombuffer(data, dtype="<f4").reshape(rows, cols).copy()


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named f32 matrices: per entry, name length u32, utf-8 name,
    rows u32, cols u32, f32-LE row-major data."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, arr in arrays.items():
            a = np.ascontiguousarray(np.asarray(arr, dtype=np.float32))
            if a.ndim != 2:
                raise ValueError(f"checkpoint entry {name!r} must be 2-D")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", a.shape[0], a.shape[1]))
            fh.write(a.tobytes(order="C"))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise BadCheckpoint(f"{path}: bad checkpoint magic {magic!r}")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise BadCheckpoint(f"{path}: truncated entry header")
            (name_len,) = struct.unpack("<I", head)
            name = fh.read(name_len).decode("utf-8")
            dims = fh.read(8)
            if len(dims) != 8:
                raise BadCheckpoint(f"{path}: truncated dims for {name!r}")
            rows, cols = struct.unpack("<II", dims)
            data = fh.read(rows * cols * 4)
            if len(data) != rows * cols * 4:
                raise BadCheckpoint(f"{path}: truncated data for {name!r}")
            if name in arrays:
                raise BadCheckpoint(f"{path}: duplicate entry {name!r}")
            arrays[name] = np.frombuffer(data, dtype="<f4").reshape(rows, cols).copy()
    return arrays
