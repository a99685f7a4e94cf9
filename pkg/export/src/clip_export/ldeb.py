"""Writers (and verification readers) for the wire formats shared with
the robustness toolkit.

LDEB: magic ``LDEB``, little-endian u32 version=1, u32 dtype=1 (float32
LE), u32 dim, u64 count, then count*dim float32 LE values row-major.
Metadata CSV: header ``index,label,group``, -1 marks an absent id.
Prompt manifest CSV: header ``file,role,group_id,row,name``.

All writes are atomic (temp file + rename) and byte-deterministic.
"""
from __future__ import annotations

import csv
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"LDEB"
VERSION = 1
DTYPE_F32 = 1
HEADER = struct.Struct("<4sIIIQ")

ROLE_CLASSIFICATION = "classification"
ROLE_DEBIAS = "debias"


class FormatError(ValueError):
    pass


def _atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_embeddings(data: np.ndarray, path: str | Path) -> None:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise FormatError(f"embeddings must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise FormatError("embeddings contain NaN or Inf")
    header = HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.shape[1], arr.shape[0])
    _atomic_write(Path(path), header + arr.astype("<f4").tobytes())


def read_embeddings(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: shorter than the 24-byte header")
    magic, version, dtype, dim, count = HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION or dtype != DTYPE_F32:
        raise FormatError(f"{path}: bad header ({magic!r}, v{version}, dtype {dtype})")
    if len(raw) - HEADER.size != count * dim * 4:
        raise FormatError(f"{path}: payload size mismatch")
    return np.frombuffer(raw, dtype="<f4", offset=HEADER.size).astype(np.float32).reshape(count, dim)


def rows_unit_norm(arr: np.ndarray, tol: float = 1e-4) -> bool:
    if arr.shape[0] == 0:
        return True
    norms = np.linalg.norm(arr.astype(np.float64), axis=1)
    return bool(np.all(np.abs(norms - 1.0) <= tol))


def write_metadata(path: str | Path, labels, groups, n: int) -> None:
    lab = np.full(n, -1, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    grp = np.full(n, -1, dtype=np.int64) if groups is None else np.asarray(groups, dtype=np.int64)
    lines = ["index,label,group"]
    lines += [f"{i},{lab[i]},{grp[i]}" for i in range(n)]
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode())


def write_prompt_manifest(path: str | Path, rows: list[tuple[str, str, int, int, str]],
                          notes: list[str] | None = None) -> None:
    """Rows are (file, role, group_id, row, name); notes become leading
    ``# note:`` comment lines."""
    buf = []
    for note in notes or []:
        buf.append(f"# note: {note}")
    import io

    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["file", "role", "group_id", "row", "name"])
    for row in rows:
        writer.writerow(list(row))
    _atomic_write(Path(path), ("\n".join(buf) + ("\n" if buf else "") + out.getvalue()).encode())
