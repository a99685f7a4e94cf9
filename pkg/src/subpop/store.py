"""Embedding data model and on-disk formats.

Three file formats live here and are shared with external producers
(e.g. the exporter package):

* LDEB binary embeddings: magic ``LDEB``, little-endian u32 version (=1),
  u32 dtype tag (=1, float32 LE), u32 dim, u64 count, then ``count * dim``
  float32 LE values row-major.  24-byte header, byte-exact and
  deterministic.
* Metadata CSV with header ``index,label,group``; one row per instance;
  ``-1`` marks an absent label or group.
* Prompt manifest CSV with header ``file,role,group_id,row,name`` tying
  prompt embedding files to their human-readable strings.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConsistencyError,
    FormatError,
    LengthError,
    ParseError,
    ShapeError,
    ValidationError,
)

MAGIC = b"LDEB"
VERSION = 1
DTYPE_F32 = 1
HEADER = struct.Struct("<4sIIIQ")  # magic, version, dtype, dim, count

# A row counts as unit-norm if its L2 norm is within this band of 1.
NORM_TOL = 1e-4

ROLE_CLASSIFICATION = "classification"
ROLE_DEBIAS = "debias"


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Immutable N x e matrix of finite float32 embeddings.

    ``normalized`` records whether every row is unit-L2 (within NORM_TOL);
    pass ``normalized=None`` to have it measured from the data.
    """

    data: np.ndarray
    normalized: bool = None  # type: ignore[assignment]

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ShapeError(f"embedding data must be 2-D, got shape {arr.shape}")
        arr = np.array(arr, dtype=np.float32, order="C")  # own copy; frozen below
        if not np.all(np.isfinite(arr)):
            raise ValidationError("embedding data contains NaN or Inf")
        if arr.shape[1] < 1:
            raise ValidationError("embedding dim must be >= 1")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        if self.normalized is None:
            object.__setattr__(self, "normalized", bool(_rows_unit(arr)))
        elif self.normalized and not _rows_unit(arr):
            raise ValidationError("normalized flag set but rows are not unit-L2")

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def _rows_unit(arr: np.ndarray) -> bool:
    if arr.shape[0] == 0:
        return True
    norms = np.linalg.norm(arr.astype(np.float64), axis=1)
    return bool(np.all(np.abs(norms - 1.0) <= NORM_TOL))


@dataclass(frozen=True)
class GroupedDataset:
    """Embeddings joined with optional class labels and group ids.

    Labels/groups are required for evaluation but not for label-free
    training; when present they must cover every instance and stay in
    range.
    """

    embeddings: EmbeddingMatrix
    labels: np.ndarray | None
    groups: np.ndarray | None
    class_count: int
    group_count: int

    def __post_init__(self):
        n = self.embeddings.count
        for name, ids, bound in (
            ("labels", self.labels, self.class_count),
            ("groups", self.groups, self.group_count),
        ):
            if ids is None:
                continue
            arr = np.array(ids, dtype=np.int64)
            if arr.shape != (n,):
                raise ShapeError(f"{name} must have length {n}, got {arr.shape}")
            if arr.size and (arr.min() < 0 or arr.max() >= bound):
                raise ValidationError(f"{name} ids must lie in [0, {bound})")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def count(self) -> int:
        return self.embeddings.count


@dataclass(frozen=True)
class PromptSet:
    """Classification prompt embeddings plus debiasing prompt groups.

    Each debias group holds >= 2 rows (semantically opposite descriptions
    of one attribute).  All matrices share the embedding dim.
    """

    classification: EmbeddingMatrix
    debias_groups: tuple[EmbeddingMatrix, ...]
    classification_names: tuple[str, ...] = ()
    debias_names: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "debias_groups", tuple(self.debias_groups))
        object.__setattr__(self, "classification_names", tuple(self.classification_names))
        object.__setattr__(
            self, "debias_names", tuple(tuple(g) for g in self.debias_names)
        )
        e = self.classification.dim
        for g in self.debias_groups:
            if g.dim != e:
                raise ShapeError("all prompt matrices must share the embedding dim")
            if g.count < 2:
                raise ValidationError("each debias group needs >= 2 prompts")
        if self.classification_names and len(self.classification_names) != self.classification.count:
            raise ValidationError("classification name count mismatch")
        if self.debias_names:
            if len(self.debias_names) != len(self.debias_groups):
                raise ValidationError("debias name group count mismatch")
            for names, g in zip(self.debias_names, self.debias_groups):
                if len(names) != g.count:
                    raise ValidationError("debias name row count mismatch")

    @property
    def dim(self) -> int:
        return self.classification.dim

    @property
    def class_count(self) -> int:
        return self.classification.count


def write_embeddings(m: EmbeddingMatrix, path: str | Path) -> None:
    """Write ``m`` to ``path`` in the LDEB format (deterministic bytes)."""
    arr = m.data
    if not np.all(np.isfinite(arr)):
        # Guards against in-place mutation after construction.
        raise ValidationError("embedding data contains NaN or Inf")
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    header = HEADER.pack(MAGIC, VERSION, DTYPE_F32, m.dim, m.count)
    Path(path).write_bytes(header + payload)


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read an LDEB file; the normalized flag is measured from row norms."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise LengthError(f"{path}: file shorter than the 24-byte header")
    magic, version, dtype, dim, count = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype tag {dtype}")
    expected = count * dim * 4
    actual = len(raw) - HEADER.size
    if actual != expected:
        raise LengthError(
            f"{path}: payload holds {actual} bytes, header declares {expected}"
        )
    flat = np.frombuffer(raw, dtype="<f4", offset=HEADER.size)
    data = flat.astype(np.float32).reshape(count, dim)
    return EmbeddingMatrix(data=data, normalized=None)


def write_metadata(
    path: str | Path,
    labels: np.ndarray | None,
    groups: np.ndarray | None,
    n: int,
) -> None:
    """Write the ``index,label,group`` CSV; absent vectors become -1."""
    lab = np.full(n, -1, dtype=np.int64) if labels is None else np.asarray(labels)
    grp = np.full(n, -1, dtype=np.int64) if groups is None else np.asarray(groups)
    if lab.shape != (n,) or grp.shape != (n,):
        raise ShapeError("labels/groups must have length n")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "label", "group"])
        for i in range(n):
            w.writerow([i, int(lab[i]), int(grp[i])])


def read_metadata(path: str | Path, n: int) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Read a metadata CSV covering indices 0..n-1 exactly once.

    Returns (labels, groups); a vector that is -1 everywhere is reported
    as absent (None).
    """
    labels = np.full(n, -1, dtype=np.int64)
    groups = np.full(n, -1, dtype=np.int64)
    seen = np.zeros(n, dtype=bool)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["index", "label", "group"]:
            raise ParseError(f"{path}: expected header 'index,label,group', got {header}")
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"{path}: expected 3 fields, got {row}")
            try:
                idx, lab, grp = (int(v) for v in row)
            except ValueError as exc:
                raise ParseError(f"{path}: non-integer field in {row}") from exc
            if idx < 0 or idx >= n:
                raise ConsistencyError(f"{path}: index {idx} outside 0..{n - 1}")
            if seen[idx]:
                raise ConsistencyError(f"{path}: duplicate index {idx}")
            seen[idx] = True
            labels[idx] = lab
            groups[idx] = grp
    if not seen.all():
        missing = int(np.flatnonzero(~seen)[0])
        raise ConsistencyError(f"{path}: missing index {missing}")
    return (
        None if (labels == -1).all() else labels,
        None if (groups == -1).all() else groups,
    )


@dataclass(frozen=True)
class ManifestRow:
    file: str
    role: str
    group_id: int
    row: int
    name: str


def write_prompt_manifest(path: str | Path, rows: list[ManifestRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["file", "role", "group_id", "row", "name"])
        for r in rows:
            w.writerow([r.file, r.role, r.group_id, r.row, r.name])


def read_prompt_manifest(path: str | Path) -> list[ManifestRow]:
    rows: list[ManifestRow] = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        while header and header[0].startswith("#"):  # leading comment lines
            header = next(reader, None)
        if header != ["file", "role", "group_id", "row", "name"]:
            raise ParseError(f"{path}: bad prompt manifest header {header}")
        for raw in reader:
            if not raw or raw[0].startswith("#"):
                continue
            if len(raw) != 5:
                raise ParseError(f"{path}: expected 5 fields, got {raw}")
            file, role, group_id, row, name = raw
            if role not in (ROLE_CLASSIFICATION, ROLE_DEBIAS):
                raise ParseError(f"{path}: unknown role {role!r}")
            try:
                rows.append(ManifestRow(file, role, int(group_id), int(row), name))
            except ValueError as exc:
                raise ParseError(f"{path}: non-integer field in {raw}") from exc
    return rows


def save_prompt_set(prompts: PromptSet, out_dir: str | Path, stem: str = "prompts") -> Path:
    """Write prompt embeddings as LDEB files plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[ManifestRow] = []

    cls_file = f"{stem}_class.ldeb"
    write_embeddings(prompts.classification, out / cls_file)
    cls_names = prompts.classification_names or tuple(
        f"class {i}" for i in range(prompts.class_count)
    )
    for i, name in enumerate(cls_names):
        rows.append(ManifestRow(cls_file, ROLE_CLASSIFICATION, -1, i, name))

    for j, grp in enumerate(prompts.debias_groups):
        grp_file = f"{stem}_debias_g{j}.ldeb"
        write_embeddings(grp, out / grp_file)
        names = (
            prompts.debias_names[j]
            if prompts.debias_names
            else tuple(f"group {j} prompt {i}" for i in range(grp.count))
        )
        for i, name in enumerate(names):
            rows.append(ManifestRow(grp_file, ROLE_DEBIAS, j, i, name))

    manifest = out / f"{stem}.csv"
    write_prompt_manifest(manifest, rows)
    return manifest


def load_prompt_set(manifest_path: str | Path) -> PromptSet:
    """Assemble a PromptSet from a manifest and the LDEB files it references."""
    manifest_path = Path(manifest_path)
    rows = read_prompt_manifest(manifest_path)
    if not rows:
        raise ConsistencyError(f"{manifest_path}: empty prompt manifest")
    matrices: dict[str, EmbeddingMatrix] = {}
    for r in rows:
        if r.file not in matrices:
            matrices[r.file] = read_embeddings(manifest_path.parent / r.file)

    def gather(selected: list[ManifestRow]) -> tuple[EmbeddingMatrix, tuple[str, ...]]:
        selected = sorted(selected, key=lambda r: r.row)
        data = np.stack([matrices[r.file].data[r.row] for r in selected])
        return EmbeddingMatrix(data=data, normalized=None), tuple(r.name for r in selected)

    cls_rows = [r for r in rows if r.role == ROLE_CLASSIFICATION]
    if not cls_rows:
        raise ConsistencyError(f"{manifest_path}: no classification prompts")
    classification, cls_names = gather(cls_rows)

    group_ids = sorted({r.group_id for r in rows if r.role == ROLE_DEBIAS})
    debias, debias_names = [], []
    for gid in group_ids:
        mat, names = gather([r for r in rows if r.role == ROLE_DEBIAS and r.group_id == gid])
        debias.append(mat)
        debias_names.append(names)

    return PromptSet(
        classification=classification,
        debias_groups=tuple(debias),
        classification_names=cls_names,
        debias_names=tuple(debias_names),
    )


def save_split(
    data: GroupedDataset, out_dir: str | Path, split: str
) -> tuple[Path, Path]:
    """Write one split as ``<split>.ldeb`` + ``<split>.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emb_path = out / f"{split}.ldeb"
    meta_path = out / f"{split}.csv"
    write_embeddings(data.embeddings, emb_path)
    write_metadata(meta_path, data.labels, data.groups, data.count)
    return emb_path, meta_path


def load_split(
    data_dir: str | Path,
    split: str,
    class_count: int | None = None,
    group_count: int | None = None,
) -> GroupedDataset:
    """Load ``<split>.ldeb`` + ``<split>.csv`` from a data directory.

    Counts default to max id + 1 as observed in the metadata.
    """
    data_dir = Path(data_dir)
    emb = read_embeddings(data_dir / f"{split}.ldeb")
    labels, groups = read_metadata(data_dir / f"{split}.csv", emb.count)
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels is not None and labels.size else 0
    if group_count is None:
        group_count = int(groups.max()) + 1 if groups is not None and groups.size else 0
    return GroupedDataset(
        embeddings=emb,
        labels=labels,
        groups=groups,
        class_count=class_count,
        group_count=group_count,
    )
