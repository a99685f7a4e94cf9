"""Dataset adapters: enumerate (image path, label, group, split) rows in
the dataset's canonical file order.

Supported layouts:

* ``celeba`` -- the standard face-attributes release: images under
  ``img_align_celeba/``, attribute table ``list_attr_celeba.txt``,
  official split table ``list_eval_partition.txt``.  The label is the
  blond-hair attribute; the group attribute defaults to ``Male`` and is
  selectable (``Young``, ``Attractive``, ...).  Evaluation cells are
  label x attribute (id = 2*label + attribute).
* ``waterbirds`` -- the standard release with a ``metadata.csv`` holding
  ``img_filename, y, split, place``; cells are y x place.
* ``folder`` -- a plain ``dataset.csv`` with header
  ``file,split,label,group`` next to the images (escape hatch for custom
  collections and tests).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path


class DatasetError(ValueError):
    pass


SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class Instance:
    path: Path
    label: int
    group: int
    split: str


def _celeba_rows(root: Path, attr_name: str) -> list[Instance]:
    attr_file = root / "list_attr_celeba.txt"
    split_file = root / "list_eval_partition.txt"
    img_dir = root / "img_align_celeba"
    for required in (attr_file, split_file, img_dir):
        if not required.exists():
            raise DatasetError(f"celeba layout missing {required}")
    splits = {}
    for line in split_file.read_text().splitlines():
        if line.strip():
            name, idx = line.split()
            splits[name] = SPLIT_NAMES[int(idx)]
    lines = attr_file.read_text().splitlines()
    header = lines[1].split()
    try:
        blond_col = header.index("Blond_Hair")
        attr_col = header.index(attr_name)
    except ValueError as exc:
        raise DatasetError(f"attribute not in celeba header: {exc}") from exc
    rows = []
    for line in lines[2:]:
        parts = line.split()
        if not parts:
            continue
        name = parts[0]
        values = parts[1:]
        label = 1 if values[blond_col] == "1" else 0
        attr = 1 if values[attr_col] == "1" else 0
        rows.append(
            Instance(img_dir / name, label, 2 * label + attr, splits.get(name, "train"))
        )
    return rows


def _waterbirds_rows(root: Path) -> list[Instance]:
    meta = root / "metadata.csv"
    if not meta.exists():
        raise DatasetError(f"waterbirds layout missing {meta}")
    rows = []
    with open(meta, newline="") as f:
        for rec in csv.DictReader(f):
            label = int(rec["y"])
            place = int(rec["place"])
            split = SPLIT_NAMES[int(rec["split"])]
            rows.append(
                Instance(root / rec["img_filename"], label, 2 * label + place, split)
            )
    return rows


def _folder_rows(root: Path) -> list[Instance]:
    meta = root / "dataset.csv"
    if not meta.exists():
        raise DatasetError(f"folder layout missing {meta}")
    rows = []
    with open(meta, newline="") as f:
        reader = csv.DictReader(f)
        expected = {"file", "split", "label", "group"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise DatasetError(f"{meta}: header must be file,split,label,group")
        for rec in reader:
            if rec["split"] not in SPLIT_NAMES:
                raise DatasetError(f"{meta}: unknown split {rec['split']!r}")
            rows.append(
                Instance(root / rec["file"], int(rec["label"]), int(rec["group"]), rec["split"])
            )
    return rows


def enumerate_instances(dataset: str, root: str | Path, attr: str = "Male") -> list[Instance]:
    """All instances in canonical order; order within a split is the
    file-listing order of the dataset's own metadata."""
    root = Path(root)
    if dataset == "celeba":
        return _celeba_rows(root, attr)
    if dataset == "waterbirds":
        return _waterbirds_rows(root)
    if dataset == "folder":
        return _folder_rows(root)
    raise DatasetError(f"unknown dataset {dataset!r}")
