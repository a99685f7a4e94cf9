"""Export jobs: image embeddings per split, and prompt embeddings with a
manifest tying every row back to its exact string.

Outputs use the toolkit's directory convention ({split}.ldeb +
{split}.csv, prompts_class.ldeb, prompts_debias_g{j}.ldeb, prompts.csv),
so a consumer cannot tell exported real embeddings from synthetic ones.
Embeddings are written exactly as the encoder emits them (no silent
normalization); the row order of each split follows the dataset's
canonical order and is recorded in ``{split}_files.txt``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import datasets, ldeb, templates
from .encoders import build_encoder


@dataclass(frozen=True)
class ExportJob:
    model: str = "stub:64"
    dataset: str = "folder"
    root: str = "."
    class_template: str = ""
    debias_templates: tuple[str, ...] = ()
    attr: str = "Male"
    batch_size: int = 32
    out_dir: str = "export_out"


@dataclass
class ImageExportReport:
    counts: dict = field(default_factory=dict)
    dim: int = 0
    normalized: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)


def export_images(job: ExportJob) -> ImageExportReport:
    """One embedding row per image, split by the dataset's partition.

    Missing files are collected into the report's skip list rather than
    aborting the export; callers should treat a non-empty skip list as a
    failure.
    """
    encoder = build_encoder(job.model, job.batch_size)
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    instances = datasets.enumerate_instances(job.dataset, job.root, job.attr)
    report = ImageExportReport(dim=encoder.dim)
    for split in datasets.SPLIT_NAMES:
        rows = [inst for inst in instances if inst.split == split]
        present = [inst for inst in rows if inst.path.exists()]
        report.skipped.extend(str(inst.path) for inst in rows if not inst.path.exists())
        if not rows:
            continue
        emb = encoder.encode_images([inst.path for inst in present])
        ldeb.write_embeddings(emb, out / f"{split}.ldeb")
        ldeb.write_metadata(
            out / f"{split}.csv",
            [inst.label for inst in present],
            [inst.group for inst in present],
            len(present),
        )
        (out / f"{split}_files.txt").write_text(
            "\n".join(str(inst.path) for inst in present) + "\n"
        )
        report.counts[split] = len(present)
        report.normalized[split] = ldeb.rows_unit_norm(emb)
    return report


def export_prompts(job: ExportJob, notes: list[str] | None = None) -> dict:
    """Classification and debias prompt embeddings plus the manifest.

    The classification template expands to the class rows; each debias
    template expands to one or more groups of opposite descriptions.
    Manifest names carry the exact expanded strings.
    """
    if not job.class_template:
        raise templates.TemplateError("a classification template is required")
    if not job.debias_templates:
        raise templates.TemplateError("at least one debiasing template is required")
    encoder = build_encoder(job.model, job.batch_size)
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    class_prompts = templates.expand(job.class_template)
    debias_groups: list[list[str]] = []
    for template in job.debias_templates:
        debias_groups.extend(templates.expand_groups(template))

    manifest_rows = []
    cls_file = "prompts_class.ldeb"
    ldeb.write_embeddings(encoder.encode_texts(class_prompts), out / cls_file)
    for i, name in enumerate(class_prompts):
        manifest_rows.append((cls_file, ldeb.ROLE_CLASSIFICATION, -1, i, name))
    for j, group in enumerate(debias_groups):
        grp_file = f"prompts_debias_g{j}.ldeb"
        ldeb.write_embeddings(encoder.encode_texts(group), out / grp_file)
        for i, name in enumerate(group):
            manifest_rows.append((grp_file, ldeb.ROLE_DEBIAS, j, i, name))
    ldeb.write_prompt_manifest(out / "prompts.csv", manifest_rows, notes)
    return {
        "classes": len(class_prompts),
        "debias_groups": [len(g) for g in debias_groups],
        "dim": encoder.dim,
    }
