import csv
import struct
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from clip_export import ldeb
from clip_export.encoders import StubEncoder, build_encoder
from clip_export.export import ExportJob, export_images, export_prompts


@pytest.fixture()
def tiny_dataset(tmp_path):
    """Nine small images with a folder-layout metadata table."""
    root = tmp_path / "imgs"
    root.mkdir()
    rng = np.random.default_rng(0)
    rows = ["file,split,label,group"]
    splits = ["train"] * 5 + ["val"] * 2 + ["test"] * 2
    for i, split in enumerate(splits):
        name = f"img_{i:03d}.png"
        arr = rng.integers(0, 255, size=(8, 8, 3), dtype=np.uint8)
        Image.fromarray(arr).save(root / name)
        rows.append(f"{name},{split},{i % 2},{(i % 2) * 2 + (i % 3 == 0)}")
    (root / "dataset.csv").write_text("\n".join(rows) + "\n")
    return root


def test_ldeb_writer_format_bytes(tmp_path):
    data = np.array([[1.0, 0.0]], dtype=np.float32)
    path = tmp_path / "one.ldeb"
    ldeb.write_embeddings(data, path)
    raw = path.read_bytes()
    magic, version, dtype, dim, count = struct.unpack("<4sIIIQ", raw[:24])
    assert (magic, version, dtype, dim, count) == (b"LDEB", 1, 1, 2, 1)
    assert raw[24:] == bytes([0x00, 0x00, 0x80, 0x3F, 0, 0, 0, 0])
    back = ldeb.read_embeddings(path)
    assert back.tobytes() == data.tobytes()


def test_image_export_shapes_and_order(tiny_dataset, tmp_path):
    out = tmp_path / "out"
    job = ExportJob(model="stub:16", dataset="folder", root=str(tiny_dataset), out_dir=str(out))
    report = export_images(job)
    assert report.counts == {"train": 5, "val": 2, "test": 2}
    assert report.dim == 16
    assert not report.skipped
    emb = ldeb.read_embeddings(out / "train.ldeb")
    assert emb.shape == (5, 16)
    # row order is the dataset's canonical order, recorded alongside
    listed = (out / "train_files.txt").read_text().splitlines()
    assert [Path(p).name for p in listed] == [f"img_{i:03d}.png" for i in range(5)]
    enc = StubEncoder(16)
    direct = enc.encode_images([tiny_dataset / f"img_{i:03d}.png" for i in range(5)])
    assert emb.tobytes() == direct.tobytes()
    # metadata carries the labels and groups in the same order
    lines = (out / "train.csv").read_text().splitlines()
    assert lines[0] == "index,label,group"
    assert len(lines) == 6


def test_image_export_deterministic(tiny_dataset, tmp_path):
    job_a = ExportJob(model="stub:8", dataset="folder", root=str(tiny_dataset), out_dir=str(tmp_path / "a"))
    job_b = ExportJob(model="stub:8", dataset="folder", root=str(tiny_dataset), out_dir=str(tmp_path / "b"))
    export_images(job_a)
    export_images(job_b)
    for name in ("train.ldeb", "val.ldeb", "test.ldeb", "train.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_image_export_reports_missing_files(tiny_dataset, tmp_path):
    (tiny_dataset / "img_001.png").unlink()
    job = ExportJob(model="stub:8", dataset="folder", root=str(tiny_dataset), out_dir=str(tmp_path / "o"))
    report = export_images(job)
    assert len(report.skipped) == 1
    assert "img_001.png" in report.skipped[0]
    assert report.counts["train"] == 4


def test_cosine_parity_with_native_computation(tiny_dataset, tmp_path):
    out = tmp_path / "out"
    job = ExportJob(model="stub:24", dataset="folder", root=str(tiny_dataset), out_dir=str(out))
    export_images(job)
    exported = ldeb.read_embeddings(out / "train.ldeb")
    native = StubEncoder(24).encode_images(
        [tiny_dataset / f"img_{i:03d}.png" for i in range(5)]
    )

    def cosine(u, v):
        return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))

    for i, j in ((0, 1), (1, 4), (2, 3)):
        assert cosine(exported[i], exported[j]) == pytest.approx(
            cosine(native[i], native[j]), abs=1e-5
        )


def test_prompt_export_manifest(tmp_path):
    out = tmp_path / "prompts"
    job = ExportJob(
        model="stub:16",
        class_template="a photo of a {not blond, blond} hair people",
        debias_templates=("a photo of a {male, female} people",),
        out_dir=str(out),
    )
    info = export_prompts(job)
    assert info == {"classes": 2, "debias_groups": [2], "dim": 16}
    with open(out / "prompts.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["file", "role", "group_id", "row", "name"]
    names = [r[4] for r in rows[1:]]
    assert "a photo of a blond hair people" in names
    assert "a photo of a female people" in names
    cls = ldeb.read_embeddings(out / "prompts_class.ldeb")
    deb = ldeb.read_embeddings(out / "prompts_debias_g0.ldeb")
    assert cls.shape == (2, 16) and deb.shape == (2, 16)
    # text embeddings match the encoder's native output exactly
    enc = StubEncoder(16)
    assert cls.tobytes() == enc.encode_texts(
        ["a photo of a not blond hair people", "a photo of a blond hair people"]
    ).tobytes()


def test_prompt_export_multi_group(tmp_path):
    out = tmp_path / "anti"
    job = ExportJob(
        model="stub:8",
        class_template="a photo of a {not blond, blond} hair people",
        debias_templates=("a photo of a [{old, not old},{young, not young}] people",),
        out_dir=str(out),
    )
    info = export_prompts(job)
    assert info["debias_groups"] == [2, 2]
    assert (out / "prompts_debias_g0.ldeb").exists()
    assert (out / "prompts_debias_g1.ldeb").exists()


def test_prompt_export_notes_in_manifest(tmp_path):
    out = tmp_path / "noted"
    job = ExportJob(
        model="stub:8",
        class_template="a {x, y} photo",
        debias_templates=("a {p, q} photo",),
        out_dir=str(out),
    )
    export_prompts(job, notes=["classification fillers are class labels; debias fillers are attribute descriptions"])
    text = (out / "prompts.csv").read_text()
    assert text.startswith("# note: classification fillers are class labels; debias fillers are attribute descriptions\n")


def test_prompt_export_single_filler_rejected(tmp_path):
    from clip_export.templates import TemplateError

    job = ExportJob(
        model="stub:8",
        class_template="a photo of a {blond} people",
        debias_templates=("a {p, q} photo",),
        out_dir=str(tmp_path / "bad"),
    )
    with pytest.raises(TemplateError):
        export_prompts(job)


def test_outputs_parse_with_primary_toolkit(tiny_dataset, tmp_path):
    subpop_store = pytest.importorskip(
        "subpop.store", reason="primary toolkit not installed; wire-format check skipped"
    )
    out = tmp_path / "full"
    export_images(
        ExportJob(model="stub:16", dataset="folder", root=str(tiny_dataset), out_dir=str(out))
    )
    export_prompts(
        ExportJob(
            model="stub:16",
            class_template="a photo of a {not blond, blond} hair people",
            debias_templates=("a photo of a {male, female} people",),
            out_dir=str(out),
        )
    )
    ds = subpop_store.load_split(out, "train")
    assert ds.count == 5
    prompts = subpop_store.load_prompt_set(out / "prompts.csv")
    assert prompts.class_count == 2
    assert prompts.debias_groups[0].count == 2
    assert prompts.classification_names[1] == "a photo of a blond hair people"


def test_build_encoder_registry():
    enc = build_encoder("stub:12")
    assert enc.dim == 12
    texts = enc.encode_texts(["alpha", "beta"])
    assert texts.shape == (2, 12)
    assert texts.dtype == np.float32
    # identical content gives identical rows
    again = enc.encode_texts(["alpha"])
    assert again.tobytes() == texts[:1].tobytes()


def test_clip_encoder_requires_cached_weights():
    torch = pytest.importorskip("torch")
    transformers = pytest.importorskip("transformers")
    try:
        enc = build_encoder("clip:openai/clip-vit-base-patch32", batch_size=4)
    except Exception:
        pytest.skip("clip weights not available in this environment")
    vecs = enc.encode_texts(["a photo of a cat", "a photo of a dog"])
    assert vecs.shape[0] == 2 and vecs.shape[1] == enc.dim
