"""Walkthrough of the on-disk formats: LDEB embeddings, metadata CSV,
and prompt manifests.

Run:  python3 demos/01_embedding_files.py
"""
import tempfile
from pathlib import Path

import numpy as np

from subpop import store

workdir = Path(tempfile.mkdtemp(prefix="subpop_demo_"))
print(f"writing demo files under {workdir}\n")

# --- a tiny embedding matrix, written byte-exactly ---------------------
rng = np.random.default_rng(0)
m = store.EmbeddingMatrix(rng.standard_normal((4, 8)).astype(np.float32))
path = workdir / "images.ldeb"
store.write_embeddings(m, path)
raw = path.read_bytes()
print(f"LDEB file: {len(raw)} bytes = 24-byte header + {m.count}x{m.dim} float32 payload")
print(f"  magic={raw[:4]!r}  (version, dtype, dim, count follow, little-endian)")

back = store.read_embeddings(path)
print(f"  round-trip bitwise identical: {back.data.tobytes() == m.data.tobytes()}")
print(f"  normalized flag measured on read: {back.normalized}\n")

# --- metadata: labels and groups, -1 marks absent ----------------------
labels = np.array([0, 1, 1, 0])
groups = np.array([0, 3, 2, 1])
store.write_metadata(workdir / "images.csv", labels, groups, 4)
print("metadata CSV:")
print((workdir / "images.csv").read_text())
lab, grp = store.read_metadata(workdir / "images.csv", 4)
print(f"parsed labels={lab.tolist()} groups={grp.tolist()}\n")

# --- prompt sets: classification rows plus debias groups ---------------
def unit_rows(n, e, seed):
    x = np.random.default_rng(seed).standard_normal((n, e))
    return (x / np.linalg.norm(x, axis=1, keepdims=True)).astype(np.float32)

prompts = store.PromptSet(
    classification=store.EmbeddingMatrix(unit_rows(2, 8, 1)),
    debias_groups=(store.EmbeddingMatrix(unit_rows(2, 8, 2)),),
    classification_names=("a photo of a landbird", "a photo of a waterbird"),
    debias_names=(("a photo on land", "a photo on water"),),
)
manifest = store.save_prompt_set(prompts, workdir)
print(f"prompt manifest ({manifest.name}):")
print(manifest.read_text())
loaded = store.load_prompt_set(manifest)
print(f"reloaded: {loaded.class_count} classes, {len(loaded.debias_groups)} debias group(s)")
