"""Embedding encoders behind a tiny registry.

``stub:<dim>`` is a deterministic hash-projection encoder used for
hermetic tests and format validation: each input (image bytes or text)
seeds a generator that draws its embedding, so identical inputs always
produce identical vectors with no model weights involved.

``clip:<model-id>`` (or a bare model id) loads a contrastive
vision-language model through ``transformers``; it is only importable
when that stack and the weights are available.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np


class EncoderError(RuntimeError):
    pass


class StubEncoder:
    """Deterministic pseudo-encoder: sha256 of the content seeds the rows."""

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise EncoderError("stub dim must be >= 1")
        self.dim = dim
        self.name = f"stub:{dim}"

    def _vector(self, tag: bytes, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(tag + payload).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        return rng.standard_normal(self.dim).astype(np.float32)

    def encode_images(self, paths: list[Path]) -> np.ndarray:
        rows = [self._vector(b"image:", Path(p).read_bytes()) for p in paths]
        return np.stack(rows) if rows else np.zeros((0, self.dim), dtype=np.float32)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        rows = [self._vector(b"text:", t.encode()) for t in texts]
        return np.stack(rows) if rows else np.zeros((0, self.dim), dtype=np.float32)


class TransformersClipEncoder:
    """Contrastive vision-language encoder via the transformers library."""

    def __init__(self, model_id: str, batch_size: int = 32):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EncoderError(
                "clip encoders need the optional [clip] extra (torch + transformers)"
            ) from exc
        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_id)
        self.model.eval()
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.batch_size = batch_size
        self.name = f"clip:{model_id}"
        self.dim = int(self.model.config.projection_dim)

    def encode_images(self, paths: list[Path]) -> np.ndarray:
        from PIL import Image

        rows = []
        with self._torch.no_grad():
            for start in range(0, len(paths), self.batch_size):
                batch = [Image.open(p).convert("RGB") for p in paths[start : start + self.batch_size]]
                inputs = self.processor(images=batch, return_tensors="pt")
                feats = self.model.get_image_features(**inputs)
                rows.append(feats.cpu().numpy().astype(np.float32))
        return np.concatenate(rows) if rows else np.zeros((0, self.dim), dtype=np.float32)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        with self._torch.no_grad():
            inputs = self.processor(text=texts, return_tensors="pt", padding=True)
            feats = self.model.get_text_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)


def build_encoder(spec: str, batch_size: int = 32):
    """``stub:<dim>`` or ``clip:<model-id>`` (bare ids default to clip)."""
    if spec.startswith("stub:"):
        return StubEncoder(int(spec.split(":", 1)[1]))
    if spec == "stub":
        return StubEncoder()
    model_id = spec.split(":", 1)[1] if spec.startswith("clip:") else spec
    return TransformersClipEncoder(model_id, batch_size)
