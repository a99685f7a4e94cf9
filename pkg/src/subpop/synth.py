"""Deterministic synthetic embeddings with planted class and group directions.

The generator plants two orthonormal directions: ``v_class`` carries the
label signal and ``v_group`` a spurious attribute that co-occurs with the
label with probability ``p_spur`` (the classic waterbird-style
construction).  Classification prompts are contaminated with the group
direction through ``beta``, which is what makes the zero-shot classifier
group-biased; debiasing prompts are the clean +/- group direction.

Instances:  embedding = normalize(a_cls * y * v_class + a_grp * g * v_group + noise)
with isotropic Gaussian noise scaled by sigma / sqrt(e).  Labels are
{0, 1}; evaluation cells are the four label x attribute combinations
(cell id = 2 * label + attribute).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .store import EmbeddingMatrix, GroupedDataset, PromptSet


@dataclass(frozen=True)
class SynthConfig:
    """Frozen defaults are calibrated so the zero-shot classifier is
    visibly group-biased (average >= 0.85, worst group <= 0.75) while the
    planted group direction stays recoverable (probe >= 0.9)."""

    e: int = 32
    n: int = 4000
    p_spur: float = 0.95
    a_cls: float = 1.0
    a_grp: float = 1.0
    sigma: float = 2.0
    beta: float = 0.8
    seed: int = 7

    def __post_init__(self):
        if self.e < 2:
            raise ValidationError("need e >= 2 for two orthogonal directions")
        if not 0.5 <= self.p_spur < 1.0:
            raise ValidationError("p_spur must lie in [0.5, 1)")
        if min(self.a_cls, self.a_grp, self.sigma, self.beta) < 0:
            raise ValidationError("magnitudes must be nonnegative")
        if self.n < 1:
            raise ValidationError("n must be >= 1")


@dataclass(frozen=True)
class SynthResult:
    train: GroupedDataset
    val: GroupedDataset
    test: GroupedDataset
    prompts: PromptSet
    v_class: np.ndarray
    v_group: np.ndarray

    def splits(self) -> dict[str, GroupedDataset]:
        return {"train": self.train, "val": self.val, "test": self.test}


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def generate(cfg: SynthConfig) -> SynthResult:
    """Draw train/val/test splits (70/15/15 of n) plus the prompt set.

    Pure function of the config, including its seed.
    """
    rng = np.random.default_rng(cfg.seed)
    basis = np.linalg.qr(rng.standard_normal((cfg.e, 2)))[0]
    v_class, v_group = basis[:, 0].copy(), basis[:, 1].copy()

    n_train = round(0.7 * cfg.n)
    n_val = round(0.15 * cfg.n)
    n_test = cfg.n - n_train - n_val

    def draw(count: int) -> GroupedDataset:
        y = rng.choice([-1.0, 1.0], size=count)
        aligned = rng.random(count) < cfg.p_spur
        g = np.where(aligned, y, -y)
        noise = rng.standard_normal((count, cfg.e)) * (cfg.sigma / np.sqrt(cfg.e))
        raw = (
            cfg.a_cls * y[:, None] * v_class[None, :]
            + cfg.a_grp * g[:, None] * v_group[None, :]
            + noise
        )
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        labels = (y > 0).astype(np.int64)
        attrs = (g > 0).astype(np.int64)
        groups = 2 * labels + attrs
        return GroupedDataset(
            embeddings=EmbeddingMatrix(raw.astype(np.float32)),
            labels=labels,
            groups=groups,
            class_count=2,
            group_count=4,
        )

    train, val, test = draw(n_train), draw(n_val), draw(n_test)

    cls_dir = _unit(cfg.a_cls * v_class + cfg.beta * v_group)
    class_texts = np.stack([-cls_dir, cls_dir]).astype(np.float32)  # class 0, class 1
    debias = np.stack([-v_group, v_group]).astype(np.float32)
    prompts = PromptSet(
        classification=EmbeddingMatrix(class_texts),
        debias_groups=(EmbeddingMatrix(debias),),
        classification_names=("planted class negative", "planted class positive"),
        debias_names=(("planted attribute negative", "planted attribute positive"),),
    )
    return SynthResult(
        train=train, val=val, test=test, prompts=prompts,
        v_class=v_class, v_group=v_group,
    )


def attr_from_group(groups: np.ndarray) -> np.ndarray:
    """Recover the binary attribute from the 4-cell evaluation ids."""
    return np.asarray(groups) % 2


def group_probe(
    embeddings: EmbeddingMatrix | np.ndarray,
    attrs: np.ndarray,
    v_group: np.ndarray,
) -> float:
    """Accuracy of the sign(x . v_group) probe against the binary attribute.

    0.5 means no group information survives along the planted direction.
    Scores of exactly zero predict attribute 1 (deterministic tie rule).
    """
    x = embeddings.data if isinstance(embeddings, EmbeddingMatrix) else np.asarray(embeddings)
    scores = x.astype(np.float64) @ np.asarray(v_group, dtype=np.float64)
    pred = (scores >= 0).astype(np.int64)
    attrs = np.asarray(attrs, dtype=np.int64)
    return float((pred == attrs).mean())
