"""Zero-shot classification, group-wise evaluation, and model selection.

A classifier is a stack of zero or more adapters followed by an argmax
over dot products with class-prompt text embeddings.  Evaluation reports
instance-level average accuracy plus per-group accuracies over the
evaluation cells; the worst-group accuracy is the minimum over non-empty
cells.  Model selection maximizes validation worst-group accuracy
(domain-aware early stopping).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import adapter as adapter_mod
from .adapter import AdapterMLP
from .errors import ContractError, ShapeError, ValidationError
from .store import GroupedDataset


@dataclass(frozen=True)
class Classifier:
    """class_texts (c x e) with an optional adapter chain applied first.

    When ``normalize_inputs`` is true, raw input rows are L2-normalized
    before entering the chain (a no-op for already unit-norm data).
    """

    class_texts: np.ndarray
    adapter_chain: tuple[AdapterMLP, ...] = ()
    normalize_inputs: bool = True

    def __post_init__(self):
        texts = np.asarray(self.class_texts, dtype=np.float32)
        if texts.ndim != 2 or texts.shape[0] < 2:
            raise ValidationError("classifier needs a c x e text matrix with c >= 2")
        object.__setattr__(self, "class_texts", texts)
        object.__setattr__(self, "adapter_chain", tuple(self.adapter_chain))
        for a in self.adapter_chain:
            if a.dim != texts.shape[1]:
                raise ShapeError("adapter width must match the text embedding dim")

    @property
    def dim(self) -> int:
        return self.class_texts.shape[1]

    @property
    def class_count(self) -> int:
        return self.class_texts.shape[0]


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return x / norms


def apply_chain(clf: Classifier, images: np.ndarray, already_normalized: bool = False) -> np.ndarray:
    """Run inputs through normalization (if configured) and the adapter chain."""
    x = np.asarray(images, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != clf.dim:
        raise ShapeError(f"images must be B x {clf.dim}, got {x.shape}")
    if clf.normalize_inputs and not already_normalized:
        x = _normalize_rows(x)
    for a in clf.adapter_chain:
        x, _ = adapter_mod.forward(a, x)
    return x


def predict(clf: Classifier, images: np.ndarray, already_normalized: bool = False) -> np.ndarray:
    """Class ids via argmax of dot products; ties break to the lowest index."""
    adapted = apply_chain(clf, images, already_normalized)
    logits = adapted @ clf.class_texts.T
    return np.argmax(logits, axis=1)


@dataclass(frozen=True)
class EvalReport:
    """Average and per-group accuracies; empty groups are flagged, not scored."""

    average_acc: float
    group_acc: tuple[float, ...]
    worst_group_acc: float
    counts: tuple[int, ...]
    empty_groups: tuple[int, ...] = ()

    def lines(self) -> list[str]:
        out = [
            f"average_acc={self.average_acc!r}",
            f"worst_group_acc={self.worst_group_acc!r}",
        ]
        for g, (acc, cnt) in enumerate(zip(self.group_acc, self.counts)):
            out.append(f"group_acc_{g}={acc!r}")
            out.append(f"count_{g}={cnt}")
        if self.empty_groups:
            out.append("empty_groups=" + ",".join(str(g) for g in self.empty_groups))
        return out


def evaluate(clf: Classifier, data: GroupedDataset) -> EvalReport:
    """Instance-level average accuracy plus per-group accuracies."""
    if data.labels is None or data.groups is None:
        raise ContractError("evaluation requires labels and groups")
    preds = predict(
        clf,
        data.embeddings.data,
        already_normalized=data.embeddings.normalized,
    )
    correct = preds == data.labels
    average = float(correct.sum() / len(correct)) if len(correct) else 0.0

    group_acc: list[float] = []
    counts: list[int] = []
    empty: list[int] = []
    for g in range(data.group_count):
        mask = data.groups == g
        n = int(mask.sum())
        counts.append(n)
        if n == 0:
            empty.append(g)
            group_acc.append(float("nan"))
        else:
            group_acc.append(float(correct[mask].sum() / n))
    scored = [a for a in group_acc if not np.isnan(a)]
    worst = min(scored) if scored else float("nan")
    return EvalReport(
        average_acc=average,
        group_acc=tuple(group_acc),
        worst_group_acc=worst,
        counts=tuple(counts),
        empty_groups=tuple(empty),
    )


def write_report(report: EvalReport, path: str | Path, extra: dict[str, str] | None = None) -> None:
    """Deterministic key=value export, one metric per line."""
    lines = []
    if extra:
        lines.extend(f"{k}={v}" for k, v in extra.items())
    lines.extend(report.lines())
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line and "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


@dataclass(frozen=True)
class ModelCandidate:
    """One early-stopping candidate: a checkpoint plus its validation report."""

    checkpoint: object
    val_report: EvalReport
    epoch: int = 0


def select_model(candidates: list[ModelCandidate]) -> ModelCandidate:
    """Argmax of validation worst-group accuracy.

    Ties break to the higher average accuracy, then the earliest epoch
    (list order for equal epochs).
    """
    if not candidates:
        raise ValidationError("select_model requires at least one candidate")
    best = candidates[0]
    for cand in candidates[1:]:
        key = (cand.val_report.worst_group_acc, cand.val_report.average_acc, -cand.epoch)
        best_key = (best.val_report.worst_group_acc, best.val_report.average_acc, -best.epoch)
        if key > best_key:
            best = cand
    return best
