"""Label-free adapter training against debiasing prompts, plus stacking.

``train_ldro`` minimizes the composed debiasing objective over shuffled
mini-batches of image embeddings.  Instance labels and group ids are
never read by the optimization path; when provided they are used only
for per-epoch monitoring reports.  ``train_stacked`` first debiases with
a frozen two-layer adapter, then trains a second, three-layer adapter on
the debiased embeddings with any of the label-based baselines.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import adapter as adapter_mod
from .adapter import AdapterMLP, OptimizerState, init_adapter
from .dro import DroConfig, _child_seed, _normalize_rows, _prep_inputs, _select, train_dro
from .errors import DomainError, ValidationError
from .losses import LdroConfig, ldro_objective
from .report import EpochRow, TrainReport
from .store import EmbeddingMatrix, GroupedDataset, PromptSet
from .zeroshot import Classifier, evaluate


@dataclass(frozen=True)
class LdroRun:
    """One debiasing training run: objective config plus loop parameters."""

    cfg: LdroConfig = field(default_factory=LdroConfig)
    epochs: int = 50
    batch_size: int = 256
    seed: int = 0
    debias_group_ids: tuple[int, ...] | None = None  # None = all groups
    eval_cadence: int = 1
    depth: int = 2
    hidden: int | None = None
    blend: float = 1.0
    opt_kind: str = "adam"
    lr: float = 1e-3
    keep_ring: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch size must be >= 1")
        if self.debias_group_ids is not None and len(self.debias_group_ids) == 0:
            raise ValidationError("at least one debias group must be selected")


def _debias_matrices(prompts: PromptSet, run: LdroRun) -> list[np.ndarray]:
    ids = (
        tuple(range(len(prompts.debias_groups)))
        if run.debias_group_ids is None
        else run.debias_group_ids
    )
    if not ids:
        raise ValidationError("prompt set has no debias groups")
    for gid in ids:
        if gid < 0 or gid >= len(prompts.debias_groups):
            raise ValidationError(f"debias group id {gid} out of range")
    return [prompts.debias_groups[gid].data.astype(np.float64) for gid in ids]


def train_ldro(
    data: GroupedDataset,
    prompts: PromptSet,
    run: LdroRun,
    val: GroupedDataset | None = None,
    test: GroupedDataset | None = None,
    normalize_inputs: bool = True,
) -> tuple[AdapterMLP, TrainReport]:
    """Minimize the debiasing objective; labels are for monitoring only.

    Returns the final-epoch adapter together with the full report; the
    report's checkpoint ring and ``selected_epoch`` expose the
    validation-worst-group early-stopping choice for callers that want
    the domain-aware protocol instead of the converged model.
    """
    if prompts.dim != data.embeddings.dim:
        raise ValidationError("prompts and data must share the embedding dim")
    x = _prep_inputs(data, normalize_inputs)
    groups = _debias_matrices(prompts, run)
    class_texts = prompts.classification.data

    a = init_adapter(
        e=x.shape[1], depth=run.depth, h=run.hidden, alpha=run.blend, seed=run.seed
    )
    opt = OptimizerState(kind=run.opt_kind, lr=run.lr)
    shuffle_rng = np.random.default_rng(_child_seed(run.seed, 1))
    report = TrainReport(method="ldro")
    n = x.shape[0]
    for epoch in range(run.epochs):
        perm = shuffle_rng.permutation(n)
        batch_values = []
        for start in range(0, n, run.batch_size):
            idx = perm[start : start + run.batch_size]
            xb = x[idx]
            out, cache = adapter_mod.forward(a, xb)
            try:
                value, grad = ldro_objective(xb, out, groups, run.cfg)
            except DomainError as exc:
                raise DomainError(
                    f"adapter output collapsed to zero norm at epoch {epoch}"
                ) from exc
            grads = adapter_mod.backward(a, cache, grad.astype(np.float32))
            adapter_mod.step(opt, a, grads)
            batch_values.append(value)
        row = EpochRow(epoch=epoch, risk=float(np.mean(batch_values)))
        if (epoch + 1) % run.eval_cadence == 0 or epoch == run.epochs - 1:
            clf = Classifier(class_texts, (a,), normalize_inputs=normalize_inputs)
            for split, ds in (("train", data), ("val", val), ("test", test)):
                if ds is not None and ds.labels is not None and ds.groups is not None:
                    row.reports[split] = evaluate(clf, ds)
        report.rows.append(row)
        if run.keep_ring:
            report.ring.append((a.copy(),))
    report.selected_epoch = _select(report)
    report.checkpoint_id = f"epoch{report.selected_epoch}"
    return a, report


def _premap(
    chain: tuple[AdapterMLP, ...], ds: GroupedDataset | None, normalize_inputs: bool
) -> GroupedDataset | None:
    """Push a dataset through a frozen adapter chain (normalizing first)."""
    if ds is None:
        return None
    x = ds.embeddings.data.astype(np.float32)
    if normalize_inputs and not ds.embeddings.normalized:
        x = _normalize_rows(x)
    for a in chain:
        x, _ = adapter_mod.forward(a, x)
    return GroupedDataset(
        embeddings=EmbeddingMatrix(x),
        labels=ds.labels,
        groups=ds.groups,
        class_count=ds.class_count,
        group_count=ds.group_count,
    )


def train_stacked(
    data: GroupedDataset,
    prompts: PromptSet,
    ldro_run: LdroRun,
    dro_cfg: DroConfig,
    val: GroupedDataset | None = None,
    test: GroupedDataset | None = None,
    normalize_inputs: bool = True,
) -> tuple[tuple[AdapterMLP, AdapterMLP], TrainReport]:
    """Debias first, then run a label-based baseline on the debiased space.

    Phase 1 trains the two-layer debiasing adapter and freezes it; phase 2
    trains a three-layer adapter on embeddings pre-mapped through phase 1.
    The returned chain applies to raw embeddings.
    """
    if data.labels is None:
        raise ValidationError("stacked training requires labels for phase 2")
    a1, report1 = train_ldro(data, prompts, ldro_run, val, test, normalize_inputs)
    chain1 = (a1,)
    mapped_train = _premap(chain1, data, normalize_inputs)
    mapped_val = _premap(chain1, val, normalize_inputs)
    mapped_test = _premap(chain1, test, normalize_inputs)

    phase2_cfg = replace(dro_cfg, depth=3)
    a2, report2 = train_dro(
        mapped_train, prompts, phase2_cfg, mapped_val, mapped_test,
        normalize_inputs=False,
    )
    report2.method = f"ldro+{dro_cfg.method}"
    report2.phase1 = report1
    return (a1, a2), report2


def eta_sweep(
    data: GroupedDataset,
    prompts: PromptSet,
    run: LdroRun,
    etas: list[float],
    val: GroupedDataset | None = None,
    test: GroupedDataset | None = None,
) -> list[dict]:
    """Train once per eta with shared seeds; rows carry the selected
    model's test metrics (val metrics when no test split is given)."""
    if len(etas) < 2:
        raise ValidationError("a sweep needs at least two eta values")
    rows = []
    for eta in etas:
        sweep_run = replace(run, cfg=replace(run.cfg, eta=float(eta)))
        selected, rep = train_ldro(data, prompts, sweep_run, val, test)
        row = {"eta": float(eta), "avg_acc": float("nan"), "worst_acc": float("nan")}
        picked = next((r for r in rep.rows if r.epoch == rep.selected_epoch), None)
        source = None
        if picked is not None:
            source = picked.reports.get("test") or picked.reports.get("val")
        if source is not None:
            row["avg_acc"] = source.average_acc
            row["worst_acc"] = source.worst_group_acc
        row["selected_epoch"] = rep.selected_epoch
        rows.append(row)
    return rows
