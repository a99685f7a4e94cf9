"""Label-based robust training baselines over frozen embeddings.

Mini-batch conditional value-at-risk and chi-square ball risks are
computed through their one-dimensional duals; both return the value and
the maximizing per-sample weights (nonnegative, mean 1) used to reweight
gradients.  The two-phase variants first fit plain ERM, identify an
error set from the phase-1 losses, then retrain from a fresh
initialization with that set upweighted (duplication semantics kept as
sample weights).

The chi-square ball is the Cressie-Read k=2 form, D(Q||P) =
(1/2) E_P[(dQ/dP - 1)^2], which yields the dual

    risk = min_eta  sqrt(1 + 2 rho) * sqrt(mean((l - eta)_+^2)) + eta.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import adapter as adapter_mod
from . import losses as losses_mod
from .adapter import AdapterMLP, OptimizerState, init_adapter
from .errors import NumericalError, ValidationError
from .report import EpochRow, TrainReport
from .store import GroupedDataset, PromptSet
from .zeroshot import Classifier, ModelCandidate, evaluate, select_model

METHODS = ("erm", "cvar", "chi2", "jtt", "cvar-two-phase", "chi2-two-phase")
TWO_PHASE_METHODS = ("jtt", "cvar-two-phase", "chi2-two-phase")


@dataclass(frozen=True)
class DroConfig:
    """Method choice plus the shared training hyperparameters."""

    method: str = "erm"
    alpha: float = 0.2
    rho: float = 1.0
    phase1_epochs: int = 1
    lambda_up: float = 4.0
    epochs: int = 50
    batch_size: int = 256
    seed: int = 0
    depth: int = 2
    hidden: int | None = None
    blend: float = 1.0
    logit_scale: float = 100.0
    opt_kind: str = "adam"
    lr: float = 1e-3
    eval_cadence: int = 1
    keep_ring: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValidationError("alpha must lie in (0, 1]")
        if self.rho <= 0:
            raise ValidationError("rho must be > 0")
        if self.lambda_up < 1:
            raise ValidationError("lambda_up must be >= 1")
        if self.batch_size < 2:
            raise ValidationError("batch size must be >= 2 for dual estimation")
        if self.epochs < 1 or self.phase1_epochs < 1:
            raise ValidationError("epoch counts must be >= 1")


@dataclass
class DualState:
    """Dual threshold of the current risk evaluation (distinct from the
    debiasing objective's eta)."""

    eta: float = 0.0


def cvar_risk(losses: np.ndarray, alpha: float) -> tuple[float, np.ndarray]:
    """Tail-mean risk: mean of the top ceil(alpha*n) losses with a
    fractional boundary weight; returns (value, weights with mean 1)."""
    l = np.asarray(losses, dtype=np.float64).ravel()
    n = l.size
    if n < 1:
        raise ValidationError("need at least one loss")
    if not 0.0 < alpha <= 1.0:
        raise ValidationError("alpha must lie in (0, 1]")
    if alpha == 1.0:
        return float(l.mean()), np.ones(n)
    k = alpha * n
    m = int(math.floor(k))
    order = np.argsort(-l, kind="stable")
    q = np.zeros(n)
    cap = 1.0 / k
    q[order[:m]] = cap
    if m < n and k - m > 0:
        q[order[m]] = 1.0 - m * cap
    return float(q @ l), q * n


def chi2_risk(
    losses: np.ndarray,
    rho: float,
    eta_tol: float = 1e-9,
    max_iter: int = 400,
    dual: DualState | None = None,
) -> tuple[float, np.ndarray]:
    """Chi-square ball risk via bisection on the dual derivative.

    Returns (value, weights); weights are (l - eta*)_+ normalized to
    mean 1.  If ``dual`` is given, the optimal threshold is stored in it.
    """
    l = np.asarray(losses, dtype=np.float64).ravel()
    n = l.size
    if n < 2:
        raise ValidationError("need at least two losses")
    if rho <= 0:
        raise ValidationError("rho must be > 0")
    lmax = float(l.max())
    if np.ptp(l) == 0.0:
        if dual is not None:
            dual.eta = lmax
        return lmax, np.ones(n)

    scale = math.sqrt(1.0 + 2.0 * rho)
    n_top = int((l == lmax).sum())
    if scale * scale >= n / n_top:
        # ball is large enough to concentrate on the argmax losses
        if dual is not None:
            dual.eta = lmax
        w = np.where(l == lmax, n / n_top, 0.0)
        return lmax, w

    def deriv(eta: float) -> float:
        u = np.maximum(l - eta, 0.0)
        m2 = math.sqrt(float((u * u).mean()))
        return 1.0 - scale * float(u.mean()) / m2

    spread = lmax - float(l.min())
    hi = lmax - 1e-12 * max(1.0, abs(lmax))
    lo = float(l.min()) - spread - 1.0
    expansions = 0
    while deriv(lo) >= 0.0:
        lo -= 2.0 ** expansions * (spread + 1.0)
        expansions += 1
        if expansions > max_iter:
            raise NumericalError("chi2 dual bracket expansion did not converge")
    iters = 0
    while hi - lo > eta_tol:
        mid = 0.5 * (lo + hi)
        if deriv(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        iters += 1
        if iters > max_iter:
            raise NumericalError("chi2 dual bisection did not converge")
    eta = 0.5 * (lo + hi)
    if dual is not None:
        dual.eta = eta
    u = np.maximum(l - eta, 0.0)
    value = scale * math.sqrt(float((u * u).mean())) + eta
    weights = u / float(u.mean())
    return value, weights


def _batch_weights(per_losses: np.ndarray, cfg: DroConfig) -> tuple[float, np.ndarray]:
    if cfg.method == "cvar":
        return cvar_risk(per_losses, cfg.alpha)
    if cfg.method == "chi2":
        return chi2_risk(per_losses, cfg.rho)
    return float(per_losses.mean()), np.ones(per_losses.size)


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return x / norms


def _prep_inputs(data: GroupedDataset, normalize_inputs: bool) -> np.ndarray:
    x = data.embeddings.data
    if normalize_inputs and not data.embeddings.normalized:
        x = _normalize_rows(x.astype(np.float32))
    return np.ascontiguousarray(x, dtype=np.float32)


def _child_seed(seed: int, tag: int) -> int:
    state = np.random.SeedSequence(entropy=seed, spawn_key=(tag,)).generate_state(2)
    return int(state[0]) << 32 | int(state[1])


def _run_epochs(
    a: AdapterMLP,
    x: np.ndarray,
    labels: np.ndarray,
    class_texts: np.ndarray,
    cfg: DroConfig,
    epochs: int,
    shuffle_rng: np.random.Generator,
    report: TrainReport,
    upweights: np.ndarray | None,
    eval_sets: dict[str, GroupedDataset],
    normalize_inputs: bool,
) -> None:
    opt = OptimizerState(kind=cfg.opt_kind, lr=cfg.lr)
    n = x.shape[0]
    for epoch in range(epochs):
        perm = shuffle_rng.permutation(n)
        risks = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb, yb = x[idx], labels[idx]
            out, cache = adapter_mod.forward(a, xb)
            per = losses_mod.per_sample_cross_entropy(out, class_texts, yb, cfg.logit_scale)
            if upweights is not None:
                w = upweights[idx]
                w = w / w.mean()
                risk = float((w * per).mean())
            else:
                risk, w = _batch_weights(per, cfg)
            _, grad = losses_mod.weighted_cross_entropy_grad(
                out, class_texts, yb, cfg.logit_scale, w
            )
            grads = adapter_mod.backward(a, cache, grad.astype(np.float32))
            adapter_mod.step(opt, a, grads)
            risks.append(risk)
        row = EpochRow(epoch=epoch, risk=float(np.mean(risks)))
        if (epoch + 1) % cfg.eval_cadence == 0 or epoch == epochs - 1:
            clf = Classifier(class_texts, (a,), normalize_inputs=normalize_inputs)
            for split, ds in eval_sets.items():
                if ds is not None and ds.labels is not None and ds.groups is not None:
                    row.reports[split] = evaluate(clf, ds)
        report.rows.append(row)
        if cfg.keep_ring:
            report.ring.append((a.copy(),))


def _select(report: TrainReport) -> int:
    """Pick the epoch by validation worst-group accuracy when available."""
    candidates = [
        ModelCandidate(checkpoint=row.epoch, val_report=row.reports["val"], epoch=row.epoch)
        for row in report.rows
        if "val" in row.reports
    ]
    if not candidates:
        return report.rows[-1].epoch if report.rows else -1
    return select_model(candidates).checkpoint


def train_dro(
    data: GroupedDataset,
    prompts: PromptSet,
    cfg: DroConfig,
    val: GroupedDataset | None = None,
    test: GroupedDataset | None = None,
    normalize_inputs: bool = True,
) -> tuple[AdapterMLP, TrainReport]:
    """Single-phase training: erm, or mini-batch cvar / chi2 reweighting.

    Two-phase methods are dispatched to :func:`train_two_phase`.  Returns
    the final-epoch adapter; the report's ring and ``selected_epoch``
    carry the validation-selected alternative.
    """
    if cfg.method in TWO_PHASE_METHODS:
        return train_two_phase(data, prompts, cfg, val, test, normalize_inputs)
    if data.labels is None:
        raise ValidationError("label-based training requires labels")
    x = _prep_inputs(data, normalize_inputs)
    class_texts = prompts.classification.data
    a = init_adapter(
        e=x.shape[1], depth=cfg.depth, h=cfg.hidden, alpha=cfg.blend, seed=cfg.seed
    )
    report = TrainReport(method=cfg.method)
    shuffle_rng = np.random.default_rng(_child_seed(cfg.seed, 1))
    _run_epochs(
        a, x, data.labels, class_texts, cfg, cfg.epochs, shuffle_rng, report,
        None, {"train": data, "val": val, "test": test}, normalize_inputs,
    )
    report.selected_epoch = _select(report)
    report.checkpoint_id = f"epoch{report.selected_epoch}"
    return a, report


def identify_error_set(
    per_losses: np.ndarray, predictions: np.ndarray, labels: np.ndarray, cfg: DroConfig
) -> np.ndarray:
    """Phase-1 identification: indices to upweight in phase 2.

    jtt takes the misclassified points; the starred variants take the
    support of the worst-case distribution of their risk (losses above
    the dual-optimal threshold, which for the tail risk is exactly the
    top ceil(alpha*n) set).
    """
    if cfg.method == "jtt":
        return np.flatnonzero(predictions != labels)
    if cfg.method == "cvar-two-phase":
        n_take = int(math.ceil(cfg.alpha * per_losses.size))
        return np.sort(np.argsort(-per_losses, kind="stable")[:n_take])
    if cfg.method == "chi2-two-phase":
        dual = DualState()
        chi2_risk(per_losses, cfg.rho, dual=dual)
        return np.flatnonzero(per_losses > dual.eta)
    raise ValidationError(f"{cfg.method!r} is not a two-phase method")


def train_two_phase(
    data: GroupedDataset,
    prompts: PromptSet,
    cfg: DroConfig,
    val: GroupedDataset | None = None,
    test: GroupedDataset | None = None,
    normalize_inputs: bool = True,
) -> tuple[AdapterMLP, TrainReport]:
    """Phase 1: plain ERM; identify an error set; phase 2: retrain from a
    fresh init with the set upweighted by lambda_up."""
    if cfg.method not in TWO_PHASE_METHODS:
        raise ValidationError(f"{cfg.method!r} is not a two-phase method")
    if data.labels is None:
        raise ValidationError("label-based training requires labels")
    x = _prep_inputs(data, normalize_inputs)
    class_texts = prompts.classification.data

    phase1_cfg = replace(cfg, method="erm")
    a1 = init_adapter(
        e=x.shape[1], depth=cfg.depth, h=cfg.hidden, alpha=cfg.blend, seed=cfg.seed
    )
    phase1_report = TrainReport(method="erm-phase1")
    _run_epochs(
        a1, x, data.labels, class_texts, phase1_cfg, cfg.phase1_epochs,
        np.random.default_rng(_child_seed(cfg.seed, 1)), phase1_report,
        None, {"train": data}, normalize_inputs,
    )

    out, _ = adapter_mod.forward(a1, x)
    per = losses_mod.per_sample_cross_entropy(out, class_texts, data.labels, cfg.logit_scale)
    preds = np.argmax(out @ class_texts.T, axis=1)
    identified = identify_error_set(per, preds, data.labels, cfg)

    weights = np.ones(x.shape[0])
    if identified.size == 0:
        warnings.warn("two-phase identification set is empty; phase 2 falls back to plain ERM")
    else:
        weights[identified] = cfg.lambda_up

    a2 = init_adapter(
        e=x.shape[1], depth=cfg.depth, h=cfg.hidden, alpha=cfg.blend,
        seed=_child_seed(cfg.seed, 2),
    )
    report = TrainReport(method=cfg.method)
    _run_epochs(
        a2, x, data.labels, class_texts, replace(cfg, method="erm"), cfg.epochs,
        np.random.default_rng(_child_seed(cfg.seed, 3)), report,
        weights, {"train": data, "val": val, "test": test}, normalize_inputs,
    )
    report.sample_weights = weights
    report.phase1_losses = per
    report.identified = identified
    report.phase1 = phase1_report
    report.selected_epoch = _select(report)
    report.checkpoint_id = f"epoch{report.selected_epoch}"
    return a2, report
