"""Scalar objectives and their analytic gradients w.r.t. adapted embeddings.

All functions promote to float64 internally; gradients come back in
float64 and are cast down by the trainers.  The composed debiasing
objective for a batch is

    mean_x [ 1 - mean_j H(softmax(unit(a_x) . D_j^T)) - eta * cos(x, a_x) ]

where ``a_x`` is the adapted embedding, ``D_j`` the j-th debias prompt
group, and H the Shannon entropy in nats.  Minimizing it pushes the
debias logits toward uniform (the embedding stops encoding the
sub-population) while the cosine term keeps the adapted embedding close
to the original.

Debias logits are computed on the L2-normalized adapted embedding.
Both remaining terms are scale-invariant in ``a_x``, so a raw dot
product would admit a degenerate optimum that merely shrinks the output
norm, saturating the entropy without erasing any group information;
unit-scaling the embedding (the usual convention for contrastive
embeddings) removes that escape and makes the entropy pressure purely
directional.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError, ValidationError


@dataclass(frozen=True)
class LdroConfig:
    """Hyperparameters of the language-guided debiasing objective.

    eta balances consistency against debiasing (0 = entropy only);
    logit_scale is the temperature applied to classification dot
    products (set 1.0 for the bare product); debias_scale is the
    temperature on the debias logits; debias_group_weights, when given,
    must be nonnegative and sum to 1.

    Like the unit-scaling of the adapted embedding, debias_scale exists
    because the entropy pressure must dominate the (sign-preserving)
    consistency pull near uniform: it moves the fixed point of the
    residual group component below the optimization noise floor, so the
    planted direction is actually erased rather than merely attenuated.
    """

    eta: float = 0.2
    logit_scale: float = 100.0
    debias_scale: float = 30.0
    debias_group_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.eta < 0:
            raise ValidationError("eta must be >= 0")
        if self.logit_scale <= 0:
            raise ValidationError("logit_scale must be > 0")
        if self.debias_scale <= 0:
            raise ValidationError("debias_scale must be > 0")
        if self.debias_group_weights is not None:
            w = np.asarray(self.debias_group_weights, dtype=np.float64)
            if w.size == 0 or np.any(w < 0):
                raise ValidationError("debias group weights must be nonnegative")
            if abs(float(w.sum()) - 1.0) > 1e-9:
                raise ValidationError("debias group weights must sum to 1")
            object.__setattr__(self, "debias_group_weights", tuple(float(v) for v in w))


def softmax(a: np.ndarray) -> np.ndarray:
    """Max-subtracted stable softmax along the last axis; strictly positive."""
    a = np.asarray(a, dtype=np.float64)
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy_loss(a: np.ndarray) -> float:
    """Shannon entropy (nats) of softmax(a) for a single logit vector."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1 or a.shape[0] < 2:
        raise ShapeError("entropy_loss expects a logit vector with s >= 2")
    return float(_entropy_rows(a[None, :])[0])


def _entropy_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax entropy via the logsumexp form (no log-of-underflow)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    p = np.exp(logp)
    return -(p * logp).sum(axis=-1)


def _entropy_rows_grad(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row entropies and dH/dlogits = -p * (log p + H)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    p = np.exp(logp)
    h = -(p * logp).sum(axis=-1)
    grad = -p * (logp + h[..., None])
    return h, grad


def entropy_loss_grad(a: np.ndarray) -> tuple[float, np.ndarray]:
    """entropy_loss plus its gradient w.r.t. the logits."""
    a = np.asarray(a, dtype=np.float64)
    h, g = _entropy_rows_grad(a[None, :])
    return float(h[0]), g[0]


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; zero-norm inputs are a domain error."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DomainError("cosine similarity undefined for zero-norm input")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def cosine_sim_grad(u: np.ndarray, v: np.ndarray) -> tuple[float, np.ndarray]:
    """Cosine similarity plus its gradient w.r.t. v (u held fixed)."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DomainError("cosine similarity undefined for zero-norm input")
    c = float(u @ v / (nu * nv))
    grad = u / (nu * nv) - c * v / (nv * nv)
    return c, grad


def cross_entropy_logits(
    adapted: np.ndarray,
    class_texts: np.ndarray,
    labels: np.ndarray,
    tau: float = 100.0,
) -> float:
    """Mean cross-entropy of softmax(tau * adapted @ class_texts.T) vs labels."""
    loss, _ = weighted_cross_entropy_grad(adapted, class_texts, labels, tau, None)
    return loss


def per_sample_cross_entropy(
    adapted: np.ndarray,
    class_texts: np.ndarray,
    labels: np.ndarray,
    tau: float = 100.0,
) -> np.ndarray:
    """Per-instance cross-entropy losses (no reduction)."""
    adapted = np.asarray(adapted, dtype=np.float64)
    class_texts = np.asarray(class_texts, dtype=np.float64)
    labels = _check_labels(labels, adapted.shape[0], class_texts.shape[0])
    logits = tau * (adapted @ class_texts.T)
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return lse - z[np.arange(len(labels)), labels]


def weighted_cross_entropy_grad(
    adapted: np.ndarray,
    class_texts: np.ndarray,
    labels: np.ndarray,
    tau: float = 100.0,
    weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Weighted-mean cross-entropy and its gradient w.r.t. ``adapted``.

    ``weights`` multiply per-sample losses inside the mean and default to
    ones; they are not renormalized here.
    """
    adapted = np.asarray(adapted, dtype=np.float64)
    class_texts = np.asarray(class_texts, dtype=np.float64)
    if adapted.shape[1] != class_texts.shape[1]:
        raise ShapeError("adapted and class_texts must share the embedding dim")
    n = adapted.shape[0]
    labels = _check_labels(labels, n, class_texts.shape[0])
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)

    logits = tau * (adapted @ class_texts.T)
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    logp = z - np.log(ez.sum(axis=1, keepdims=True))
    per = -logp[np.arange(n), labels]
    loss = float((w * per).mean())

    dlogits = p.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits *= (w / n)[:, None]
    grad = tau * (dlogits @ class_texts)
    return loss, grad


def _check_labels(labels: np.ndarray, n: int, c: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError(f"labels must have length {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label outside [0, {c})")
    return labels


def ldro_objective(
    original: np.ndarray,
    adapted: np.ndarray,
    debias_groups: list[np.ndarray],
    cfg: LdroConfig,
) -> tuple[float, np.ndarray]:
    """Composed debiasing objective and its gradient w.r.t. ``adapted``.

    Returns the batch mean of ``1 - mean_j H_j(x) - eta * cos(x, a_x)``
    together with d(objective)/d(adapted), shape matching ``adapted``.
    Debias logits use the unit-scaled adapted rows; a zero-norm adapted
    row is a domain error (collapsed adapter output).
    """
    original = np.asarray(original, dtype=np.float64)
    adapted = np.asarray(adapted, dtype=np.float64)
    if original.shape != adapted.shape:
        raise ShapeError("original and adapted must have the same shape")
    if not debias_groups:
        raise ValidationError("at least one debias group is required")
    b, e = adapted.shape
    groups = [np.asarray(g, dtype=np.float64) for g in debias_groups]
    for g in groups:
        if g.ndim != 2 or g.shape[1] != e:
            raise ShapeError("debias group width must match the embedding dim")

    if cfg.debias_group_weights is not None:
        if len(cfg.debias_group_weights) != len(groups):
            raise ShapeError("debias_group_weights length must match group count")
        gw = np.asarray(cfg.debias_group_weights, dtype=np.float64)
    else:
        gw = np.full(len(groups), 1.0 / len(groups))

    norms = np.linalg.norm(adapted, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DomainError("adapted embedding has a zero-norm row")
    unit = adapted / norms

    grad = np.zeros_like(adapted)
    ent_mean = np.zeros(b)
    for weight, g in zip(gw, groups):
        logits = cfg.debias_scale * (unit @ g.T)
        h, dh_dlogits = _entropy_rows_grad(logits)
        ent_mean += weight * h
        # Objective carries -H; pull the gradient back through the
        # unit-scaling Jacobian (I - unit unit^T) / norm.
        g_unit = cfg.debias_scale * (dh_dlogits @ g)
        radial = (g_unit * unit).sum(axis=1, keepdims=True)
        grad -= weight * (g_unit - radial * unit) / norms

    cos = np.empty(b)
    for i in range(b):
        c, dc = cosine_sim_grad(original[i], adapted[i])
        cos[i] = c
        grad[i] -= cfg.eta * dc

    value = float(np.mean(1.0 - ent_mean - cfg.eta * cos))
    grad /= b
    return value, grad
