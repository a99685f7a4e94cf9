"""Trainable embedding adapter: forward, manual backprop, optimizers.

The adapter maps the embedding space to itself through a small MLP with
rectifier activations and blends the result with the input:

    out = alpha * MLP(x) + (1 - alpha) * x

alpha = 0 is exactly the identity map.  Training math runs in float32;
``grad_check`` re-evaluates everything in a float64 shadow copy against
central finite differences.  The rectifier subgradient at 0 is taken
as 0.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ContractError,
    FormatError,
    LengthError,
    NumericalError,
    ShapeError,
    ValidationError,
)

CKPT_MAGIC = b"LDCK"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sII")  # magic, version, n_adapters
_CKPT_ADAPTER = struct.Struct("<IIf")  # n_layers, input dim, alpha
_CKPT_ENTRY = struct.Struct("<IIIIIQ")  # adapter, layer, kind, rows, cols, offset
_KIND_WEIGHT, _KIND_BIAS = 0, 1


class AdapterMLP:
    """MLP adapter with parameter list [(W, b), ...], W shaped (in, out)."""

    def __init__(self, layers: list[tuple[np.ndarray, np.ndarray]], alpha: float = 1.0):
        if not 0.0 <= alpha <= 1.0:
            raise ValidationError("alpha must lie in [0, 1]")
        if not layers:
            raise ValidationError("adapter needs at least one layer")
        if layers[0][0].shape[0] != layers[-1][0].shape[1]:
            raise ValidationError("input and output widths must match")
        self.layers = [
            (np.array(w, dtype=w.dtype, order="C"), np.array(b, dtype=b.dtype, order="C"))
            for w, b in layers
        ]
        for w, b in self.layers:
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError("weight must be 2-D with a matching bias vector")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError("adapter parameters must be finite")
        self.alpha = float(alpha)
        self._version = 0  # bumped on every in-place update; validates caches

    @property
    def dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in self.layers:
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "AdapterMLP":
        return AdapterMLP([(w.copy(), b.copy()) for w, b in self.layers], self.alpha)

    def astype(self, dtype) -> "AdapterMLP":
        return AdapterMLP(
            [(w.astype(dtype), b.astype(dtype)) for w, b in self.layers], self.alpha
        )

    def param_bytes(self) -> bytes:
        """Deterministic byte image of the parameters (for identity checks)."""
        return b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in self.parameters())


@dataclass
class ForwardCache:
    adapter_id: int
    version: int
    x: np.ndarray
    inputs: list[np.ndarray]  # input to each layer
    preacts: list[np.ndarray]  # pre-activation of each layer


def init_adapter(
    e: int,
    depth: int = 2,
    h: int | None = None,
    alpha: float = 1.0,
    seed: int = 0,
    dtype=np.float32,
) -> AdapterMLP:
    """Build an adapter with fan-in-scaled uniform weights and zero biases.

    depth 2 gives widths e -> h -> e; depth 3 gives e -> h -> h -> e.
    Identical arguments always produce bitwise-identical parameters.
    """
    if e < 1:
        raise ValidationError("embedding dim must be >= 1")
    if depth not in (2, 3):
        raise ValidationError("depth must be 2 or 3")
    h = e if h is None else h
    if h < 1:
        raise ValidationError("hidden dim must be >= 1")
    widths = [e, h, e] if depth == 2 else [e, h, h, e]
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
        b = np.zeros(fan_out, dtype=dtype)
        layers.append((w, b))
    return AdapterMLP(layers, alpha)


def forward(a: AdapterMLP, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """alpha * MLP(batch) + (1 - alpha) * batch, plus the backward cache."""
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] != a.dim:
        raise ShapeError(f"batch must be B x {a.dim}, got {batch.shape}")
    inputs, preacts = [], []
    h = batch
    last = a.depth - 1
    for i, (w, b) in enumerate(a.layers):
        inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        h = z if i == last else np.maximum(z, 0)
    out = a.alpha * h + (1.0 - a.alpha) * batch
    return out, ForwardCache(id(a), a._version, batch, inputs, preacts)


def backward(
    a: AdapterMLP, cache: ForwardCache, out_grad: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exact reverse-mode parameter gradients for the cached forward pass."""
    if cache.adapter_id != id(a) or cache.version != a._version:
        raise ContractError("forward cache is stale or belongs to another adapter")
    out_grad = np.asarray(out_grad)
    if out_grad.shape != (cache.x.shape[0], a.dim):
        raise ShapeError("out_grad shape must match the forward output")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * a.depth  # type: ignore[list-item]
    g = a.alpha * out_grad
    for i in range(a.depth - 1, -1, -1):
        w, _ = a.layers[i]
        if i < a.depth - 1:
            g = g * (cache.preacts[i] > 0)
        dw = cache.inputs[i].T @ g
        db = g.sum(axis=0)
        grads[i] = (dw, db)
        if i > 0:
            g = g @ w.T
    return grads


@dataclass
class OptimizerState:
    """SGD-with-momentum or Adam state over an adapter's parameter list."""

    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    buffers: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("adam", "sgd-momentum"):
            raise ValidationError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ValidationError("learning rate must be > 0")


def step(
    opt: OptimizerState, a: AdapterMLP, grads: list[tuple[np.ndarray, np.ndarray]]
) -> None:
    """Apply one in-place parameter update; NaN gradients abort."""
    flat_params = a.parameters()
    flat_grads = [g for pair in grads for g in pair]
    if len(flat_grads) != len(flat_params):
        raise ShapeError("gradient structure does not match the adapter")
    for p, g in zip(flat_params, flat_grads):
        if g.shape != p.shape:
            raise ShapeError("gradient shape mismatch")
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient; aborting the update")

    if not opt.buffers:
        if opt.kind == "adam":
            opt.buffers = [
                [np.zeros_like(p) for p in flat_params],
                [np.zeros_like(p) for p in flat_params],
            ]
        else:
            opt.buffers = [[np.zeros_like(p) for p in flat_params]]

    lr = opt.lr
    opt.step_count += 1
    if opt.kind == "adam":
        m_buf, v_buf = opt.buffers
        bc1 = 1.0 - opt.beta1**opt.step_count
        bc2 = 1.0 - opt.beta2**opt.step_count
        for p, g, m, v in zip(flat_params, flat_grads, m_buf, v_buf):
            m += (1.0 - opt.beta1) * (g - m)
            v += (1.0 - opt.beta2) * (g * g - v)
            p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)).astype(p.dtype)
    else:
        (vel,) = opt.buffers
        for p, g, v in zip(flat_params, flat_grads, vel):
            v *= opt.momentum
            v += g
            p -= (lr * v).astype(p.dtype)
    a._version += 1


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_err: float
    tol: float
    param_count: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def grad_check(
    a: AdapterMLP,
    loss_fn,
    batch: np.ndarray,
    step_size: float = 1e-5,
    tol: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic parameter gradients against central differences.

    ``loss_fn(outputs)`` must return ``(loss, dloss/doutputs)`` and be
    evaluable in float64.  Failures are reported, never raised.
    """
    shadow = a.astype(np.float64)
    batch64 = np.asarray(batch, dtype=np.float64)

    out, cache = forward(shadow, batch64)
    _, out_grad = loss_fn(out)
    analytic = backward(shadow, cache, np.asarray(out_grad, dtype=np.float64))
    flat_analytic = [g for pair in analytic for g in pair]

    max_rel = 0.0
    n_params = 0
    for p, ga in zip(shadow.parameters(), flat_analytic):
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + step_size
            lo_hi = loss_fn(forward(shadow, batch64)[0])[0]
            p[idx] = orig - step_size
            lo_lo = loss_fn(forward(shadow, batch64)[0])[0]
            p[idx] = orig
            numeric = (lo_hi - lo_lo) / (2.0 * step_size)
            denom = max(abs(numeric), abs(float(ga[idx])), 1e-6)
            max_rel = max(max_rel, abs(float(ga[idx]) - numeric) / denom)
            n_params += 1
            it.iternext()
    return GradCheckReport(max_rel_err=float(max_rel), tol=tol, param_count=n_params)


def save_checkpoint(adapters: list[AdapterMLP], path: str | Path) -> None:
    """Serialize an adapter chain with a parameter manifest; byte-deterministic."""
    if not adapters:
        raise ValidationError("checkpoint needs at least one adapter")
    header = _CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, len(adapters))
    sub = b"".join(
        _CKPT_ADAPTER.pack(a.depth, a.dim, np.float32(a.alpha)) for a in adapters
    )
    entries = []
    blobs = []
    offset = 0
    for ai, a in enumerate(adapters):
        for li, (w, b) in enumerate(a.layers):
            for kind, arr in ((_KIND_WEIGHT, w), (_KIND_BIAS, b)):
                rows, cols = arr.shape if arr.ndim == 2 else (1, arr.shape[0])
                entries.append(_CKPT_ENTRY.pack(ai, li, kind, rows, cols, offset))
                blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
                blobs.append(blob)
                offset += len(blob)
    body = struct.pack("<I", len(entries)) + b"".join(entries) + b"".join(blobs)
    Path(path).write_bytes(header + sub + body)


def load_checkpoint(path: str | Path) -> list[AdapterMLP]:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise LengthError(f"{path}: truncated checkpoint header")
    magic, version, n_adapters = _CKPT_HEADER.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    pos = _CKPT_HEADER.size
    metas = []
    for _ in range(n_adapters):
        metas.append(_CKPT_ADAPTER.unpack_from(raw, pos))
        pos += _CKPT_ADAPTER.size
    (n_entries,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    entries = []
    for _ in range(n_entries):
        entries.append(_CKPT_ENTRY.unpack_from(raw, pos))
        pos += _CKPT_ENTRY.size
    payload = raw[pos:]

    params: dict[tuple[int, int, int], np.ndarray] = {}
    for ai, li, kind, rows, cols, off in entries:
        nbytes = rows * cols * 4
        if off + nbytes > len(payload):
            raise LengthError(f"{path}: checkpoint payload truncated")
        arr = np.frombuffer(payload, dtype="<f4", count=rows * cols, offset=off)
        arr = arr.astype(np.float32).reshape(rows, cols)
        params[(ai, li, kind)] = arr

    adapters = []
    for ai, (n_layers, _dim, alpha) in enumerate(metas):
        layers = []
        for li in range(n_layers):
            try:
                w = params[(ai, li, _KIND_WEIGHT)]
                b = params[(ai, li, _KIND_BIAS)][0]
            except KeyError as exc:
                raise FormatError(f"{path}: checkpoint manifest incomplete") from exc
            layers.append((w, b))
        adapters.append(AdapterMLP(layers, float(alpha)))
    return adapters
