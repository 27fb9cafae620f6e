"""Differentiable operations over :class:`~xdistill.numerics.tensor.Tensor`.

Every op computes its forward result with numpy, then (when a tape is
active and an input participates in the graph) records a closure that
pushes the output gradient back to the inputs.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import ShapeError, Tensor, current_tape

_GELU_C = math.sqrt(2.0 / math.pi)


def _record(op: str, inputs: tuple[Tensor, ...], out: Tensor, backward) -> Tensor:
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _record("add", (a, b), out, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape))

    return _record("sub", (a, b), out, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _record("mul", (a, b), out, backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _record("div", (a, b), out, backward)


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(2.0 * a.data * out.grad)

    return _record("square", (a,), out, backward)


def sqrt(a: Tensor) -> Tensor:
    root = np.sqrt(a.data)
    out = Tensor(root)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * 0.5 / root)

    return _record("sqrt", (a,), out, backward)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    out = Tensor(e)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * e)

    return _record("exp", (a,), out, backward)


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad / a.data)

    return _record("log", (a,), out, backward)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = Tensor(t)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad * (1.0 - t * t))

    return _record("tanh", (a,), out, backward)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation (BERT convention)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t))

    def backward():
        if a.requires_grad:
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
            dx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            a.accumulate_grad(out.grad * dx)

    return _record("gelu", (a,), out, backward)


# ---------------------------------------------------------------- reductions


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def backward():
        if a.requires_grad:
            a.accumulate_grad(np.full(a.shape, float(out.grad)))

    return _record("sum_all", (a,), out, backward)


def mean_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.mean())

    def backward():
        if a.requires_grad:
            a.accumulate_grad(np.full(a.shape, float(out.grad) / a.size))

    return _record("mean_all", (a,), out, backward)


def sum_axis(a: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def backward():
        if a.requires_grad:
            g = out.grad
            if not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate_grad(np.broadcast_to(g, a.shape).copy())

    return _record("sum_axis", (a,), out, backward)


def mean_axis(a: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    n = a.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))

    def backward():
        if a.requires_grad:
            g = out.grad
            if not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate_grad(np.broadcast_to(g, a.shape) / n)

    return _record("mean_axis", (a,), out, backward)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {list(a.shape)} x {list(b.shape)}")
    out = Tensor(a.data @ b.data)

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return _record("matmul", (a, b), out, backward)


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T)

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad.T)

    return _record("transpose", (a,), out, backward)


# ---------------------------------------------------------------- shape ops


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def backward():
        if a.requires_grad:
            a.accumulate_grad(out.grad.reshape(a.shape))

    return _record("reshape", (a,), out, backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[:, start:stop].copy())

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[:, start:stop] = out.grad
            a.accumulate_grad(g)

    return _record("slice_cols", (a,), out, backward)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows of `a` (embedding lookup / position select)."""
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(a.data[idx])

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            a.accumulate_grad(g)

    return _record("gather_rows", (a,), out, backward)


def concat_rows(parts: list[Tensor]) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))

    def backward():
        offset = 0
        for p in parts:
            n = p.shape[0]
            if p.requires_grad:
                p.accumulate_grad(out.grad[offset : offset + n])
            offset += n

    return _record("concat_rows", tuple(parts), out, backward)


def concat_cols(parts: list[Tensor]) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))

    def backward():
        offset = 0
        for p in parts:
            n = p.shape[1]
            if p.requires_grad:
                p.accumulate_grad(out.grad[:, offset : offset + n])
            offset += n

    return _record("concat_cols", tuple(parts), out, backward)


# ---------------------------------------------------------------- fused layers


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction; rows sum to 1 exactly up to fp."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p)

    def backward():
        if x.requires_grad:
            g = out.grad
            dot = (g * p).sum(axis=-1, keepdims=True)
            x.accumulate_grad((g - dot) * p)

    return _record("softmax_rows", (x,), out, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def backward():
        g = out.grad
        d = x.shape[-1]
        if gain.requires_grad:
            gain.accumulate_grad(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias.accumulate_grad(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gh = g * gain.data
            term = gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(term * inv)

    return _record("layer_norm", (x, gain, bias), out, backward)


def cross_entropy(logits: Tensor, targets, ignore_index: int = -100) -> Tensor:
    """Mean negative log-softmax over non-ignored targets.

    Returns a zero-gradient 0.0 when every position is ignored.
    """
    tgt = np.asarray(targets, dtype=np.int64)
    if tgt.ndim != 1 or tgt.shape[0] != logits.shape[0]:
        raise ShapeError(f"targets length {tgt.shape} does not match logits {list(logits.shape)}")
    keep = tgt != ignore_index
    n_keep = int(keep.sum())
    v = logits.shape[1]
    if np.any((tgt[keep] < 0) | (tgt[keep] >= v)):
        bad = tgt[keep][(tgt[keep] < 0) | (tgt[keep] >= v)][0]
        raise IndexError(f"target {bad} out of range for {v} classes")
    if n_keep == 0:
        out = Tensor(0.0)
        return _record("cross_entropy", (logits,), out, lambda: None)

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    rows = np.nonzero(keep)[0]
    out = Tensor(-logp[rows, tgt[rows]].mean())

    def backward():
        if logits.requires_grad:
            p = np.exp(logp)
            g = np.zeros_like(logits.data)
            g[rows] = p[rows]
            g[rows, tgt[rows]] -= 1.0
            logits.accumulate_grad(g * (float(out.grad) / n_keep))

    return _record("cross_entropy", (logits,), out, backward)
