"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """
    Compare the autodiff gradient of a scalar function against central
    differences, coordinate by coordinate.

    Returns max over coordinates of |autodiff - numeric| / max(1, |numeric|).
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step size {h} outside [1e-7, 1e-3]")
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        loss = f(probe)
        tape.backward(loss)
    auto = probe.grad
    if auto is None:
        auto = np.zeros_like(probe.data)

    flat = probe.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(probe).item()
        flat[i] = orig - h
        lo = f(probe).item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * h)

    numeric = numeric.reshape(probe.data.shape)
    rel = np.abs(auto - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(rel.max())
