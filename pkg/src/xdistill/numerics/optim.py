"""Adam with linear warmup and multiplicative per-epoch learning-rate decay."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor


class AdamState:
    """Per-parameter Adam moments plus the schedule bookkeeping.

    Effective learning rate at (step, epoch):
        base_lr * warmup_factor(step) * epoch_decay ** epoch
    where warmup_factor ramps linearly from 0 at step 0 to 1 at
    ceil(warmup_ratio * total_steps) and is 1 afterwards.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        base_lr: float = 1e-4,
        warmup_ratio: float = 0.05,
        total_steps: int = 1000,
        epoch_decay: float = 1.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        if not 0.0 <= warmup_ratio <= 1.0:
            raise ValueError(f"warmup_ratio must lie in [0,1], got {warmup_ratio}")
        if not 0.0 < epoch_decay <= 1.0:
            raise ValueError(f"epoch_decay must lie in (0,1], got {epoch_decay}")
        self.params = params
        self.base_lr = base_lr
        self.warmup_ratio = warmup_ratio
        self.total_steps = total_steps
        self.epoch_decay = epoch_decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def effective_lr(self, step: int | None = None, epoch: int = 0) -> float:
        if step is None:
            step = self.step_count
        warmup_steps = math.ceil(self.warmup_ratio * self.total_steps)
        factor = 1.0 if step >= warmup_steps or warmup_steps == 0 else step / warmup_steps
        return self.base_lr * factor * self.epoch_decay**epoch

    def step(self, epoch: int = 0):
        """Apply one Adam update from the parameters' accumulated gradients."""
        lr = self.effective_lr(self.step_count, epoch)
        b1, b2 = self.betas
        t = self.step_count + 1
        bias1 = 1.0 - b1**t
        bias2 = 1.0 - b2**t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
        self.step_count += 1

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
