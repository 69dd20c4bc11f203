"""Adam with a linear warm-up / linear decay learning-rate schedule."""
from __future__ import annotations

import numpy as np

from .autograd import NumericError


def linear_warmup_decay(step, total_steps, base_lr, warmup_frac=0.1):
    """Learning rate for 1-based ``step`` of ``total_steps``.

    Rises linearly to ``base_lr`` over the first ``warmup_frac`` of training,
    then decays linearly to zero at ``total_steps``.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be positive")
    warmup = int(round(warmup_frac * total_steps))
    if warmup > 0 and step <= warmup:
        return base_lr * step / warmup
    remaining = total_steps - warmup
    if remaining <= 0:
        return base_lr
    return base_lr * max(0.0, (total_steps - step) / remaining)


class Adam:
    """Bias-corrected Adam over a fixed list of parameter tensors."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        if lr < 0:
            raise ValueError("lr must be non-negative")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        if lr < 0:
            raise ValueError("lr must be non-negative")
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        for p, g in zip(self.params, grads):
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for parameter of shape {p.shape}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_dict(self):
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}
