"""Adaptive-moment optimizer with inverse-square-root warmup schedule.

Update rule (documented so tests can hand-step it):

    lr(t)  = scale * d_model**-0.5 * min(t**-0.5, t * warmup**-1.5)
    m_t    = beta1 * m_{t-1} + (1 - beta1) * g
    v_t    = beta2 * v_{t-1} + (1 - beta2) * g**2
    m_hat  = m_t / (1 - beta1**t)
    v_hat  = v_t / (1 - beta2**t)
    p     -= lr(t) * m_hat / (sqrt(v_hat) + eps)

with decay rates (0.9, 0.98) and eps 1e-9. The learning rate peaks at
t == warmup, where both arguments of the min coincide.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class NaNGradientError(ValueError):
    """A gradient contained NaN/Inf; optimizer state was left untouched."""


class AdamState:
    """Per-parameter moment buffers plus the shared step counter and schedule."""

    def __init__(self, params: dict[str, Tensor], d_model: int,
                 scale: float = 1.0, warmup: int = 400,
                 betas: tuple[float, float] = (0.9, 0.98), eps: float = 1e-9):
        if warmup < 1:
            raise ValueError("warmup must be >= 1")
        self.params = params
        self.d_model = int(d_model)
        self.scale = float(scale)
        self.warmup = int(warmup)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def learning_rate(self, t: int) -> float:
        if t < 1:
            raise ValueError("schedule step must be >= 1")
        return self.scale * self.d_model ** -0.5 * min(t ** -0.5, t * self.warmup ** -1.5)

    def step(self, grads: dict[str, np.ndarray] | None = None) -> float:
        """Apply one update; returns the learning rate used.

        ``grads`` defaults to the .grad buffers of the registered parameters
        (missing/None gradients count as zero). Any non-finite gradient
        aborts before any state is mutated.
        """
        if grads is None:
            grads = {k: p.grad_array() for k, p in self.params.items()}
        for name, g in grads.items():
            if g.shape != self.params[name].shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            if not np.all(np.isfinite(g)):
                raise NaNGradientError(f"non-finite gradient for parameter {name}")

        t = self.step_count + 1
        lr = self.learning_rate(t)
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype, copy=False)
        self.step_count = t
        return lr

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
