"""AdamW with decoupled weight decay, plus global-norm gradient clipping."""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .tensor import Tensor


class OptimizerError(RuntimeError):
    """Non-finite gradient or inconsistent optimizer state."""


class AdamW:
    """Bias-corrected Adam moments; weight decay applied directly to the
    weights rather than through the moment estimates.

    Decay is skipped for 1-D parameters (biases and layer-norm affines),
    matching common transformer practice.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        lr_scales: dict[str, float] | None = None,
    ):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.lr_scales = dict(lr_scales or {})
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(grad).all():
                raise OptimizerError(f"non-finite gradient in parameter block {name!r}")
            decay = self.weight_decay if p.data.ndim >= 2 else 0.0
            kernels.adamw_update(
                p.data.reshape(-1),
                np.ascontiguousarray(grad.reshape(-1)),
                self._m[name].reshape(-1),
                self._v[name].reshape(-1),
                self.step_count,
                self.lr * self.lr_scales.get(name, 1.0),
                self.beta1,
                self.beta2,
                self.eps,
                decay,
            )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            flat = p.grad.reshape(-1)
            total += float(np.dot(flat, flat))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm
