from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..numerics import ContractError, Tensor


def linear_lr(step: int, base_lr: float, total_steps: int) -> float:
    """Linear decay from ``base_lr`` at step 0 to zero at ``total_steps``."""
    if total_steps < 1:
        raise ContractError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    return base_lr * (1.0 - step / total_steps)


def decays(name: str, p: Tensor) -> bool:
    """Weight decay applies to weight matrices only (no biases, norms, or prompts)."""
    return p.ndim >= 2 and "domain" not in name.split(".", 1)[0]


@dataclass
class AdamW:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: Mapping[str, Tensor], lr: float) -> None:
        """One update of every parameter that has a gradient; others are left untouched.

        A parameter off the loss path (grad None) gets neither a moment update
        nor weight decay, so an expert that saw no batch stays bit-identical.
        """
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            if m.shape != p.shape or g.shape != p.shape:
                raise ContractError(f"{name}: optimizer state {m.shape} / grad {g.shape} vs param {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay and decays(name, p):
                p.data = p.data * (1.0 - lr * self.weight_decay) - lr * update
            else:
                p.data = p.data - lr * update


def adamw_step(params: Mapping[str, Tensor], opt: AdamW, lr: float) -> AdamW:
    opt.step(params, lr)
    return opt
