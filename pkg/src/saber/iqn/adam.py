"""Adaptive-moment optimizer over parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NumericalError(FloatingPointError):
    """A NaN or infinity reached the optimizer or the loss."""


@dataclass
class AdamConfig:
    lr: float = 5e-5
    eps: float = 3.125e-4
    beta1: float = 0.9
    beta2: float = 0.999


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, cfg: AdamConfig | None = None) -> dict:
    """Bias-corrected Adam update, in place; returns ``params``."""
    cfg = cfg or AdamConfig()
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {k}")
    state.t += 1
    c1 = 1.0 - cfg.beta1 ** state.t
    c2 = 1.0 - cfg.beta2 ** state.t
    for k, g in grads.items():
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(g, dtype=np.float64)
            state.v[k] = np.zeros_like(g, dtype=np.float64)
        v = state.v[k]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        step = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        params[k] -= step.astype(params[k].dtype)
    return params
