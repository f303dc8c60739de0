"""Adam and plain SGD on dicts of numpy parameter arrays (updated in place)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

# Presets used for the stable setups: (lr, n_D, beta1, beta2)
DCGAN_PRESET = dict(lr=2e-4, n_d=1, beta1=0.5, beta2=0.999)
WGAN_GP_PRESET = dict(lr=1e-4, n_d=5, beta1=0.5, beta2=0.9)


class NonFiniteGradientError(FloatingPointError):
    pass


def _check_grads(grads: Mapping[str, np.ndarray]) -> None:
    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(f"non-finite gradient in {', '.join(bad)}; step aborted")


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    _check_grads(grads)
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ValueError(f"gradient shape {grads[name].shape} != parameter shape {p.shape} for {name}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class SGDState:
    lr: float = 1e-2
    t: int = 0


def sgd_step(state: SGDState, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
    _check_grads(grads)
    state.t += 1
    for name, p in params.items():
        p -= state.lr * grads[name]
