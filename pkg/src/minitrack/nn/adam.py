"""Bias-corrected ADAM parameter updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, NumericError


@dataclass
class AdamState:
    """Per-parameter optimizer state.

    Moment accumulators start at zero; ``step`` counts completed updates.
    """

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: np.ndarray, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), lr=lr, **kw)


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    name: str = "param",
) -> np.ndarray:
    """One bias-corrected ADAM update. Mutates ``state``, returns the new param."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise DimensionError(
            f"shape mismatch for '{name}': param {param.shape}, grad {grad.shape}, "
            f"moments {state.m.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient for parameter '{name}'")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class AdamSet:
    """ADAM states for a named family of parameters (one network)."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    states: dict[str, AdamState] = field(default_factory=dict)

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        out = {}
        for name, p in params.items():
            st = self.states.get(name)
            if st is None:
                st = AdamState.for_param(p, lr=self.lr, beta1=self.beta1, beta2=self.beta2)
                self.states[name] = st
            out[name] = adam_step(p, grads[name], st, name=name)
        return out
