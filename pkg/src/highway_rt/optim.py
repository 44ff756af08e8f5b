"""Adam with bias correction over a named parameter set."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ContractError
from .tensor import Tensor


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], **kwargs) -> "AdamState":
        state = cls(**kwargs)
        for name, p in params.items():
            state.first_moment[name] = np.zeros(p.shape)
            state.second_moment[name] = np.zeros(p.shape)
        return state


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float) -> None:
    """Apply one Adam update in place, then clear every parameter's grad.

    Every registered parameter must carry a gradient; the caller decides
    whether an unreached parameter gets an explicit zero gradient.
    """
    if set(params) != set(state.first_moment):
        raise ContractError("parameter set does not match the optimizer state")
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ContractError(f"missing gradient for parameters: {', '.join(missing)}")

    state.step += 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = p.grad
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad = None
