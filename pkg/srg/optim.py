"""
Adam optimizer and exponential learning-rate decay
"""

from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from srg.errors import DimensionError
from srg.tensor import Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(
            m=np.zeros(param.shape, dtype=np.float64),
            v=np.zeros(param.shape, dtype=np.float64),
        )


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """
    One bias-corrected Adam update. Updates `state` in place and returns the
    new parameter values (same dtype as `param`).
    """
    if grad.shape != param.shape or state.m.shape != param.shape:
        raise DimensionError(
            f"adam: param {param.shape}, grad {grad.shape}, state {state.m.shape}", axis="parameter"
        )
    g = grad.astype(np.float64)
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    updated = param.astype(np.float64) - lr * m_hat / (np.sqrt(v_hat) + eps)
    return updated.astype(param.dtype)


def exponential_decay(
    step: int,
    base_lr: float = 1e-4,
    decay_every: int = 10,
    rate: float = 0.96,
    staircase: bool = True,
) -> float:
    """lr = base_lr * rate ** (step / decay_every), floored division when staircase"""
    exponent = step // decay_every if staircase else step / decay_every
    return base_lr * rate ** exponent


@dataclass
class Adam:
    params: Sequence[Tensor]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: Dict[int, AdamState] = field(default_factory=dict)

    def step(self, lr: float):
        """Apply one update to every parameter that received a gradient"""
        for index, p in enumerate(self.params):
            if p.grad is None:
                continue
            state = self.states.get(index)
            if state is None:
                state = self.states[index] = AdamState.zeros_like(p.data)
            p.data = adam_step(p.data, p.grad, state, lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


@dataclass(frozen=True)
class DecaySchedule:
    """Staircase exponential decay shared by both trainers"""
    base_lr: float
    decay_every: int
    rate: float = 0.96

    def lr(self, step: int) -> float:
        return exponential_decay(step, self.base_lr, self.decay_every, self.rate)
