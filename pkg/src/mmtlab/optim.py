"""Adam optimizer and the warmup / inverse-square-root learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    """Per-parameter Adam accumulators.

    The moment tensors always match the parameter shape; step_count advances
    by exactly 1 per update.
    """

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-9

    @classmethod
    def for_param(cls, param: Tensor, beta1: float = 0.9, beta2: float = 0.98,
                  epsilon: float = 1e-9) -> "AdamState":
        return cls(first_moment=np.zeros_like(param.data),
                   second_moment=np.zeros_like(param.data),
                   beta1=beta1, beta2=beta2, epsilon=epsilon)


def adam_step(param: Tensor, grad: np.ndarray, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on ``param`` and ``state``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape:
        raise ValueError(
            f"gradient shape {grad.shape} does not match parameter {param.shape}")
    if state.first_moment.shape != param.shape:
        raise ValueError("Adam state shaped for a different parameter")
    state.step_count += 1
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * grad
    state.second_moment = (state.beta2 * state.second_moment
                           + (1 - state.beta2) * grad * grad)
    m_hat = state.first_moment / (1 - state.beta1 ** state.step_count)
    v_hat = state.second_moment / (1 - state.beta2 ** state.step_count)
    param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


@dataclass(frozen=True)
class LrSchedule:
    """Inverse-square-root schedule with linear warmup.

    rate(step) = base_rate * model_dim^(-1/2)
               * min(step^(-1/2), step * warmup_steps^(-3/2))

    The rate is strictly positive for every step >= 1 and non-decreasing on
    [1, warmup_steps].
    """

    base_rate: float = 0.05
    model_dim: int = 512
    warmup_steps: int = 4000

    def __post_init__(self):
        if self.base_rate <= 0 or self.model_dim < 1 or self.warmup_steps < 1:
            raise ValueError("LrSchedule fields must be positive")


def lr_at(schedule: LrSchedule, step: int) -> float:
    if step < 1:
        raise ValueError(f"schedule step must be >= 1, got {step}")
    decay = min(step ** -0.5, step * schedule.warmup_steps ** -1.5)
    return schedule.base_rate * schedule.model_dim ** -0.5 * decay


class Adam:
    """Drives adam_step over a named parameter dict with a shared schedule."""

    def __init__(self, params: dict[str, Tensor], schedule: LrSchedule,
                 beta1: float = 0.9, beta2: float = 0.98, epsilon: float = 1e-9):
        self.params = params
        self.schedule = schedule
        self.states = {name: AdamState.for_param(p, beta1, beta2, epsilon)
                       for name, p in params.items()}
        self.step_count = 0

    def step(self) -> float:
        """Apply one update from accumulated ``.grad`` fields; returns the
        learning rate used. Parameters without a gradient are skipped."""
        self.step_count += 1
        lr = lr_at(self.schedule, self.step_count)
        for name, p in self.params.items():
            if p.grad is not None:
                adam_step(p, p.grad, self.states[name], lr)
        return lr

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
