"""
Adaptive-moment optimizer with bias correction
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

import config
from core.exceptions import ShapeError
from core.nn.module import Parameter


@dataclass
class AdamState:
    """First/second moments per parameter and the number of steps taken"""
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Parameter]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(params: Sequence[Parameter], grads: Sequence[Optional[np.ndarray]],
              state: AdamState, lr: float = config.LEARNING_RATE_G,
              betas: Tuple[float, float] = config.ADAM_BETAS,
              eps: float = config.ADAM_EPS) -> AdamState:
    """
    One Adam update, applied to the parameter arrays in place

    Args:
        params: Parameters to update
        grads: One gradient per parameter; None counts as zero
        state: Moments, created with AdamState.zeros_like
        lr: Step size
        betas: Decay rates of the first and second moments
        eps: Denominator guard

    Returns:
        The same state object, advanced by one step
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(
            f"adam_step got {len(params)} params, {len(grads)} grads, {len(state.m)} moments"
        )
    beta1, beta2 = betas
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step

    for index, (param, grad) in enumerate(zip(params, grads)):
        if grad is None:
            grad = np.zeros_like(param.data)
        if grad.shape != param.shape or state.m[index].shape != param.shape:
            raise ShapeError(f"Gradient {grad.shape} does not match parameter {param.shape}")
        state.m[index] = beta1 * state.m[index] + (1.0 - beta1) * grad
        state.v[index] = beta2 * state.v[index] + (1.0 - beta2) * grad * grad
        m_hat = state.m[index] / correction1
        v_hat = state.v[index] / correction2
        param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


class Adam:
    """Adam over a fixed parameter list, reading .grad from each parameter"""

    def __init__(self, params: Sequence[Parameter], lr: float, betas=config.ADAM_BETAS,
                 eps: float = config.ADAM_EPS):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.state = AdamState.zeros_like(self.params)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state,
                  lr=self.lr, betas=self.betas, eps=self.eps)

    def zero_grad(self) -> None:
        for param in self.params:
            param.grad = None
