"""Adam with bias correction and decoupled weight decay."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def clone(self) -> AdamState:
        return copy.deepcopy(self)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray | None], state: AdamState) -> None:
    """Update ``params`` in place and advance ``state`` by one step.

    Weight decay is applied directly to the parameters (scaled by the learning
    rate), not folded into the gradient moments.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    """Adam over named parameter groups, each with its own lr and weight decay."""

    def __init__(self, groups: dict[str, tuple[list[Tensor], float, float]],
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.groups: dict[str, list[Tensor]] = {}
        self.states: dict[str, AdamState] = {}
        for name, (params, lr, wd) in groups.items():
            self.groups[name] = list(params)
            self.states[name] = AdamState(lr=lr, weight_decay=wd, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for params in self.groups.values():
            for p in params:
                p.grad = None

    def step(self) -> None:
        for name, params in self.groups.items():
            adam_step([p.data for p in params], [p.grad for p in params], self.states[name])

    def learning_rates(self) -> dict[str, float]:
        return {name: s.lr for name, s in self.states.items()}
