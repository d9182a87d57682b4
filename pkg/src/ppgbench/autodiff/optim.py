"""Adam with bias correction and coupled (gradient-added) weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ShapeMismatch

PAPER_LR = 2e-5
PAPER_BETAS = (0.9, 0.999)
PAPER_WEIGHT_DECAY = 1e-8


@dataclass(frozen=True, eq=False)
class AdamState:
    step: int = 0
    first_moment: tuple = field(default=())
    second_moment: tuple = field(default=())
    lr: float = PAPER_LR
    betas: tuple[float, float] = PAPER_BETAS
    weight_decay: float = PAPER_WEIGHT_DECAY
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        zeros = tuple(np.zeros_like(np.asarray(p)) for p in params)
        return cls(0, zeros, tuple(z.copy() for z in zeros), **hyper)


def _update(p, g, m, v, t, lr, b1, b2, wd, eps):
    if wd:
        g = g + wd * p
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * (g * g)
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    return (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False), m, v


def adam_step(params, grads, state: AdamState):
    """Pure Adam update: returns ``(new_params, new_state)``; inputs are untouched."""
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise ShapeMismatch("params, grads and moments differ in count")
    t = state.step + 1
    b1, b2 = state.betas
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        p, g = np.asarray(p), np.asarray(g)
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
        a, b, c = _update(p, g, m, v, t, state.lr, b1, b2, state.weight_decay, state.eps)
        new_p.append(a)
        new_m.append(b)
        new_v.append(c)
    return new_p, replace(state, step=t, first_moment=tuple(new_m), second_moment=tuple(new_v))


class Adam:
    """Stateful wrapper driving ``adam_step`` over a list of ``Parameter``s."""

    def __init__(self, params, lr=PAPER_LR, betas=PAPER_BETAS, weight_decay=PAPER_WEIGHT_DECAY, eps=1e-8):
        self.params = list(params)
        self.state = AdamState.for_params([p.data for p in self.params], lr=lr, betas=betas,
                                          weight_decay=weight_decay, eps=eps)

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new, self.state = adam_step([p.data for p in self.params], grads, self.state)
        for p, d in zip(self.params, new):
            p.data = d

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
