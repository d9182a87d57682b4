"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NonScalarOutput
from .tensor import Tensor


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    worst: tuple  # (tensor index, flat coordinate)
    n_checked: int

    def __float__(self):
        return self.max_rel_error


def relative_error(a, n, floor=1e-8):
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(fn, tensors, h=1e-5, max_coords: int | None = None, seed: int = 0,
               floor: float | None = None) -> GradCheckResult:
    """Compare ``backward`` gradients of the scalar ``fn()`` with central differences.

    ``fn`` closes over ``tensors`` (float64 leaves with ``requires_grad``)
    and is re-evaluated after each in-place perturbation. With
    ``max_coords`` set, that many coordinates are sampled per tensor.

    The relative error denominator is ``max(|analytic|, |numeric|, floor)``;
    the default floor ``1e-6 * max(1, |f|)`` keeps round-off on structurally
    zero gradients from reading as a failure.

    ``h`` may be a sequence of step sizes. Each coordinate then keeps the
    smallest error over the steps (stopping once one agrees to 1e-7). This
    is for graphs with kinks (ReLU, max-pool) or strong curvature, where a
    single step can straddle a switch point; a wrong analytic gradient
    disagrees with every step.
    """
    steps = [float(v) for v in np.atleast_1d(h)]
    if not steps or min(steps) <= 0:
        raise ValueError("grad_check step sizes must be positive")
    for t in tensors:
        if t.data.dtype != np.float64:
            raise TypeError("grad_check needs float64 tensors")
        t.grad = None
    out = fn()
    if out.size != 1:
        raise NonScalarOutput(f"grad_check needs a scalar output, got shape {out.shape}")
    if floor is None:
        floor = 1e-6 * max(1.0, abs(out.item()))
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    rng = np.random.default_rng(seed)
    worst, worst_at, n = 0.0, (-1, -1), 0
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for c in coords:
            a = analytic[ti].reshape(-1)[c]
            orig = flat[c]
            err = np.inf
            for step in steps:
                flat[c] = orig + step
                fp = fn().item()
                flat[c] = orig - step
                fm = fn().item()
                flat[c] = orig
                err = min(err, relative_error(a, (fp - fm) / (2 * step), floor))
                if err < 1e-7:
                    break
            n += 1
            if err > worst:
                worst, worst_at = err, (ti, int(c))
    return GradCheckResult(worst, worst_at, n)


def check_function(f, *arrays, h=1e-5, **kw) -> GradCheckResult:
    """Gradient check for ``f(*tensors) -> scalar Tensor`` at the given inputs."""
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    return grad_check(lambda: f(*leaves), leaves, h=h, **kw)
