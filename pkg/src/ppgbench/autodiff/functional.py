"""Differentiable layer primitives on ``(batch, channels, length)`` or ``(batch, features)`` tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DegenerateBatch, EmptyPair, ShapeMismatch
from .tensor import Tensor, as_tensor


def _out_len(length, width, stride, padding):
    return (length + 2 * padding - width) // stride + 1


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x (B, Cin, L)`` with ``w (Cout, Cin, K)``."""
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv1d: input {x.shape} incompatible with kernels {w.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("conv1d: stride must be >= 1 and padding >= 0")
    B, Cin, L = x.shape
    Cout, _, K = w.shape
    Lout = _out_len(L, K, stride, padding)
    if Lout < 1:
        raise ShapeMismatch(f"conv1d: kernel {K} longer than padded input {L + 2 * padding}")
    xd, wd = x.data, w.data

    if K == 1 and stride == 1 and padding == 0:
        out = np.matmul(wd[:, :, 0], xd)

        def backward(g):
            gx = np.matmul(wd[:, :, 0].T, g) if x.requires_grad else None
            gw = np.tensordot(g, xd, axes=([0, 2], [0, 2]))[:, :, None] if w.requires_grad else None
            gb = g.sum(axis=(0, 2)) if b is not None and b.requires_grad else None
            return gx, gw, gb
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
        # im2col: one (B*Lout, Cin*K) matrix shared by the forward and the weight gradient
        cols = sliding_window_view(xp, K, axis=2)[:, :, ::stride][:, :, :Lout]
        cols = cols.transpose(0, 2, 1, 3).reshape(B * Lout, Cin * K)
        out = np.ascontiguousarray((cols @ wd.reshape(Cout, Cin * K).T).reshape(B, Lout, Cout).transpose(0, 2, 1))

        def backward(g):
            gx = gw = gb = None
            if w.requires_grad:
                g2 = g.transpose(0, 2, 1).reshape(B * Lout, Cout)
                gw = (g2.T @ cols).reshape(Cout, Cin, K)
            if x.requires_grad:
                # full correlation of the (stride-dilated) output gradient with the flipped kernels
                span = stride * (Lout - 1) + 1
                n_full = span + K - 1
                gd = np.zeros((B, Cout, span + 2 * (K - 1)), dtype=g.dtype)
                gd[:, :, K - 1:K - 1 + span:stride] = g
                gcols = sliding_window_view(gd, K, axis=2).transpose(0, 2, 1, 3).reshape(B * n_full, Cout * K)
                wflip = wd[:, :, ::-1].transpose(0, 2, 1).reshape(Cout * K, Cin)
                full = (gcols @ wflip).reshape(B, n_full, Cin).transpose(0, 2, 1)
                gxp = np.zeros_like(xp)
                m = min(n_full, xp.shape[2])
                gxp[:, :, :m] = full[:, :, :m]
                gx = np.ascontiguousarray(gxp[:, :, padding:padding + L])
            if b is not None and b.requires_grad:
                gb = g.sum(axis=(0, 2))
            return gx, gw, gb

    if b is not None:
        out = out + b.data[None, :, None]
        return Tensor.from_op(out, (x, w, b), backward)
    return Tensor.from_op(out, (x, w), lambda g: backward(g)[:2])


def pool1d(x: Tensor, kind: str, width: int | None = None, stride: int | None = None, padding: int = 0) -> Tensor:
    """Max / average pooling over windows, or ``global_average`` over length.

    Max pooling pads with ``-inf`` and sends the gradient to the first
    maximum in each window; average pooling pads with zeros and divides by
    the full window width.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeMismatch(f"pool1d expects (B, C, L), got {x.shape}")
    B, C, L = x.shape
    if kind == "global_average":
        def backward(g):
            return (np.broadcast_to(g[:, :, None] / L, x.shape).copy(),)
        return Tensor.from_op(x.data.mean(axis=2), (x,), backward)

    if width is None:
        raise ValueError("windowed pooling needs a width")
    stride = width if stride is None else stride
    if width > L + 2 * padding:
        raise ShapeMismatch(f"pool width {width} exceeds input length {L}")
    Lout = _out_len(L, width, stride, padding)
    fill = -np.inf if kind == "max" else 0.0
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)), constant_values=fill) if padding else x.data
    win = sliding_window_view(xp, width, axis=2)[:, :, ::stride][:, :, :Lout]
    Lp = xp.shape[2]

    if kind == "max":
        # running maximum over window offsets; strict ">" keeps the first maximum
        out = win[..., 0].copy()
        arg = np.zeros(out.shape, dtype=np.int64)
        for k in range(1, width):
            cand = win[..., k]
            better = cand > out
            np.copyto(out, cand, where=better)
            arg[better] = k
        pos = arg + (np.arange(Lout) * stride)[None, None, :]

        def backward(g):
            flat = pos + (np.arange(B * C) * Lp).reshape(B, C, 1)
            gxp = np.bincount(flat.ravel(), weights=g.ravel(), minlength=B * C * Lp)
            gxp = gxp.reshape(B, C, Lp).astype(x.dtype, copy=False)
            return (gxp[:, :, padding:padding + L],)
    elif kind == "average":
        out = win.mean(axis=3)

        def backward(g):
            gxp = np.zeros((B, C, Lp), dtype=g.dtype)
            span = stride * (Lout - 1) + 1
            for k in range(width):
                gxp[:, :, k:k + span:stride] += g / width
            return (gxp[:, :, padding:padding + L],)
    else:
        raise ValueError(f"unknown pooling kind {kind!r}")
    return Tensor.from_op(np.ascontiguousarray(out), (x,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` for ``x (B, in)`` and ``w (out, in)``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} incompatible with weights {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ShapeMismatch(f"linear: bias {b.shape} does not match {w.shape[0]} outputs")
        out = out + b.data

    def backward(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    # maximum keeps NaN, so a corrupt input surfaces as a non-finite loss
    return Tensor.from_op(np.maximum(x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,))


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)):
            raise ShapeMismatch(f"concat: {t.shape} vs {ref} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def split(x: Tensor, sizes, axis: int = 1):
    """Inverse of ``concat``: chunks of the given sizes along ``axis``."""
    x = as_tensor(x)
    out, start = [], 0
    for n in sizes:
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(start, start + n)
        idx = tuple(idx)

        def backward(g, idx=idx):
            full = np.zeros_like(x.data)
            full[idx] = g
            return (full,)

        out.append(Tensor.from_op(x.data[idx], (x,), backward))
        start += n
    if start != x.shape[axis]:
        raise ShapeMismatch(f"split sizes {list(sizes)} do not cover axis of length {x.shape[axis]}")
    return out


def flatten(x: Tensor) -> Tensor:
    return as_tensor(x).reshape(x.shape[0], -1)


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float = 1e-5,
    training: bool = True,
    running: RunningStats | None = None,
) -> Tensor:
    """Per-channel normalisation for ``(B, C, L)`` or ``(B, C)`` input.

    Training mode uses batch statistics (biased variance) and, when
    ``running`` is given, updates it in place with the unbiased variance.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim not in (2, 3):
        raise ShapeMismatch(f"batchnorm1d expects 2-D or 3-D input, got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeMismatch(f"batchnorm1d: affine terms must have shape ({C},)")
    axes = (0, 2) if x.ndim == 3 else (0,)
    shape = (1, C, 1) if x.ndim == 3 else (1, C)
    xd = x.data
    gd = gamma.data.reshape(shape)

    if training:
        n = xd.size // C
        if n < 2:
            raise DegenerateBatch("batchnorm1d needs at least two values per channel in training mode")
        mu = xd.mean(axis=axes, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        if running is not None:
            m = running.momentum
            running.mean[...] = (1 - m) * running.mean + m * mu.reshape(C)
            running.var[...] = (1 - m) * running.var + m * var.reshape(C) * (n / (n - 1))

        def backward(g):
            gg = g * gd
            gx = inv * (gg - gg.mean(axis=axes, keepdims=True) - xhat * (gg * xhat).mean(axis=axes, keepdims=True))
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        if running is None:
            raise ValueError("eval-mode batchnorm needs running statistics")
        inv = (1.0 / np.sqrt(running.var + eps)).astype(xd.dtype).reshape(shape)
        xhat = (xd - running.mean.astype(xd.dtype).reshape(shape)) * inv

        def backward(g):
            return g * gd * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = xhat * gd + beta.data.reshape(shape)
    return Tensor.from_op(out.astype(xd.dtype, copy=False), (x, gamma, beta), backward)


@dataclass(frozen=True, eq=False)
class PredictionPair:
    y_true: np.ndarray
    y_pred: np.ndarray

    def __post_init__(self):
        if np.shape(self.y_true) != np.shape(self.y_pred):
            raise ShapeMismatch("y_true and y_pred differ in length")

    @property
    def n(self) -> int:
        return int(np.size(self.y_true))

    def loss(self) -> float:
        return mse_loss(self.y_pred, self.y_true).item()


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared errors; ``pred`` may be ``(n,)`` or ``(n, 1)``."""
    pred = as_tensor(pred)
    t = np.asarray(target, dtype=pred.dtype).reshape(pred.shape) if np.size(target) == pred.size else None
    if t is None:
        raise ShapeMismatch(f"mse_loss: {pred.size} predictions vs {np.size(target)} targets")
    n = pred.size
    if n == 0:
        raise EmptyPair("mse_loss needs at least one pair")
    diff = pred.data - t
    out = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)
    return Tensor.from_op(out, (pred,), lambda g: (g * (2.0 / n) * diff,))
