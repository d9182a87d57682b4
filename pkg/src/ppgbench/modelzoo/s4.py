"""Diagonal state-space (S4D-style) sequence layer.

Per channel ``h`` the continuous system has ``N`` real, negative eigenvalues
``A = -exp(log_neg_a)``, input vector ``b``, output vector ``c``, a skip term
``d`` and a step size ``dt = exp(log_dt)``. Zero-order-hold discretization
gives

    lam  = exp(dt * A)
    bbar = (lam - 1) / A * b

and the layer output is the causal convolution of the input with

    K[t] = sum_n c_n * bbar_n * lam_n ** t

plus ``d * u``. The same output follows from the recurrence
``x_t = lam * x_{t-1} + bbar * u_t``, ``y_t = c . x_t + d * u_t``, which
``recurrent_scan`` evaluates step by step as an oracle.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from ..autodiff import Module, Parameter, Tensor
from ..errors import ShapeMismatch, UnstableState, UnsupportedLength
from .specs import S4Spec


def _fft_len(n: int) -> int:
    return 1 << int(2 * n - 1).bit_length()


def ssm_kernel(lam, bbar, c, length: int) -> np.ndarray:
    """Kernel of a discretized diagonal system; ``lam``, ``bbar``, ``c`` are ``(..., N)``."""
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(np.abs(lam) >= 1):
        raise UnstableState("discrete eigenvalues must lie strictly inside the unit circle")
    coef = np.asarray(c, dtype=np.float64) * np.asarray(bbar, dtype=np.float64)
    powers = lam[..., None] ** np.arange(length)
    return np.einsum("...n,...nt->...t", coef, powers)


def discretize(log_dt, log_neg_a, b):
    """Zero-order hold. Returns ``(lam, bbar)`` with shapes of ``log_neg_a``."""
    dt = np.exp(np.asarray(log_dt, dtype=np.float64))[..., None]
    a = -np.exp(np.asarray(log_neg_a, dtype=np.float64))
    z = dt * a
    lam = np.exp(z)
    return lam, np.expm1(z) / a * np.asarray(b, dtype=np.float64)


def continuous_kernel(a, b, c, dt, length: int) -> np.ndarray:
    """Kernel from continuous parameters; raises if any eigenvalue is not stable."""
    a = np.asarray(a, dtype=np.float64)
    if np.any(np.real(a) >= 0):
        raise UnstableState("continuous eigenvalues need negative real parts")
    dt = np.asarray(dt, dtype=np.float64)
    if dt.ndim:
        dt = dt[..., None]
    lam = np.exp(dt * a)
    bbar = np.expm1(dt * a) / a * np.asarray(b, dtype=np.float64)
    return ssm_kernel(lam, bbar, c, length)


def recurrent_scan(lam, bbar, c, d, u) -> np.ndarray:
    """Step-by-step evaluation over ``u (B, H, L)``; parameters are ``(H, N)`` and ``d (H,)``."""
    lam, bbar, c = (np.asarray(v, dtype=np.float64) for v in (lam, bbar, c))
    u = np.asarray(u, dtype=np.float64)
    B, H, L = u.shape
    state = np.zeros((B,) + lam.shape)
    y = np.empty_like(u)
    for t in range(L):
        state = lam * state + bbar * u[:, :, t, None]
        y[:, :, t] = np.einsum("bhn,hn->bh", state, c)
    return y + np.asarray(d, dtype=np.float64)[None, :, None] * u


def causal_conv(u: Tensor, k: Tensor) -> Tensor:
    """``y[b,h,t] = sum_{s<=t} k[h,s] u[b,h,t-s]`` via zero-padded FFTs."""
    if u.ndim != 3 or k.ndim != 2 or u.shape[1:] != k.shape:
        raise ShapeMismatch(f"causal_conv: input {u.shape} vs kernel {k.shape}")
    L = u.shape[2]
    n = _fft_len(L)
    uf = sfft.rfft(u.data, n=n)
    kf = sfft.rfft(k.data, n=n)
    out = sfft.irfft(uf * kf[None], n=n)[..., :L].astype(u.dtype)

    def backward(g):
        gf = sfft.rfft(g, n=n)
        gu = sfft.irfft(gf * np.conj(kf)[None], n=n)[..., :L].astype(u.dtype) if u.requires_grad else None
        gk = (sfft.irfft((gf * np.conj(uf)).sum(axis=0), n=n)[..., :L].astype(k.dtype)
              if k.requires_grad else None)
        return gu, gk

    return Tensor.from_op(out, (u, k), backward)


def _phi(z):
    # (e^z - 1) / z and its derivative, for z < 0
    em1 = np.expm1(z)
    phi = em1 / z
    dphi = (z * np.exp(z) - em1) / (z * z)
    return phi, dphi


def s4d_kernel(log_dt: Tensor, log_neg_a: Tensor, b: Tensor, c: Tensor, length: int) -> Tensor:
    """Differentiable kernel ``(H, length)`` from layer parameters."""
    dtype = c.dtype
    s = log_dt.data.astype(np.float64)[:, None]
    a_log = log_neg_a.data.astype(np.float64)
    bd, cd = b.data.astype(np.float64), c.data.astype(np.float64)
    dt = np.exp(s)
    z = -np.exp(s + a_log)  # dt * A
    lam = np.exp(z)
    phi, dphi = _phi(z)
    cb = cd * bd
    coef = cb * dt * phi
    t = np.arange(length)
    powers = lam[..., None] ** t  # (H, N, L)
    kern = np.einsum("hn,hnt->ht", coef, powers)

    def backward(g):
        g = g.astype(np.float64)
        g1 = np.einsum("ht,hnt->hn", g, powers)
        g2 = np.einsum("ht,hnt->hn", g * t, powers)
        dz = coef * g2 + g1 * cb * dt * dphi
        ga = dz * z
        gs = (ga + g1 * cb * dt * phi).sum(axis=1)
        gb = g1 * cd * dt * phi
        gc = g1 * bd * dt * phi
        return (gs.astype(log_dt.dtype), ga.astype(log_neg_a.dtype), gb.astype(b.dtype), gc.astype(c.dtype))

    return Tensor.from_op(kern.astype(dtype), (log_dt, log_neg_a, b, c), backward)


def geometric_eigenvalues(n: int, a_min: float = 0.5, a_max: float | None = None) -> np.ndarray:
    """Magnitudes of the initial (negative) eigenvalues, geometrically spaced."""
    a_max = float(max(n, 2)) if a_max is None else a_max
    if n == 1:
        return np.array([a_min])
    return a_min * (a_max / a_min) ** (np.arange(n) / (n - 1))


class S4DLayer(Module):
    """Channel-wise diagonal state-space convolution over ``(B, H, L)``."""

    def __init__(self, channels: int, rng: np.random.Generator, spec: S4Spec = S4Spec()):
        self.l_max = spec.l_max
        h, n = channels, spec.state_dim
        self.log_dt = Parameter(rng.uniform(np.log(spec.dt_min), np.log(spec.dt_max), size=h))
        self.log_neg_a = Parameter(np.tile(np.log(geometric_eigenvalues(n)), (h, 1)))
        self.b = Parameter(np.ones((h, n)))
        self.c = Parameter(rng.standard_normal((h, n)) * np.sqrt(1.0 / n))
        self.d = Parameter(rng.standard_normal(h))

    def discrete(self):
        lam, bbar = discretize(self.log_dt.data, self.log_neg_a.data, self.b.data)
        return lam, bbar, self.c.data.astype(np.float64)

    def kernel(self, length: int) -> np.ndarray:
        return s4_kernel(self, length)

    def forward(self, x: Tensor) -> Tensor:
        L = x.shape[2]
        if L > self.l_max:
            raise UnsupportedLength(f"sequence length {L} exceeds l_max {self.l_max}")
        k = s4d_kernel(self.log_dt, self.log_neg_a, self.b, self.c, L)
        return causal_conv(x, k) + x * self.d.reshape(1, -1, 1)

    def scan(self, u) -> np.ndarray:
        lam, bbar, c = self.discrete()
        return recurrent_scan(lam, bbar, c, self.d.data, u)


def s4_kernel(layer: S4DLayer, length: int) -> np.ndarray:
    """Per-channel convolution kernel ``(H, length)`` of a layer, in float64."""
    if length > layer.l_max:
        raise UnsupportedLength(f"kernel length {length} exceeds l_max {layer.l_max}")
    a = -np.exp(layer.log_neg_a.data.astype(np.float64))
    if np.any(~np.isfinite(a)) or np.any(a >= 0):
        raise UnstableState("continuous eigenvalues need negative real parts")
    lam, bbar, c = layer.discrete()
    return ssm_kernel(lam, bbar, c, length)
