"""1D backbones mapping ``(B, 1, L)`` PPG batches to ``(B, F)`` feature vectors."""

from __future__ import annotations

import numpy as np

from ..autodiff import (
    BatchNorm1d,
    Conv1d,
    Flatten,
    GlobalAvgPool1d,
    Linear,
    MaxPool1d,
    Module,
    ReLU,
    Sequential,
    Tensor,
    concat,
    relu,
)
from ..autodiff.nn import conv_bn_relu
from ..errors import UnsupportedLength
from .s4 import S4DLayer
from .specs import InceptionSpec, ModelSpec, S4Spec, XResNetSpec


def _conv_len(L, k, stride=1, padding=0):
    return (L + 2 * padding - k) // stride + 1


def _require(ok: bool, what: str, L: int):
    if not ok:
        raise UnsupportedLength(f"{what} cannot process input length {L}")


class LeNet1d(Module):
    def __init__(self, spec: ModelSpec, rng):
        L = spec.input_length
        n = _conv_len(_conv_len(L, 5) // 2, 5) // 2
        _require(L >= 5 and _conv_len(L, 5) >= 2 and _conv_len(L, 5) // 2 >= 5 and n >= 1, "lenet1d", L)
        self.out_width = 84
        self.body = Sequential(
            Conv1d(1, 6, 5, rng), ReLU(), MaxPool1d(2),
            Conv1d(6, 16, 5, rng), ReLU(), MaxPool1d(2),
            Flatten(),
            Linear(16 * n, 120, rng), ReLU(),
            Linear(120, 84, rng), ReLU(),
        )

    def forward(self, x):
        return self.body(x)


class _Basic(Module):
    def __init__(self, c_in, width, stride, k, rng):
        self.convs = Sequential(
            conv_bn_relu(c_in, width, k, rng, stride=stride),
            conv_bn_relu(width, width, k, rng, relu=False),
        )
        self.shortcut = _shortcut(c_in, width, stride, rng)

    def forward(self, x):
        return relu(self.convs(x) + (self.shortcut(x) if self.shortcut else x))


class _Bottleneck(Module):
    def __init__(self, c_in, width, stride, k, rng, expansion=4):
        out = width * expansion
        self.convs = Sequential(
            conv_bn_relu(c_in, width, 1, rng),
            conv_bn_relu(width, width, k, rng, stride=stride),
            conv_bn_relu(width, out, 1, rng, relu=False),
        )
        self.shortcut = _shortcut(c_in, out, stride, rng)

    def forward(self, x):
        return relu(self.convs(x) + (self.shortcut(x) if self.shortcut else x))


def _shortcut(c_in, c_out, stride, rng):
    if c_in == c_out and stride == 1:
        return None
    return Sequential(Conv1d(c_in, c_out, 1, rng, stride=stride, bias=False), BatchNorm1d(c_out))


class XResNet1d(Module):
    """Three-convolution stem, max-pool, four residual stages, global average pooling."""

    def __init__(self, spec: ModelSpec, rng, xspec: XResNetSpec):
        k = xspec.kernel_size
        stem_c = spec.scaled(xspec.stem_channels)
        L = spec.input_length
        n = _conv_len(L, k, 2, k // 2)
        _require(n >= 1, spec.backbone, L)
        n = _conv_len(n, 3, 2, 1)
        for _ in xspec.widths[1:]:
            n = _conv_len(n, k, 2, k // 2)
        _require(n >= 1, spec.backbone, L)

        self.stem = Sequential(
            conv_bn_relu(1, stem_c, k, rng, stride=2),
            conv_bn_relu(stem_c, stem_c, k, rng),
            conv_bn_relu(stem_c, stem_c, k, rng),
            MaxPool1d(3, 2, 1),
        )
        blocks = []
        c = stem_c
        for si, (w, reps) in enumerate(zip(xspec.widths, xspec.layers)):
            w = spec.scaled(w)
            for r in range(reps):
                stride = 2 if si > 0 and r == 0 else 1
                if xspec.expansion == 1:
                    blocks.append(_Basic(c, w, stride, k, rng))
                    c = w
                else:
                    blocks.append(_Bottleneck(c, w, stride, k, rng, xspec.expansion))
                    c = w * xspec.expansion
        self.blocks = blocks
        self.pool = GlobalAvgPool1d()
        self.out_width = c

    def forward(self, x):
        x = self.stem(x)
        for blk in self.blocks:
            x = blk(x)
        return self.pool(x)


class _InceptionBlock(Module):
    def __init__(self, c_in, ispec: InceptionSpec, spec: ModelSpec, rng):
        nb = spec.scaled(ispec.bottleneck)
        nf = spec.scaled(ispec.branch_filters)
        self.bottleneck = Conv1d(c_in, nb, 1, rng, bias=False)
        self.branches = [Conv1d(nb, nf, k, rng, padding=k // 2, bias=False) for k in ispec.kernel_sizes]
        self.pool = MaxPool1d(3, 1, 1)
        self.pool_conv = Conv1d(c_in, nf, 1, rng, bias=False)
        self.out_channels = nf * (len(ispec.kernel_sizes) + 1)
        self.bn = BatchNorm1d(self.out_channels)

    def forward(self, x):
        z = self.bottleneck(x)
        outs = [conv(z) for conv in self.branches]
        outs.append(self.pool_conv(self.pool(x)))
        return relu(self.bn(concat(outs, axis=1)))


class Inception1d(Module):
    """Inception blocks with a projected residual shortcut every ``residual_every`` blocks."""

    def __init__(self, spec: ModelSpec, rng, ispec: InceptionSpec):
        L = spec.input_length
        _require(L >= 2, "inception1d", L)  # batch norm over a single step is degenerate at batch 1
        self.residual_every = ispec.residual_every
        blocks, shortcuts = [], []
        c = 1
        res_c = 1
        for i in range(ispec.n_blocks):
            blk = _InceptionBlock(c, ispec, spec, rng)
            blocks.append(blk)
            c = blk.out_channels
            if (i + 1) % ispec.residual_every == 0:
                shortcuts.append(Sequential(Conv1d(res_c, c, 1, rng, bias=False), BatchNorm1d(c)))
                res_c = c
        self.blocks = blocks
        self.shortcuts = shortcuts
        self.pool = GlobalAvgPool1d()
        self.out_width = c

    def forward(self, x):
        res = x
        for i, blk in enumerate(self.blocks):
            x = blk(x)
            if (i + 1) % self.residual_every == 0:
                x = relu(x + self.shortcuts[i // self.residual_every](res))
                res = x
        return self.pool(x)


class _S4Block(Module):
    def __init__(self, width, rng, s4spec: S4Spec):
        self.norm = BatchNorm1d(width)
        self.ssm = S4DLayer(width, rng, s4spec)
        self.mix = Conv1d(width, width, 1, rng)

    def forward(self, x):
        return x + self.mix(relu(self.ssm(self.norm(x))))


class S4Backbone(Module):
    """Pointwise encoder, residual diagonal state-space blocks, mean over time."""

    def __init__(self, spec: ModelSpec, rng, s4spec: S4Spec):
        L = spec.input_length
        if L > s4spec.l_max:
            raise UnsupportedLength(f"s4_1d: input length {L} exceeds l_max {s4spec.l_max}")
        width = spec.scaled(s4spec.d_model)
        self.encoder = Conv1d(1, width, 1, rng)
        self.blocks = [_S4Block(width, rng, s4spec) for _ in range(s4spec.n_blocks)]
        self.pool = GlobalAvgPool1d()
        self.out_width = width

    def forward(self, x):
        x = self.encoder(x)
        for blk in self.blocks:
            x = blk(x)
        return self.pool(x)


def build_backbone(spec: ModelSpec, rng: np.random.Generator) -> Module:
    if spec.backbone == "lenet1d":
        return LeNet1d(spec, rng)
    if spec.backbone == "xresnet18_1d":
        return XResNet1d(spec, rng, XResNetSpec(depth=18))
    if spec.backbone == "xresnet50_1d":
        return XResNet1d(spec, rng, XResNetSpec(depth=50))
    if spec.backbone == "inception1d":
        return Inception1d(spec, rng, InceptionSpec())
    return S4Backbone(spec, rng, S4Spec())


def as_batch(ppg) -> Tensor:
    """Accept ``(B, L)`` or ``(B, 1, L)`` arrays/tensors; return ``(B, 1, L)``."""
    if isinstance(ppg, Tensor):
        return ppg if ppg.ndim == 3 else ppg.reshape(ppg.shape[0], 1, ppg.shape[1])
    arr = np.asarray(ppg)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float32)
    return Tensor(arr if arr.ndim == 3 else arr[:, None, :])
