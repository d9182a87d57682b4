"""Minimal module system: parameters, buffers, train/eval mode, state dicts."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import functional as F
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=np.float32):
        super().__init__(np.array(data, dtype=dtype), requires_grad=True)


class Module:
    """Children, parameters and buffers are discovered from instance attributes
    (in assignment order); lists and tuples of modules are walked too."""

    training = True
    _buffer_names: tuple[str, ...] = ()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for name, v in vars(self).items():
            if isinstance(v, Module):
                yield name, v
            elif isinstance(v, (list, tuple)):
                for i, item in enumerate(v):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, v in vars(self).items():
            if isinstance(v, Parameter):
                yield prefix + name, v
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name in self._buffer_names:
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def modules(self):
        yield self
        for _, child in self._children():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict((k, p.data) for k, p in self.named_parameters())
        out.update((k, b) for k, b in self.named_buffers())
        return out

    def load_state_dict(self, state) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state dict is missing {sorted(missing)[:5]}")
        for k, v in state.items():
            if k in params:
                p = params[k]
                if p.data.shape != np.shape(v):
                    raise ValueError(f"{k}: shape {np.shape(v)} != {p.data.shape}")
                p.data = np.array(v, dtype=p.data.dtype)
            elif k in buffers:
                buffers[k][...] = v
            else:
                raise KeyError(f"unexpected key {k}")

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            for name in m._buffer_names:
                setattr(m, name, getattr(m, name).astype(dtype))
        return self

    @property
    def dtype(self):
        ps = self.parameters()
        return ps[0].dtype if ps else np.float32


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel_size, rng, stride=1, padding=0, bias=True):
        self.stride, self.padding = stride, padding
        self.weight = Parameter(he_normal(rng, (c_out, c_in, kernel_size), c_in * kernel_size))
        self.bias = Parameter(np.zeros(c_out)) if bias else None

    def forward(self, x):
        return F.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        self.weight = Parameter(he_normal(rng, (n_out, n_in), n_in))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class BatchNorm1d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        self.eps, self.momentum = eps, momentum
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        # same precision as the parameters, so a checkpoint round trip is exact
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)

    def forward(self, x):
        stats = F.RunningStats(self.running_mean, self.running_var, self.momentum)
        return F.batchnorm1d(x, self.gamma, self.beta, self.eps, self.training, stats)


class ReLU(Module):
    def forward(self, x):
        return F.relu(x)


class MaxPool1d(Module):
    def __init__(self, width, stride=None, padding=0):
        self.width, self.stride, self.padding = width, stride, padding

    def forward(self, x):
        return F.pool1d(x, "max", self.width, self.stride, self.padding)


class AvgPool1d(MaxPool1d):
    def forward(self, x):
        return F.pool1d(x, "average", self.width, self.stride, self.padding)


class GlobalAvgPool1d(Module):
    def forward(self, x):
        return F.pool1d(x, "global_average")


class Flatten(Module):
    def forward(self, x):
        return F.flatten(x)


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


def conv_bn_relu(c_in, c_out, k, rng, stride=1, relu=True):
    layers = [Conv1d(c_in, c_out, k, rng, stride=stride, padding=k // 2, bias=False), BatchNorm1d(c_out)]
    if relu:
        layers.append(ReLU())
    return Sequential(*layers)


def param_count(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))
