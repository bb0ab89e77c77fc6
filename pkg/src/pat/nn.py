"""Trainable building blocks on top of the tensor engine.

Modules register parameters and submodules through attribute assignment,
so `named_parameters()` walks the whole model with stable dotted names —
the checkpoint format keys off those names. Construction order and the
rng passed in fully determine the initial weights.
"""

import numpy as np

from .quantize import Codebook
from .tensor import Tensor, conv2d, layer_norm, matmul, softmax, transposed_conv2d

__all__ = [
    "Module",
    "ModuleList",
    "Linear",
    "Mlp",
    "LayerNorm",
    "TransformerBlock",
    "Conv",
    "ConvTranspose",
    "sinusoidal_positions_2d",
]


def parameter(rng, *shape, scale=None):
    """A trainable tensor with normal init; default scale is 1/sqrt(fan_in)."""
    if scale is None:
        fan_in = shape[0] if len(shape) == 1 else int(np.prod(shape[:-1]))
        scale = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


class Module:
    """Base class tracking parameters, submodules and codebooks by attribute."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_codebooks", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, (Module, ModuleList)):
            self._modules[name] = value
        elif isinstance(value, Codebook):
            self._codebooks[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, cb in self._codebooks.items():
            yield f"{prefix}{name}.tokens", cb.tokens
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def codebooks(self):
        found = list(self._codebooks.values())
        for m in self._modules.values():
            found.extend(m.codebooks())
        return found

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class ModuleList:
    def __init__(self, modules=()):
        self.items = list(modules)

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def append(self, m):
        self.items.append(m)

    def named_parameters(self, prefix=""):
        for i, m in enumerate(self.items):
            yield from m.named_parameters(prefix=f"{prefix}{i}.")

    def codebooks(self):
        found = []
        for m in self.items:
            found.extend(m.codebooks())
        return found


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        super().__init__()
        self.w = parameter(rng, d_in, d_out)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x):
        y = matmul(x, self.w)
        return y + self.b if self.b is not None else y


class Mlp(Module):
    """Stack of linear layers with GELU between them (not after the last)."""

    def __init__(self, dims, rng):
        super().__init__()
        self.layers = ModuleList([Linear(a, b, rng) for a, b in zip(dims, dims[1:])])

    def __call__(self, x):
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i != last:
                x = x.gelu()
        return x


class LayerNorm(Module):
    def __init__(self, dim):
        super().__init__()
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta)


class TransformerBlock(Module):
    """Pre-LN single-head self-attention followed by a GELU MLP."""

    def __init__(self, dim, rng, mlp_ratio=4):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp([dim, dim * mlp_ratio, dim], rng)
        self.scale = 1.0 / np.sqrt(dim)

    def __call__(self, x):
        h = self.norm1(x)
        att = softmax(matmul(self.wq(h), self.wk(h).T) * self.scale, axis=-1)
        x = x + self.wo(matmul(att, self.wv(h)))
        return x + self.mlp(self.norm2(x))


class Conv(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, bias=True, zero_init=False):
        super().__init__()
        if zero_init:
            w = np.zeros((c_out, c_in, k, k))
        else:
            w = rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(2.0 / (c_in * k * k))
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(c_out), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return conv2d(x, self.w, bias=self.b, stride=self.stride, padding=self.padding)


class ConvTranspose(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, bias=True):
        super().__init__()
        w = rng.standard_normal((c_in, c_out, k, k)) * np.sqrt(2.0 / (c_in * k * k))
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(c_out), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return transposed_conv2d(x, self.w, bias=self.b, stride=self.stride,
                                 padding=self.padding)


_posenc_cache = {}


def sinusoidal_positions_2d(h, w, dim):
    """Fixed 2-D sine/cosine position table, shape [h*w, dim].

    Half the channels encode the row coordinate, half the column, at
    geometrically spaced frequencies.
    """
    key = (h, w, dim)
    hit = _posenc_cache.get(key)
    if hit is not None:
        return hit
    half = dim // 2
    quarter = max(half // 2, 1)
    freqs = np.exp(-np.log(10000.0) * np.arange(quarter) / quarter)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    table = np.zeros((h * w, dim))
    ya = ys.reshape(-1, 1) * freqs
    xa = xs.reshape(-1, 1) * freqs
    table[:, 0:quarter] = np.sin(ya)
    table[:, quarter:2 * quarter] = np.cos(ya)
    table[:, half:half + quarter] = np.sin(xa)
    table[:, half + quarter:half + 2 * quarter] = np.cos(xa)
    out = Tensor(table)
    _posenc_cache[key] = out
    return out
