"""Stateful layer objects wrapping :mod:`afnet.nn.functional`.

Every layer caches what its backward pass needs during ``forward`` and
writes parameter gradients into ``self.grads`` during ``backward``. A layer
is used at most once per forward pass.
"""
from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import functional as F


class Module:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True
        self._cache = None

    # graph structure
    def children(self) -> list[tuple[str, "Module"]]:
        return []

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self.children():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def modules(self) -> list["Module"]:
        return [m for _, m in self.named_modules()]

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, m in self.named_modules():
            for k, v in m.params.items():
                out[f"{prefix}.{k}" if prefix else k] = v
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, m in self.named_modules():
            for k, v in m.buffers.items():
                out[f"{prefix}.{k}" if prefix else k] = v
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, m in self.named_modules():
            for k in m.params:
                out[f"{prefix}.{k}" if prefix else k] = m.grads[k]
        return out

    def n_params(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    # modes
    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def set_rng(self, rng) -> None:
        for m in self.modules():
            if hasattr(m, "rng"):
                m.rng = rng

    def zero_grad(self) -> None:
        for m in self.modules():
            for k, v in m.params.items():
                m.grads[k] = np.zeros_like(v)

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _init_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class Sequential(Module):
    def __init__(self, *layers: Module, names: Optional[list[str]] = None):
        super().__init__()
        self.layers = list(layers)
        self.names = names or [str(i) for i in range(len(layers))]

    def children(self):
        return list(zip(self.names, self.layers))

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


def _he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv1d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, bias=True, rng=None,
                 dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.padding = stride, padding
        self.params["weight"] = _he_normal(rng, (out_ch, in_ch, kernel), in_ch * kernel, dtype)
        if bias:
            self.params["bias"] = np.zeros(out_ch, dtype=dtype)
        self._init_grads()

    def forward(self, x):
        y, self._cache = F.conv1d(x, self.params["weight"], self.params.get("bias"),
                                  self.stride, self.padding)
        return y

    def backward(self, dy):
        dx, dw, db = F.conv1d_backward(dy, self._cache)
        self.grads["weight"] = dw
        if db is not None:
            self.grads["bias"] = db
        return dx


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self._init_grads()

    def forward(self, x):
        y, self._cache = F.batchnorm(x, self.params["gamma"], self.params["beta"],
                                     self.buffers["running_mean"], self.buffers["running_var"],
                                     self.training, self.momentum, self.eps)
        return y

    def backward(self, dy):
        dx, self.grads["gamma"], self.grads["beta"] = F.batchnorm_backward(dy, self._cache)
        return dx


class ReLU(Module):
    def forward(self, x):
        y, self._cache = F.relu(x)
        return y

    def backward(self, dy):
        return F.relu_backward(dy, self._cache)


class LeakyReLU(Module):
    def __init__(self, slope=0.01):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        y, self._cache = F.lrelu(x, self.slope)
        return y

    def backward(self, dy):
        return F.lrelu_backward(dy, self._cache)


class Sigmoid(Module):
    def forward(self, x):
        y, self._cache = F.sigmoid(x)
        return y

    def backward(self, dy):
        return F.sigmoid_backward(dy, self._cache)


class Tanh(Module):
    def forward(self, x):
        y, self._cache = F.tanh(x)
        return y

    def backward(self, dy):
        return F.tanh_backward(dy, self._cache)


class MaxPool1d(Module):
    def __init__(self, kernel, stride=None, ceil_mode=True):
        super().__init__()
        self.kernel, self.stride, self.ceil_mode = kernel, stride or kernel, ceil_mode

    def forward(self, x):
        y, self._cache = F.maxpool1d(x, self.kernel, self.stride, self.ceil_mode)
        return y

    def backward(self, dy):
        return F.maxpool1d_backward(dy, self._cache)


class Dense(Module):
    def __init__(self, n_in, n_out, rng=None, dtype=np.float32, init="he"):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if init == "he":
            w = _he_normal(rng, (n_out, n_in), n_in, dtype)
        else:
            bound = 1.0 / np.sqrt(n_in)
            w = rng.uniform(-bound, bound, (n_out, n_in)).astype(dtype)
        self.params["weight"] = w
        self.params["bias"] = np.zeros(n_out, dtype=dtype)
        self._init_grads()

    def forward(self, x):
        y, self._cache = F.dense(x, self.params["weight"], self.params["bias"])
        return y

    def backward(self, dy):
        dx, self.grads["weight"], self.grads["bias"] = F.dense_backward(dy, self._cache)
        return dx


class Dropout(Module):
    def __init__(self, rate, rng=None):
        super().__init__()
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x):
        y, self._cache = F.dropout(x, self.rate, self.training, self.rng)
        return y

    def backward(self, dy):
        return F.dropout_backward(dy, self._cache)


class Flatten(Module):
    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._cache)


class BiGRU(Module):
    """Bidirectional GRU; see :func:`afnet.nn.functional.gru` for gate order."""

    PARAM_NAMES = ("w_ih", "w_hh", "b_ih", "b_hh")

    def __init__(self, n_in, hidden, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(hidden)
        self.hidden = hidden
        for d in ("fwd", "bwd"):
            shapes = ((3 * hidden, n_in), (3 * hidden, hidden), (3 * hidden,), (3 * hidden,))
            for name, shape in zip(self.PARAM_NAMES, shapes):
                self.params[f"{d}_{name}"] = rng.uniform(-bound, bound, shape).astype(dtype)
        self._init_grads()

    def _direction(self, d):
        return tuple(self.params[f"{d}_{n}"] for n in self.PARAM_NAMES)

    def forward(self, x):
        y, self._cache = F.bigru(x, self._direction("fwd"), self._direction("bwd"))
        return y

    def backward(self, dy):
        dx, gf, gb = F.bigru_backward(dy, self._cache)
        for d, grads in (("fwd", gf), ("bwd", gb)):
            for n, g in zip(self.PARAM_NAMES, grads):
                self.grads[f"{d}_{n}"] = g
        return dx
