"""Network definition: ResNet/shrink/dense encoder and the context head."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from ..dsu import DSU, DsuConfig
from ..nn import serialize
from ..nn.layers import (
    BatchNorm, BiGRU, Conv1d, Dense, Dropout, Flatten, LeakyReLU, MaxPool1d, Module, ReLU,
    Sequential,
)
from ..windowing import WINDOW_SAMPLES


@dataclass
class ModelSpec:
    n_res_blocks: int = 7
    n_shrink_blocks: int = 4
    n_dense_blocks: int = 3
    base_channels: int = 16
    kernel_size: int = 9
    dense_units: int = 1280
    dsu: DsuConfig = field(default_factory=DsuConfig)
    context_p: int = 3
    context_s: int = 3
    gru_hidden: int = 64
    dropout_rate: float = 0.2
    lrelu_slope: float = 0.01
    use_bigru: bool = True
    use_dsu: bool = True
    multi_lead_training: bool = True
    input_len: int = WINDOW_SAMPLES

    def __post_init__(self):
        if isinstance(self.dsu, dict):
            self.dsu = DsuConfig(**self.dsu)
        self.validate()

    def validate(self) -> None:
        for name in ("n_res_blocks", "n_dense_blocks", "base_channels", "kernel_size",
                     "dense_units", "gru_hidden", "input_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_shrink_blocks < 0 or self.context_p < 0 or self.context_s < 0:
            raise ValueError("n_shrink_blocks, context_p and context_s must be non-negative")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd for same padding")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.res_channels()[-1] >> self.n_shrink_blocks < 1:
            raise ValueError("shrink blocks would reduce channels below 1")
        if self.dense_units >> (self.n_dense_blocks - 1) < 1:
            raise ValueError("dense width halving would reach 0 units")

    @property
    def context_len(self) -> int:
        return self.context_p + 1 + self.context_s

    def res_channels(self) -> list[int]:
        # doubling at blocks 2, 4, 6, ...
        return [self.base_channels * 2 ** ((i + 1) // 2) for i in range(self.n_res_blocks)]

    def shrink_channels(self) -> list[int]:
        c = self.res_channels()[-1]
        return [c >> (i + 1) for i in range(self.n_shrink_blocks)]

    def dense_widths(self) -> list[int]:
        return [self.dense_units >> i for i in range(self.n_dense_blocks)]

    @property
    def embedding_dim(self) -> int:
        return self.dense_widths()[-1]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ModelSpec keys: {sorted(unknown)}")
        return cls(**d)


class ResBlock(Module):
    """conv-BN-ReLU-conv-BN plus a max-pooled shortcut, then ReLU.

    ``stride`` > 1 downsamples both paths; a 1x1 convolution adapts the
    shortcut when the channel count changes.
    """

    def __init__(self, in_ch, out_ch, kernel, stride, rng, dtype):
        super().__init__()
        pad = kernel // 2
        self.main = Sequential(
            Conv1d(in_ch, out_ch, kernel, stride, pad, rng=rng, dtype=dtype),
            BatchNorm(out_ch, dtype=dtype),
            ReLU(),
            Conv1d(out_ch, out_ch, kernel, 1, pad, rng=rng, dtype=dtype),
            BatchNorm(out_ch, dtype=dtype),
            names=["conv1", "bn1", "relu1", "conv2", "bn2"],
        )
        short, names = [], []
        if stride > 1:
            short.append(MaxPool1d(stride, stride))
            names.append("pool")
        if in_ch != out_ch:
            short.append(Conv1d(in_ch, out_ch, 1, bias=False, rng=rng, dtype=dtype))
            names.append("proj")
        self.shortcut = Sequential(*short, names=names)
        self.out = ReLU()

    def children(self):
        return [("main", self.main), ("shortcut", self.shortcut), ("out", self.out)]

    def forward(self, x):
        return self.out.forward(self.main.forward(x) + self.shortcut.forward(x))

    def backward(self, dy):
        d = self.out.backward(dy)
        return self.main.backward(d) + self.shortcut.backward(d)


def dense_block(n_in, n_out, spec: ModelSpec, rng, dtype) -> Sequential:
    return Sequential(
        Dense(n_in, n_out, rng=rng, dtype=dtype),
        BatchNorm(n_out, dtype=dtype),
        LeakyReLU(spec.lrelu_slope),
        Dropout(spec.dropout_rate, rng=rng),
        names=["dense", "bn", "lrelu", "dropout"],
    )


class Encoder(Module):
    """First-step network. ``forward`` returns step-1 logits (batch, 1).

    The embedding (last dense-block activation) of the most recent call is
    kept in ``self.embedding``.
    """

    def __init__(self, spec: ModelSpec, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = spec
        blocks, names = [], []
        in_ch, length = 1, spec.input_len
        for i, ch in enumerate(spec.res_channels()):
            blocks.append(ResBlock(in_ch, ch, spec.kernel_size, 2, rng, dtype))
            names.append(f"res{i + 1}")
            if spec.use_dsu:
                blocks.append(DSU(spec.dsu, rng=rng))
                names.append(f"dsu{i + 1}")
            in_ch, length = ch, -(-length // 2)
        for i, ch in enumerate(spec.shrink_channels()):
            blocks.append(ResBlock(in_ch, ch, spec.kernel_size, 1, rng, dtype))
            names.append(f"shrink{i + 1}")
            in_ch = ch
        blocks.append(BatchNorm(in_ch, dtype=dtype))
        names.append("bn")
        blocks.append(Flatten())
        names.append("flatten")
        self.features = Sequential(*blocks, names=names)
        self.flat_dim = in_ch * length
        widths = spec.dense_widths()
        dense, n_in = [], self.flat_dim
        for w in widths:
            dense.append(dense_block(n_in, w, spec, rng, dtype))
            n_in = w
        self.dense = Sequential(*dense, names=[f"dense{i + 1}" for i in range(len(dense))])
        self.classifier = Dense(n_in, 1, rng=rng, dtype=dtype, init="uniform")
        self.embedding: Optional[np.ndarray] = None

    def children(self):
        return [("features", self.features), ("dense", self.dense), ("classifier", self.classifier)]

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != self.spec.input_len:
            raise ValueError(f"encoder expects (batch, 1, {self.spec.input_len}), got {x.shape}")
        self.embedding = self.dense.forward(self.features.forward(x))
        return self.classifier.forward(self.embedding)

    def backward(self, dy):
        return self.features.backward(self.dense.backward(self.classifier.backward(dy)))


class CenterStep(Module):
    """Select one time step of (batch, time, feat)."""

    def __init__(self, index: int):
        super().__init__()
        self.index = index

    def forward(self, x):
        self._cache = x.shape
        return x[:, self.index]

    def backward(self, dy):
        dx = np.zeros(self._cache, dtype=dy.dtype)
        dx[:, self.index] = dy
        return dx


class ContextHead(Module):
    """Second-step network on (batch, p+1+s, embedding_dim) sequences.

    With ``use_bigru`` the sequence passes a BiGRU whose centre output feeds
    BN-LReLU-dropout-dense(1); otherwise the centre embedding feeds the same
    classifier directly. Returns logits (batch, 1).
    """

    def __init__(self, spec: ModelSpec, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = spec
        layers, names = [], []
        if spec.use_bigru:
            layers.append(BiGRU(spec.embedding_dim, spec.gru_hidden, rng=rng, dtype=dtype))
            names.append("bigru")
            width = 2 * spec.gru_hidden
        else:
            width = spec.embedding_dim
        layers.append(CenterStep(spec.context_p))
        names.append("center")
        layers += [BatchNorm(width, dtype=dtype), LeakyReLU(spec.lrelu_slope),
                   Dropout(spec.dropout_rate, rng=rng), Dense(width, 1, rng=rng, dtype=dtype, init="uniform")]
        names += ["bn", "lrelu", "dropout", "out"]
        self.net = Sequential(*layers, names=names)

    def children(self):
        return [("net", self.net)]

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.spec.context_len:
            raise ValueError(f"head expects (batch, {self.spec.context_len}, d), got {x.shape}")
        return self.net.forward(x)

    def backward(self, dy):
        return self.net.backward(dy)


class _Bundle(Module):
    def __init__(self, encoder, head):
        super().__init__()
        self.encoder, self.head = encoder, head

    def children(self):
        return [("encoder", self.encoder), ("head", self.head)]


def zscore(x, eps: float = 1e-6):
    """Per-window standardisation along the last axis."""
    x = np.asarray(x, dtype=np.float32)
    mu = x.mean(axis=-1, keepdims=True, dtype=np.float64)
    sd = x.std(axis=-1, keepdims=True, dtype=np.float64)
    return ((x - mu) / np.maximum(sd, eps)).astype(np.float32)


@dataclass
class RawECGNet:
    """Trained two-step model: encoder, context head and decision threshold."""

    spec: ModelSpec
    encoder: Encoder
    head: ContextHead
    threshold: Optional[float] = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, spec: ModelSpec, seed: int = 0) -> "RawECGNet":
        rng = np.random.default_rng(seed)
        return cls(spec, Encoder(spec, rng), ContextHead(spec, rng), None, {"seed": seed})

    def n_params(self) -> int:
        return self.encoder.n_params() + self.head.n_params()

    def count_modules(self, kind: type) -> int:
        return sum(isinstance(m, kind) for m in _Bundle(self.encoder, self.head).modules())

    # persistence
    def save(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        serialize.save(_Bundle(self.encoder, self.head), path / "params.bin")
        sidecar = {"spec": self.spec.to_dict(), "threshold": self.threshold, "meta": self.meta}
        (path / "model.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RawECGNet":
        path = Path(path)
        sidecar = json.loads((path / "model.json").read_text())
        spec = ModelSpec.from_dict(sidecar["spec"])
        model = cls.build(spec, sidecar["meta"].get("seed", 0))
        serialize.load(_Bundle(model.encoder, model.head), path / "params.bin")
        model.threshold = sidecar["threshold"]
        model.meta = sidecar["meta"]
        return model
