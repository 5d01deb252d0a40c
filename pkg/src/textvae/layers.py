"""Model building blocks: LSTM cell, dilated-causal residual blocks, MLPs,
drop-word corruption, and the receptive-field calculator for conv stacks.

Layers are immutable parameter records plus pure functions of
(params, input, rng); nothing here holds state between calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, InputError, ParameterError
from .rng import derive_rng, name_key

INIT_SCALE = 0.05  # uniform(-0.05, 0.05) everywhere; forget-gate bias gets +1


def uniform_init(rng: np.random.Generator, shape, scale: float = INIT_SCALE) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape))


def zeros_init(shape) -> Tensor:
    return Tensor(np.zeros(shape))


class ParamSet:
    """Flat name -> Tensor registry; the unit of checkpointing and optimization."""

    def __init__(self, seed: int):
        self.seed = seed
        self.tensors: dict[str, Tensor] = {}

    def new(self, name: str, shape, init: str = "uniform") -> Tensor:
        if name in self.tensors:
            raise ConfigError(f"duplicate parameter name {name!r}")
        if init == "uniform":
            t = uniform_init(derive_rng(self.seed, name_key(name)), shape)
        elif init == "zeros":
            t = zeros_init(shape)
        else:
            raise ConfigError(f"unknown init {init!r}")
        self.tensors[name] = t
        return t

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def values(self):
        return self.tensors.values()

    def items(self):
        return self.tensors.items()

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]


# ---------------------------------------------------------------------------
# LSTM


@dataclass
class LstmParams:
    """Single-layer LSTM cell parameters, gate order [input, forget, cell, output]."""

    wx: Tensor  # [input_dim, 4*hidden]
    wh: Tensor  # [hidden, 4*hidden]
    b: Tensor  # [4*hidden]

    @property
    def hidden_dim(self) -> int:
        return self.wh.shape[0]

    @property
    def input_dim(self) -> int:
        return self.wx.shape[0]

    @classmethod
    def create(cls, params: ParamSet, prefix: str, input_dim: int, hidden_dim: int) -> "LstmParams":
        wx = params.new(f"{prefix}.wx", (input_dim, 4 * hidden_dim))
        wh = params.new(f"{prefix}.wh", (hidden_dim, 4 * hidden_dim))
        b = params.new(f"{prefix}.b", (4 * hidden_dim,), init="zeros")
        b.data[hidden_dim : 2 * hidden_dim] = 1.0  # open the forget gate at init
        return cls(wx=wx, wh=wh, b=b)


def lstm_step(p: LstmParams, x_t: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    """One gated update; returns (h', c')."""
    hd = p.hidden_dim
    gates = ad.matmul(x_t, p.wx) + ad.matmul(h, p.wh) + p.b
    i = ad.sigmoid(gates[:, 0:hd])
    f = ad.sigmoid(gates[:, hd : 2 * hd])
    g = ad.tanh(gates[:, 2 * hd : 3 * hd])
    o = ad.sigmoid(gates[:, 3 * hd : 4 * hd])
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


def lstm_encode(p: LstmParams, emb: Tensor, lengths: np.ndarray) -> Tensor:
    """Run the cell over [batch, T, d] and return h at each true last position.

    Steps at or past a sequence's length leave its state untouched, so padding
    content cannot influence the result.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    if emb.ndim != 3:
        raise DimensionError(f"expected [batch, T, d] embeddings, got {emb.shape}")
    batch, T, _ = emb.shape
    if lengths.shape != (batch,):
        raise DimensionError(f"lengths shape {lengths.shape} does not match batch {batch}")
    if (lengths <= 0).any():
        raise InputError("zero-length sequence in batch")
    if (lengths > T).any():
        raise InputError(f"length exceeds padded width {T}")
    h = Tensor(np.zeros((batch, p.hidden_dim)))
    c = Tensor(np.zeros((batch, p.hidden_dim)))
    for t in range(T):
        x_t = emb[:, t, :]
        h_new, c_new = lstm_step(p, x_t, h, c)
        live = Tensor((t < lengths).astype(np.float64)[:, None])
        dead = Tensor(1.0 - live.data)
        h = live * h_new + dead * h
        c = live * c_new + dead * c
    return h


def lstm_sequence(p: LstmParams, emb: Tensor, h0: Tensor | None = None, c0: Tensor | None = None) -> Tensor:
    """All hidden states [batch, T, hidden] from an optional initial state."""
    batch, T, _ = emb.shape
    h = h0 if h0 is not None else Tensor(np.zeros((batch, p.hidden_dim)))
    c = c0 if c0 is not None else Tensor(np.zeros((batch, p.hidden_dim)))
    outs = []
    for t in range(T):
        h, c = lstm_step(p, emb[:, t, :], h, c)
        outs.append(h.reshape(batch, 1, p.hidden_dim))
    return ad.concat(outs, axis=1)


# ---------------------------------------------------------------------------
# dilated-causal residual block


@dataclass
class ResidualBlockParams:
    """Bottleneck of three convolutions (1x1, 1xk dilated causal, 1x1)."""

    w1: Tensor  # [c_int, c_ext, 1]
    w2: Tensor  # [c_int, c_int, k]
    w3: Tensor  # [c_ext, c_int, 1]
    dilation: int

    @classmethod
    def create(
        cls, params: ParamSet, prefix: str, c_ext: int, c_int: int, k: int, dilation: int
    ) -> "ResidualBlockParams":
        return cls(
            w1=params.new(f"{prefix}.w1", (c_int, c_ext, 1)),
            w2=params.new(f"{prefix}.w2", (c_int, c_int, k)),
            w3=params.new(f"{prefix}.w3", (c_ext, c_int, 1)),
            dilation=dilation,
        )


def residual_block(p: ResidualBlockParams, x: Tensor) -> Tensor:
    """x + conv1x1(relu(conv1xk_dilated(relu(conv1x1(x))))); no activation after the add."""
    if x.shape[1] != p.w1.shape[1]:
        raise DimensionError(f"block expects {p.w1.shape[1]} channels, got {x.shape}")
    h = ad.conv1d_causal(x, p.w1, 1)
    h = ad.relu(h)
    h = ad.conv1d_causal(h, p.w2, p.dilation)
    h = ad.relu(h)
    h = ad.conv1d_causal(h, p.w3, 1)
    return x + h


# ---------------------------------------------------------------------------
# MLP


@dataclass
class MlpParams:
    layers: list[tuple[Tensor, Tensor]] = field(default_factory=list)

    @classmethod
    def create(cls, params: ParamSet, prefix: str, widths: list[int]) -> "MlpParams":
        layers = []
        for i, (din, dout) in enumerate(zip(widths[:-1], widths[1:])):
            w = params.new(f"{prefix}.{i}.w", (din, dout))
            b = params.new(f"{prefix}.{i}.b", (dout,), init="zeros")
            layers.append((w, b))
        return cls(layers=layers)


def mlp(p: MlpParams, x: Tensor) -> Tensor:
    """Affine stack with ReLU between layers (none after the last)."""
    out = x
    for i, (w, b) in enumerate(p.layers):
        out = ad.matmul(out, w) + b
        if i < len(p.layers) - 1:
            out = ad.relu(out)
    return out


# ---------------------------------------------------------------------------
# drop-word


def drop_word(tokens: np.ndarray, rate: float, rng: np.random.Generator, pad_id: int, unk_id: int) -> np.ndarray:
    """Replace each non-PAD token by UNK independently with probability `rate`."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"drop-word rate must be in [0, 1), got {rate}")
    tokens = np.asarray(tokens)
    if rate == 0.0:
        return tokens
    out = tokens.copy()
    hit = (out != pad_id) & (rng.random(out.shape) < rate)
    out[hit] = unk_id
    return out


# ---------------------------------------------------------------------------
# decoder architecture descriptions


NAMED_DILATIONS: dict[str, tuple[int, ...]] = {
    "SCNN": (1, 2, 4),
    "MCNN": (1, 2, 4, 8, 16),
    "LCNN": (1, 2, 4, 8, 16, 1, 2, 4, 8, 16),
    "VLCNN": (1, 2, 4, 8, 16, 1, 2, 4, 8, 16, 1, 2, 4, 8, 16),
}


def effective_receptive_field(k: int, dilations) -> int:
    """(k-1) * sum(dilations) + 1; the number of past tokens one output sees."""
    if k < 1:
        raise ParameterError(f"filter size must be >= 1, got {k}")
    dilations = tuple(dilations)
    if any(d < 1 for d in dilations):
        raise ParameterError(f"dilations must be positive, got {dilations}")
    return (k - 1) * sum(dilations) + 1


@dataclass(frozen=True)
class DecoderArch:
    """Shape of the autoregressive decoder: an LSTM or a dilated-conv stack."""

    kind: str  # "lstm" | "cnn"
    filter_size: int = 3
    dilations: tuple[int, ...] = (1, 2, 4)
    channels_ext: int = 64
    channels_int: int = 32
    lstm_hidden: int = 64
    name: str = "custom"

    def __post_init__(self):
        if self.kind not in ("lstm", "cnn"):
            raise ConfigError(f"decoder kind must be 'lstm' or 'cnn', got {self.kind!r}")
        if self.kind == "cnn":
            if self.filter_size < 1:
                raise ConfigError(f"filter size must be >= 1, got {self.filter_size}")
            if any(d < 1 for d in self.dilations):
                raise ConfigError(f"dilations must be positive, got {self.dilations}")
            if self.name in NAMED_DILATIONS:
                want = NAMED_DILATIONS[self.name]
                if tuple(self.dilations) != want or self.filter_size != 3:
                    raise ConfigError(
                        f"{self.name} requires filter size 3 and dilations {want}, "
                        f"got k={self.filter_size}, dilations={tuple(self.dilations)}"
                    )

    @classmethod
    def named(cls, name: str, channels_ext: int = 64, channels_int: int = 32) -> "DecoderArch":
        if name not in NAMED_DILATIONS:
            raise ConfigError(f"unknown architecture name {name!r}; options: {sorted(NAMED_DILATIONS)}")
        return cls(
            kind="cnn",
            filter_size=3,
            dilations=NAMED_DILATIONS[name],
            channels_ext=channels_ext,
            channels_int=channels_int,
            name=name,
        )

    @property
    def receptive_field(self) -> int:
        if self.kind != "cnn":
            raise ConfigError("receptive field is only defined for cnn decoders")
        return effective_receptive_field(self.filter_size, self.dilations)
