"""Dense float64 tensors with a define-by-run reverse-mode gradient tape.

Everything is 64-bit on purpose: the models here are desk-scale and the whole
test strategy leans on central finite differences, which only behave with
double precision.  A `Tape` records result tensors in creation order (which is
a topological order for free); `Tape.backward` walks that list in reverse and
accumulates gradients into `.grad` of every tensor reachable from the loss,
leaf parameters included.  Tapes are rebuilt per forward pass and are confined
to one thread; independent tapes may run on separate threads.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, ParameterError

_STATE = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_STATE, "tape", None)


class Tensor:
    """A dense float64 array plus an optional position on the active tape."""

    __slots__ = ("data", "grad", "node", "_parents", "_backward")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.node: int | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # -- operator sugar; python scalars are promoted to constant leaves --

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return tslice(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Append-only record of one forward pass.

    Use as a context manager around the forward computation; ops executed
    while it is active register their results.  `backward(loss)` then fills
    in gradients.  Calling backward twice (for two losses on the same tape)
    accumulates, so the gradient of a sum equals the sum of the gradients.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = None
        return False

    def backward(self, loss: Tensor) -> None:
        if loss.node is None or loss.node >= len(self.nodes) or self.nodes[loss.node] is not loss:
            raise ValueError("loss tensor was not recorded on this tape")
        if loss.size != 1:
            raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
        # pending holds d(loss)/d(node) for nodes not yet visited; keyed by index
        pending: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
        for idx in range(loss.node, -1, -1):
            g = pending.pop(idx, None)
            if g is None:
                continue
            t = self.nodes[idx]
            t.grad = g if t.grad is None else t.grad + g
            if t._backward is None:
                continue
            for parent, contrib in zip(t._parents, t._backward(g)):
                if contrib is None:
                    continue
                pnode = parent.node
                if pnode is not None and pnode < len(self.nodes) and self.nodes[pnode] is parent:
                    prev = pending.get(pnode)
                    pending[pnode] = contrib if prev is None else prev + contrib
                else:
                    # leaf (parameter/input) or tensor from a dead tape
                    parent.grad = np.array(contrib) if parent.grad is None else parent.grad + contrib


def _record(out_data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None:
        out._parents = parents
        out._backward = backward
        out.node = len(tape.nodes)
        tape.nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g over the axes numpy broadcasting introduced for this operand."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data
    return _record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# nonlinearities


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _record(out, (x,), lambda g: (g * (1.0 - out * out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _record(np.log(x.data), (x,), lambda g: (g / x.data,))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor) with zero gradient wherever x < floor."""
    live = x.data > floor
    return _record(np.where(live, x.data, floor), (x,), lambda g: (g * live,))


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = np.argsort(axes)
    return _record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = np.broadcast_to(x.data, shape).copy()
    return _record(out, (x,), lambda g: (_unbroadcast(g, x.shape),))


def tslice(x: Tensor, idx) -> Tensor:
    """Basic indexing only (ints, slices, tuples thereof)."""

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[idx] = g
        return (dx,)

    return _record(x.data[idx], (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _record(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.shape).copy(),)

    return _record(out, (x,), backward)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, x.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, x.shape).copy(),)

    return _record(out, (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra and lookup


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes do not agree: {a.shape} x {b.shape}")
    out = a.data @ b.data
    return _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a [V, d] table; backward scatter-adds into the table."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = int(ids.max() if ids.max() >= table.shape[0] else ids.min())
        raise IndexError(f"token id {bad} outside vocabulary of size {table.shape[0]}")

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids, g)
        return (dt,)

    return _record(table.data[ids], (table,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: kept units scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    return _record(x.data * keep * scale, (x,), lambda g: (g * keep * scale,))


# ---------------------------------------------------------------------------
# dilated causal convolution


def conv1d_causal(x: Tensor, w: Tensor, dilation: int = 1) -> Tensor:
    """1-D convolution over [batch, channels, time] that never looks ahead.

    Output position t reads input positions {t - j*dilation : 0 <= j < k};
    taps reaching before the sequence start see zeros (left padding of
    (k-1)*dilation), which implements the causal shift.
    """
    if not isinstance(dilation, (int, np.integer)) or dilation < 1:
        raise ParameterError(f"dilation must be a positive integer, got {dilation!r}")
    if x.ndim != 3 or w.ndim != 3:
        raise DimensionError(f"conv1d_causal needs 3-d input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"channel mismatch: input {x.shape} vs kernel {w.shape}")
    batch, _, T = x.shape
    c_out, c_in, k = w.shape
    pad = (k - 1) * dilation
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, 0)))
    out = np.zeros((batch, c_out, T))
    # tap j sees the input delayed by (k-1-j)*dilation steps
    for j in range(k):
        out += np.einsum("bct,oc->bot", xp[:, :, j * dilation : j * dilation + T], w.data[:, :, j])

    def backward(g):
        dw = np.empty_like(w.data)
        dxp = np.zeros_like(xp)
        for j in range(k):
            lo = j * dilation
            dw[:, :, j] = np.einsum("bot,bct->oc", g, xp[:, :, lo : lo + T])
            dxp[:, :, lo : lo + T] += np.einsum("bot,oc->bct", g, w.data[:, :, j])
        dx = dxp[:, :, pad:] if pad else dxp
        return (dx, dw)

    return _record(out, (x, w), backward)


# ---------------------------------------------------------------------------
# softmax family


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record(out, (x,), backward)


def cross_entropy_rows(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """-log softmax(logits)[i, targets[i]] per row; masked rows contribute 0."""
    if logits.ndim != 2:
        raise DimensionError(f"logits must be [N, V], got {logits.shape}")
    n, v = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n,):
        raise DimensionError(f"targets must have shape ({n},), got {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        bad = int(targets.max() if targets.max() >= v else targets.min())
        raise IndexError(f"target id {bad} outside logits width {v}")
    m = mask.astype(np.float64) if mask is not None else np.ones(n)
    rows_idx = np.arange(n)
    mx = logits.data.max(axis=1)
    lse = mx + np.log(np.exp(logits.data - mx[:, None]).sum(axis=1))
    rows = (lse - logits.data[rows_idx, targets]) * m

    def backward(g):
        p = np.exp(logits.data - lse[:, None])
        gm = g * m
        d = p * gm[:, None]
        d[rows_idx, targets] -= gm
        return (d,)

    return _record(rows, (logits,), backward)


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Sum of -log p(target) over unmasked rows."""
    return cross_entropy_rows(logits, targets, mask).sum()


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(f, inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Worst relative error of tape gradients vs central finite differences.

    `f` must be a deterministic scalar function of `inputs` (fix any RNG state
    before calling).  Perturbs each coordinate of each input in place, so the
    inputs may be live model parameters; they are restored exactly.
    """
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        loss = f(*inputs)
    if loss.size != 1:
        raise DimensionError(f"grad_check needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite at the evaluation point")
    tape.backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    worst = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(*inputs).data)
            flat[i] = orig - h
            fm = float(f(*inputs).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite values under perturbation of coordinate {i}")
            num = (fp - fm) / (2.0 * h)
            err = abs(ana_flat[i] - num) / max(abs(ana_flat[i]), abs(num), 1.0)
            worst = max(worst, err)
    return worst
