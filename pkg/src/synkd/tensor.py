"""Minimal reverse-mode autodiff over numpy arrays.

Every primitive op records (output, parents, backprop closure) on the
currently active Tape; creation order is a valid topological order, so
backward() just walks the tape in reverse accumulating vector-Jacobian
products. Ops run forward-only (no recording) when no tape is active,
which is the evaluation path.

float32 is the training default; building a graph from float64 tensors
keeps everything in float64, which is what the gradient checks use.
"""
from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

_ACTIVE_TAPE = None


class Tensor:
    """Dense n-d array plus optional gradient.

    `requires_grad` marks leaves (parameters) whose .grad gets populated by
    backward(). Tensors derived from tracked tensors are tracked internally
    but only requires_grad tensors keep a .grad.
    """

    __slots__ = ("data", "requires_grad", "grad", "_track")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._track = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive ops for one forward pass."""

    def __init__(self):
        self._entries = []  # (out, parents tuple, backfn(grad)->list of grads)
        self._outputs = set()

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a Tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self):
        return len(self._entries)

    def contains(self, t: Tensor) -> bool:
        """Whether `t` was produced on this tape (false for constants)."""
        return id(t) in self._outputs

    def _record(self, out: Tensor, parents, backfn):
        out._track = True
        self._entries.append((out, parents, backfn))
        self._outputs.add(id(out))

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(t) into t.grad for every requires_grad ancestor.

        Calling twice without zeroing grads accumulates.
        """
        if loss.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._outputs:
            raise ValueError("loss was not produced on this tape")
        adjoint = {id(loss): np.ones_like(loss.data)}
        holder = {id(loss): loss}
        for out, parents, backfn in reversed(self._entries):
            g = adjoint.pop(id(out), None)
            if g is None:
                continue
            if out.requires_grad:
                out.grad = g.copy() if out.grad is None else out.grad + g
            for p, pg in zip(parents, backfn(g)):
                if pg is None or not p._track:
                    continue
                k = id(p)
                if k in adjoint:
                    adjoint[k] = adjoint[k] + pg
                else:
                    adjoint[k] = pg
                    holder[k] = p
        for k, g in adjoint.items():
            t = holder[k]
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g


def active_tape():
    return _ACTIVE_TAPE


def _emit(out: Tensor, parents, backfn) -> Tensor:
    tape = _ACTIVE_TAPE
    if tape is not None and any(p._track for p in parents):
        tape._record(out, parents, backfn)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# shape plumbing

def _suffix_broadcastable(a: np.ndarray, b: np.ndarray) -> bool:
    # equal shapes, or the smaller shape is a suffix of the larger
    if a.shape == b.shape:
        return True
    small, big = (a, b) if a.ndim <= b.ndim else (b, a)
    return big.shape[big.ndim - small.ndim:] == small.shape


def _check_elementwise(op: str, a: Tensor, b: Tensor):
    if not _suffix_broadcastable(a.data, b.data):
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitive ops

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("add", a, b)
    out = Tensor(a.data + b.data)

    def back(g):
        return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]

    return _emit(out, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("sub", a, b)
    out = Tensor(a.data - b.data)

    def back(g):
        return [_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)]

    return _emit(out, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("mul", a, b)
    out = Tensor(a.data * b.data)

    def back(g):
        return [_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)]

    return _emit(out, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)

    def back(g):
        return [g * c]

    return _emit(out, (a,), back)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)

    def back(g):
        return [g @ b.data.T, a.data.T @ g]

    return _emit(out, (a, b), back)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape).copy())

    def back(g):
        return [g.reshape(a.shape)]

    return _emit(out, (a,), back)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose: expected 2-d tensor, got shape {a.shape}")
    out = Tensor(a.data.T.copy())

    def back(g):
        return [g.T]

    return _emit(out, (a,), back)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: empty input list")
    nd = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != nd:
            raise ValueError(
                f"concat: rank mismatch {tensors[0].shape} and {t.shape}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        return list(np.split(g, offsets, axis=axis))

    return _emit(out, tuple(tensors), back)


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y)

    def back(g):
        return [g * y * (1.0 - y)]

    return _emit(out, (a,), back)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)

    def back(g):
        return [g * (1.0 - y * y)]

    return _emit(out, (a,), back)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    pos = a.data > 0

    def back(g):
        return [g * pos]

    return _emit(out, (a,), back)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.shape[axis] == 0:
        raise ValueError(f"softmax over empty axis {axis} of shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def back(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return [y * (g - dot)]

    return _emit(out, (a,), back)


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))

    def back(g):
        return [g / a.data]

    return _emit(out, (a,), back)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is None:
            return [np.broadcast_to(g, a.shape).astype(a.dtype, copy=True)]
        gg = g if keepdims else np.expand_dims(g, axis)
        return [np.broadcast_to(gg, a.shape).astype(a.dtype, copy=True)]

    return _emit(out, (a,), back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is None:
            return [np.broadcast_to(g / count, a.shape).astype(a.dtype, copy=True)]
        gg = g if keepdims else np.expand_dims(g, axis)
        return [np.broadcast_to(gg / count, a.shape).astype(a.dtype, copy=True)]

    return _emit(out, (a,), back)


def dropout(a: Tensor, p: float, rng: np.random.Generator, train: bool = True) -> Tensor:
    """Inverted dropout: scales kept entries by 1/(1-p) so eval needs no rescale."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    mask = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)
    out = Tensor(a.data * mask)

    def back(g):
        return [g * mask]

    return _emit(out, (a,), back)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-d tensor; backward scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError(f"embedding ids must be 1-d, got shape {ids.shape}")
    if table.data.ndim != 2:
        raise ValueError(f"embedding table must be 2-d, got shape {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(
            f"embedding id out of range for table with {table.shape[0]} rows")
    out = Tensor(table.data[ids])

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return [gt]

    return _emit(out, (table,), back)


def take(a: Tensor, flat_ids) -> Tensor:
    """Gather scalar entries by flat (row-major) index; returns a 1-d tensor."""
    flat_ids = np.asarray(flat_ids, dtype=np.int64)
    if flat_ids.size and (flat_ids.min() < 0 or flat_ids.max() >= a.size):
        raise ValueError(f"take index out of range for size {a.size}")
    out = Tensor(a.data.reshape(-1)[flat_ids])

    def back(g):
        ga = np.zeros(a.size, dtype=a.dtype)
        np.add.at(ga, flat_ids, g)
        return [ga.reshape(a.shape)]

    return _emit(out, (a,), back)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[start:stop].copy())

    def back(g):
        ga = np.zeros_like(a.data)
        ga[start:stop] = g
        return [ga]

    return _emit(out, (a,), back)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"slice_cols expects a 2-d tensor, got shape {a.shape}")
    out = Tensor(a.data[:, start:stop].copy())

    def back(g):
        ga = np.zeros_like(a.data)
        ga[:, start:stop] = g
        return [ga]

    return _emit(out, (a,), back)


# ---------------------------------------------------------------------------
# parameter helpers

def zeros(shape, dtype=None, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or DEFAULT_DTYPE), requires_grad=requires_grad)


def xavier(shape, rng: np.random.Generator, dtype=None, gain: float = 1.0) -> Tensor:
    """Glorot-uniform initialized parameter tensor."""
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[1] if len(shape) > 1 else shape[0]
    limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-limit, limit, size=shape).astype(dtype or DEFAULT_DTYPE)
    return Tensor(data, requires_grad=True)


# ---------------------------------------------------------------------------
# Adam

def adam_step(params, grads, state: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> bool:
    """One Adam update in place.

    state holds first/second moment arrays ("m", "v"), the step count "t"
    and a "skipped" counter. Any non-finite gradient skips the whole step
    and bumps the counter. Returns True when the update was applied.
    """
    if "m" not in state:
        state["m"] = [np.zeros_like(p.data) for p in params]
        state["v"] = [np.zeros_like(p.data) for p in params]
        state["t"] = 0
        state["skipped"] = 0
    for p, m in zip(params, state["m"]):
        if m.shape != p.data.shape:
            raise ValueError(
                f"adam state shape {m.shape} does not match param shape {p.data.shape}")
    gs = []
    for p, g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p.data)
        if not np.isfinite(g).all():
            state["skipped"] += 1
            return False
        gs.append(g)
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, gs, state["m"], state["v"]):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return True


class Adam:
    """Adam optimizer over a fixed parameter list."""

    def __init__(self, params, lr: float = 1e-5,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {}

    @property
    def skipped(self) -> int:
        return self.state.get("skipped", 0)

    def step(self) -> bool:
        grads = [p.grad for p in self.params]
        return adam_step(self.params, grads, self.state, self.lr,
                         self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
