"""Dense float64 arrays with define-by-run reverse-mode differentiation.

Values are computed eagerly in numpy. While a :class:`Tape` is active,
every operation that touches a gradient-requiring tensor records a
closure mapping the output gradient to input gradients. Recording order
is a valid topological order, so the backward pass is a single reverse
sweep over the tape.

Shapes must match exactly; the only implicit broadcast allowed is a
scalar (Python number or 0-d tensor) combined with a tensor. Use
:func:`tile_rows` to expand a bias vector explicitly.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_STATE = threading.local()


def _tape_stack() -> list:
    if not hasattr(_STATE, "stack"):
        _STATE.stack = []
    return _STATE.stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable operations (one training step)."""

    def __init__(self):
        self._entries = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self._entries)


class _Entry:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    """Immutable-shaped f64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_recorded", "_tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._recorded = False
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0


def _record(out: Tensor, inputs, backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t is not None and t.requires_grad for t in inputs):
        out.requires_grad = True
        out._recorded = True
        out._tape = tape
        tape._entries.append(_Entry(out, tuple(inputs), backward_fn))
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not match")


def _reduce_to(shape, g):
    # Undo scalar-with-tensor broadcast in the backward direction.
    if shape == ():
        return np.asarray(g.sum(), dtype=np.float64)
    return g


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_reduce_to(a.shape, g), _reduce_to(b.shape, g)))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_reduce_to(a.shape, g), _reduce_to(b.shape, -g)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)

    def backward(g):
        return _reduce_to(a.shape, g * b.data), _reduce_to(b.shape, g * a.data)

    return _record(out, (a, b), backward)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.data.shape} and {b.data.shape} do not match")
    out = Tensor(a.data @ b.data)

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d, got {a.data.shape}")
    out = Tensor(a.data.T.copy())
    return _record(out, (a,), lambda g: (g.T,))


def concat(parts, axis=0) -> Tensor:
    parts = [_wrap(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(parts))
        )

    return _record(out, tuple(parts), backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = Tensor(a.data[index].copy())

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _record(out, (a,), backward)


def take(a: Tensor, indices) -> Tensor:
    """Gather along axis 0; backward scatter-adds into the source."""
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(np.take(a.data, idx, axis=0))

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _record(out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape).copy())
    return _record(out, (a,), lambda g: (g.reshape(a.data.shape),))


def tile_rows(v: Tensor, n: int) -> Tensor:
    """Expand a (d,) vector to (n, d); backward sums over rows."""
    if v.data.ndim != 1:
        raise ShapeError(f"tile_rows: expected 1-d, got {v.data.shape}")
    out = Tensor(np.tile(v.data, (n, 1)))
    return _record(out, (v,), lambda g: (g.sum(axis=0),))


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis))

    def backward(g):
        if axis is None:
            return (np.full_like(a.data, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    return _record(out, (a,), backward)


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return scalar_mul(reduce_sum(a, axis), 1.0 / count)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0
    return _record(out, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    y = sigmoid_values(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def sigmoid_values(x):
    """Numerically stable elementwise logistic on raw arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def softplus(a: Tensor) -> Tensor:
    out = Tensor(np.logaddexp(0.0, a.data))
    s = sigmoid_values(a.data)
    return _record(out, (a,), lambda g: (g * s,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    out = Tensor(np.clip(a.data, lo, hi))
    mask = (a.data >= lo) & (a.data <= hi)
    return _record(out, (a,), lambda g: (g * mask,))


def softmax(a: Tensor, axis=-1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), backward)


def layer_norm(a: Tensor, axis=-1, eps=1e-5) -> Tensor:
    mu = a.data.mean(axis=axis, keepdims=True)
    var = a.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv
    out = Tensor(y)
    n = a.data.shape[axis]

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gym = (g * y).mean(axis=axis, keepdims=True)
        return ((g - gm - y * gym) * inv,)

    return _record(out, (a,), backward)


def backward(loss: Tensor):
    """Accumulate dLoss/dX into ``grad`` of every reachable leaf tensor."""
    if loss.data.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    pending: dict[int, np.ndarray] = {}

    def feed(t: Tensor, g: np.ndarray):
        if t._recorded:
            key = id(t)
            if key in pending:
                pending[key] = pending[key] + g
            else:
                pending[key] = np.asarray(g, dtype=np.float64)
        elif t.requires_grad:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad = t.grad + g

    feed(loss, np.ones(()))
    if not loss._recorded:
        return
    tape = loss._tape
    for entry in reversed(tape._entries):
        g_out = pending.pop(id(entry.out), None)
        if g_out is None:
            continue
        grads = entry.backward_fn(g_out)
        for t, g in zip(entry.inputs, grads):
            if t is None or g is None or not t.requires_grad:
                continue
            feed(t, g)


class ParamStore:
    """Named parameter tensors with persistent grad and moment buffers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.moment1: dict[str, np.ndarray] = {}
        self.moment2: dict[str, np.ndarray] = {}
        self.step = 0

    def create(self, name: str, values) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        self.moment1[name] = np.zeros_like(t.data)
        self.moment2[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def total_parameters(self) -> int:
        return sum(t.data.size for t in self._params.values())


def save_checkpoint(store: ParamStore, base_path) -> None:
    """Write ``<base>.json`` manifest and ``<base>.bin`` little-endian f64 blobs."""
    base = Path(base_path)
    manifest = {
        "format": "pavsgg-params-v1",
        "optimizer_step": store.step,
        "params": [{"name": n, "shape": list(t.data.shape)} for n, t in store.items()],
    }
    base.with_suffix(".json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    with open(base.with_suffix(".bin"), "wb") as fh:
        for _, t in store.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(base_path) -> ParamStore:
    base = Path(base_path)
    manifest = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    if manifest.get("format") != "pavsgg-params-v1":
        raise ValueError(f"unrecognized checkpoint format in {base.with_suffix('.json')}")
    store = ParamStore()
    store.step = int(manifest["optimizer_step"])
    raw = base.with_suffix(".bin").read_bytes()
    offset = 0
    for entry in manifest["params"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        store.create(entry["name"], values.astype(np.float64))
        offset += count * 8
    if offset != len(raw):
        raise ValueError(f"checkpoint blob size mismatch: used {offset} of {len(raw)} bytes")
    return store


def finite_diff_check(f, params, h=1e-4) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    ``f(params)`` must be a pure scalar function of the parameter values.
    Relative error per coordinate is |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    """
    for p in params:
        p.grad = np.zeros_like(p.data)
    with Tape():
        loss = f(params)
        backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(params).data)
            flat[i] = orig - h
            fm = float(f(params).data)
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            err = abs(gflat[i] - fd) / max(1e-8, abs(gflat[i]) + abs(fd))
            worst = max(worst, err)
    return worst
