"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every kernel checks its output for NaN/Inf and raises ``NumericalError``.
Operations touching a tensor with ``requires_grad`` are recorded on the
active :class:`Tape`; ``backward`` replays that record in reverse order.
"""

from __future__ import annotations

import contextlib
import json
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import NumericalError, ShapeError, StateError

CHECKPOINT_VERSION = "igsd-params-v1"
NORM_FLOOR = 1e-12


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    __array_priority__ = 100

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    @property
    def T(self):
        return transpose(self)


class _Record:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered log of differentiable operations."""

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def reset(self):
        for rec in self.records:
            rec.out._node = None
        self.records.clear()


_TAPES: list[Tape] = []
_DEFAULT_TAPE = Tape()
_GRAD_ENABLED = [True]


def active_tape() -> Tape:
    return _TAPES[-1] if _TAPES else _DEFAULT_TAPE


@contextlib.contextmanager
def no_grad():
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite(values: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"{op} produced non-finite values")
    return values


def _make(values, inputs: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    if callable(values):
        with np.errstate(over="ignore", invalid="ignore"):
            values = values()
    out = Tensor.__new__(Tensor)
    out.data = _finite(values, op)
    out.grad = None
    out.name = None
    out._node = None
    track = _GRAD_ENABLED[-1] and any(t.requires_grad for t in inputs)
    out.requires_grad = track
    if track:
        tape = active_tape()
        out._node = (tape, len(tape.records))
        tape.records.append(_Record(out, tuple(inputs), vjp))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------------------
# kernels


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _make(lambda: a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _make(lambda: a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _make(lambda: a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting; ``b`` may be a plain scalar."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _make(lambda: a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericalError("log of a non-positive value")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("transpose expects a matrix")
    return _make(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(y, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def take_rows(x, index) -> Tensor:
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)

    def vjp(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(x.data[index], (x,), vjp, "take_rows")


def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),),
                 "sum")


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return _make(np.array(x.data.mean()), (x,),
                 lambda g: (np.broadcast_to(g / n, x.shape).copy(),), "mean")


def sum_rows(x) -> Tensor:
    """Add the rows of a matrix together: ``[n, d] -> [1, d]``."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("sum_rows expects a matrix")
    return _make(x.data.sum(axis=0, keepdims=True), (x,),
                 lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum_rows")


def l2_normalize_rows(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("l2_normalize_rows expects a matrix")
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    if np.any(norms < NORM_FLOOR):
        raise NumericalError("cannot normalize a row with (near-)zero norm")
    y = x.data / norms

    def vjp(g):
        return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / norms,)

    return _make(y, (x,), vjp, "l2_normalize_rows")


def softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    return _make(y, (x,), lambda g: (y * (g - np.sum(g * y, axis=1, keepdims=True)),),
                 "softmax_rows")


def log_softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return _make(y, (x,), lambda g: (g - p * g.sum(axis=1, keepdims=True),), "log_softmax_rows")


# ----------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        if loss.requires_grad:
            loss.grad = (loss.grad if loss.grad is not None else 0.0) + np.ones_like(loss.data)
        return
    tape, pos = loss._node
    if pos >= len(tape.records) or tape.records[pos].out is not loss:
        raise StateError("loss is not on an active tape")
    pending = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records[:pos + 1]):
        g = pending.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            elif id(inp) in pending:
                pending[id(inp)] = pending[id(inp)] + gi
            else:
                pending[id(inp)] = gi


# ----------------------------------------------------------------------------
# optimization


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p in self.params:
            if p.grad is None:
                raise StateError(f"parameter {p.name or p.shape} has no gradient")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = np.zeros_like(p.data)

    def state_arrays(self) -> dict:
        out = {"adam/t": np.array(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"adam/m/{i}"] = m
            out[f"adam/v/{i}"] = v
        return out


adam_step = Adam.step


# ----------------------------------------------------------------------------
# checkpoints


def save_arrays(path, arrays: dict, meta: Optional[dict] = None) -> Path:
    """Write ``name -> array`` to an ``.npz`` file with a version tag (bit-exact)."""
    path = Path(path)
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    header = {"version": CHECKPOINT_VERSION, "meta": meta or {}}
    payload["__header__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


def load_arrays(path) -> tuple[dict, dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    header = json.loads(arrays.pop("__header__").tobytes().decode())
    if header.get("version") != CHECKPOINT_VERSION:
        raise StateError(f"unsupported checkpoint version {header.get('version')!r}")
    return arrays, header.get("meta", {})
