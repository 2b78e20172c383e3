"""
Dense tensors with tape-based reverse-mode differentiation.

Values are 64-bit numpy arrays. An operation is recorded on the tape that is
active in the current thread (``with Tape() as tape:``) whenever one of its
inputs requires gradients; outside a tape every operation is a plain value
computation, which is how inference runs.
"""

import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import NumericError, ShapeError, TapeError


_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_tape() -> "Tape | None":
    """Return the tape recording in this thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def as_tensor(value) -> Tensor:
    """Wrap plain numbers and arrays as constant tensors."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


@dataclass
class _Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered log of recorded operations for one backward pass.

    A tape belongs to the thread that entered it. After ``backward`` the tape
    is consumed; replaying it again raises ``TapeError``.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def record(self, output: Tensor, inputs: tuple[Tensor, ...],
               backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> None:
        if self._consumed:
            raise TapeError("cannot record on a tape that was already replayed")
        self._records.append(_Record(output, inputs, backward))

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Replay the tape in reverse and return gradients of every leaf."""
        if self._consumed:
            raise TapeError("tape was already replayed; record a new one")
        if loss.data.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")

        produced = {id(rec.output) for rec in self._records}
        if id(loss) not in produced:
            raise TapeError("loss was not recorded on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}

        for rec in reversed(self._records):
            grad_out = grads.pop(id(rec.output), None)
            if grad_out is None:
                continue
            input_grads = rec.backward(grad_out)
            for tensor, grad in zip(rec.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
                if key not in produced:
                    leaves[key] = tensor

        result = {tensor: grads[key] for key, tensor in leaves.items() if key in grads}
        self._records.clear()
        self._consumed = True
        return result


def backward(loss: Tensor, tape: Tape | None = None) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar loss with respect to every leaf that produced it."""
    tape = tape or active_tape()
    if tape is None:
        raise TapeError("no tape is recording; wrap the forward pass in `with Tape():`")
    return tape.backward(loss)


def _result(value: np.ndarray, inputs: tuple[Tensor, ...],
            grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    tape = active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=tracked)
    if tracked:
        tape.record(out, inputs, grad_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}") from exc


# Arithmetic

def matmul(a, b) -> Tensor:
    """Matrix product of an m×k and a k×n tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} × {b.shape}")

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), grad_fn)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), grad_fn)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _result(-x.data, (x,), lambda g: (-g,))


def cos(x) -> Tensor:
    x = as_tensor(x)
    return _result(np.cos(x.data), (x,), lambda g: (-np.sin(x.data) * g,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    return _result(np.maximum(x.data, 0.0), (x,), lambda g: ((x.data > 0) * g,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: ((1.0 - y * y) * g,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(y, (x,), lambda g: (y * (1.0 - y) * g,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: (y * g,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


_ELEMENTWISE: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "mul": mul,
    "cos": cos,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
}


def elementwise(op: str, *args) -> Tensor:
    """Apply one of add, mul, cos, relu, tanh, sigmoid by name."""
    fn = _ELEMENTWISE.get(op)
    if fn is None:
        raise ValueError(f"unknown elementwise op {op!r}")
    return fn(*args)


# Reductions and normalization

def sum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    value = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(value, (x,), grad_fn)


def mean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``."""
    x = as_tensor(x)
    if x.data.size == 0:
        raise ShapeError("softmax of an empty tensor")
    if np.isnan(x.data).any():
        raise NumericError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), grad_fn)


# Shape manipulation

def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {x.shape}")
    return _result(x.data.T, (x,), lambda g: (g.T,))


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    original = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    """Concatenate along ``axis``; every other dimension must agree."""
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat of an empty sequence")
    try:
        value = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concat shapes {[p.shape for p in parts]}") from exc
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(value, tuple(parts), grad_fn)


def index(x, key) -> Tensor:
    """Basic indexing (integers and slices)."""
    x = as_tensor(x)

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[key] += g
        return (full,)

    return _result(x.data[key], (x,), grad_fn)


def gather(table, rows) -> Tensor:
    """Select rows of a 2-D table; repeated rows accumulate gradient."""
    table = as_tensor(table)
    rows = np.asarray(rows, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"gather needs a 2-D table, got {table.shape}")

    def grad_fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, rows, g)
        return (full,)

    return _result(table.data[rows], (table,), grad_fn)


def segment_sum(x, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets given by ``segment_ids``."""
    x = as_tensor(x)
    ids = np.asarray(segment_ids, dtype=np.int64)
    if x.data.ndim != 2 or ids.shape != (x.shape[0],):
        raise ShapeError(f"segment_sum ids {ids.shape} do not match rows of {x.shape}")
    out = np.zeros((num_segments, x.shape[1]))
    np.add.at(out, ids, x.data)

    return _result(out, (x,), lambda g: (g[ids],))


# Recurrent cell

@dataclass
class LSTMWeights:
    """One LSTM layer: ``weight`` is (input + hidden) × 4·hidden, gates ordered i, f, g, o."""
    weight: Tensor
    bias: Tensor

    @property
    def hidden_size(self) -> int:
        return self.weight.shape[1] // 4

    @property
    def input_size(self) -> int:
        return self.weight.shape[0] - self.hidden_size


def lstm_cell(x, h_prev, c_prev, params: LSTMWeights) -> tuple[Tensor, Tensor]:
    """One step of the standard LSTM recurrence on 1×d row vectors."""
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    hidden = params.hidden_size
    if x.shape[-1] != params.input_size or h_prev.shape[-1] != hidden or c_prev.shape[-1] != hidden:
        raise ShapeError(
            f"lstm_cell expects input {params.input_size} and hidden {hidden}, "
            f"got x {x.shape}, h {h_prev.shape}, c {c_prev.shape}"
        )
    z = matmul(concat([x, h_prev], axis=1), params.weight) + params.bias
    i = sigmoid(z[:, 0:hidden])
    f = sigmoid(z[:, hidden:2 * hidden])
    g = tanh(z[:, 2 * hidden:3 * hidden])
    o = sigmoid(z[:, 3 * hidden:4 * hidden])
    c = f * c_prev + i * g
    h = o * tanh(c)
    return h, c


# Parameters

class ParameterSet:
    """Named parameter tensors with seeded uniform(−1/√fan_in, 1/√fan_in) init."""

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, shape: tuple[int, ...], fan_in: int | None = None) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        if any(dim <= 0 for dim in shape):
            raise ShapeError(f"parameter {name!r} has a non-positive dimension: {shape}")
        bound = 1.0 / math.sqrt(fan_in if fan_in is not None else shape[0])
        tensor = Tensor(self._rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def gradients(self, grad_map: dict[Tensor, np.ndarray]) -> dict[str, np.ndarray]:
        """Name every parameter's gradient; parameters that did not influence the loss get zeros."""
        out = {}
        for name, tensor in self._params.items():
            grad = grad_map.get(tensor)
            out[name] = np.zeros_like(tensor.data) if grad is None else grad
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        unexpected = set(state) - set(self._params)
        if missing or unexpected:
            raise KeyError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self._params[name].shape:
                raise ShapeError(f"{name}: expected {self._params[name].shape}, got {value.shape}")
            self._params[name].data = value.copy()
