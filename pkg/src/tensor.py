# src/tensor.py
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

MAX_RANK: int = 4
DEFAULT_DTYPE = np.float32


class ShapeError(ValueError): pass


class NumericError(ArithmeticError): pass


class AutodiffError(RuntimeError): pass


Number = Union[int, float]
GradFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class _Node:
    """One recorded operation: its output, its inputs and the rule mapping the output grad to input grads."""
    __slots__ = ("op", "out", "inputs", "backward_fn")

    def __init__(self, op: str, out: "Tensor", inputs: Tuple["Tensor", ...], backward_fn: GradFn):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """
    Ordered record of the operations executed since the last backward pass.

    Nodes are appended at execution time, so the list is always in topological order:
    every node appears after the nodes that produced its inputs. The tape is rebuilt on
    every forward pass (define-by-run) and cleared by :func:`backward`.
    """

    def __init__(self):
        self.nodes: List[_Node] = []

    def record(self, node: _Node):
        self.nodes.append(node)

    def clear(self):
        """Drops every node and detaches the recorded outputs from the graph."""
        for node in self.nodes:
            if node.out is not None:
                node.out._node = None
            node.out = None
            node.inputs = ()
        self.nodes = []

    def __len__(self) -> int:
        return len(self.nodes)


_state = threading.local()


def get_tape() -> Tape:
    """Returns the tape of the calling thread (tensors are confined to one worker)."""
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = Tape()
        _state.tape = tape
    return tape


def reset_tape():
    """Discards a partially recorded graph, e.g. after a forward pass aborted with an error."""
    get_tape().clear()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Operations executed inside this block record nothing on the tape."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def _check_shape(shape: Tuple[int, ...]):
    if len(shape) > MAX_RANK:
        raise ShapeError(f"rank {len(shape)} exceeds the supported maximum of {MAX_RANK}: shape {shape}")
    if any(dim < 1 for dim in shape):
        raise ShapeError(f"every dimension must be >= 1, got shape {shape}")


def _check_finite(array: np.ndarray, where: str):
    if not np.all(np.isfinite(array)):
        raise NumericError(f"non-finite values produced by {where}")


class Tensor:
    """
    Dense row-major real array with an optional gradient.

    ``data`` is always a C-contiguous float ndarray. Leaf tensors created with
    ``requires_grad=True`` receive ``grad`` (same shape and dtype) from :func:`backward`.
    Training runs in float32, gradient checks in float64; operations keep the dtype of
    their tensor operands.
    """
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            is_float = isinstance(data, np.ndarray) and data.dtype.kind == "f"
            dtype = data.dtype if is_float else DEFAULT_DTYPE
        array = np.array(data, dtype=dtype, copy=True, order="C")
        _check_shape(array.shape)
        _check_finite(array, "tensor construction")
        self.data: np.ndarray = array
        self.requires_grad: bool = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[_Node] = None

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        array = np.asarray(array)
        # ascontiguousarray would promote 0-d results to shape (1,)
        out.data = array if array.flags.c_contiguous else np.ascontiguousarray(array)
        out.requires_grad = requires_grad
        out.grad = None
        out._node = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __len__(self) -> int:
        return self.shape[0] if self.ndim else 1

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)

    def sum(self, axis: Optional[int] = None) -> "Tensor": return reduce_sum(self, axis)
    def mean(self, axis: Optional[int] = None) -> "Tensor": return reduce_mean(self, axis)
    def relu(self) -> "Tensor": return relu(self)
    def tanh(self) -> "Tensor": return tanh(self)
    def sigmoid(self) -> "Tensor": return sigmoid(self)
    def exp(self) -> "Tensor": return exp(self)
    def log(self, min_value: Optional[float] = None) -> "Tensor": return log(self, min_value)
    def square(self) -> "Tensor": return square(self)
    def reshape(self, shape: Sequence[int]) -> "Tensor": return reshape(self, shape)


def as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    """Wraps numbers and arrays as constant tensors; tensors pass through unchanged."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value), dtype=dtype)


def _record(op: str, array: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: GradFn) -> Tensor:
    _check_finite(array, op)
    requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(np.asarray(array), requires_grad)
    if requires_grad:
        node = _Node(op, out, inputs, backward_fn)
        out._node = node
        get_tape().record(node)
    return out


# --------------------------------------------------------------
# elementwise binary ops (broadcast only over the leading batch axis)
# --------------------------------------------------------------

def _operands(a, b) -> Tuple[Tensor, Tensor]:
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    return as_tensor(a, like), as_tensor(b, like)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    """
    Same shapes, a scalar operand, or an operand whose shape equals the other's
    shape without its leading batch axis. Anything else is an error.
    """
    if a.shape == b.shape:
        return a.shape
    if a.ndim == 0:
        return b.shape
    if b.ndim == 0:
        return a.shape
    if a.ndim == b.ndim + 1 and a.shape[1:] == b.shape:
        return a.shape
    if b.ndim == a.ndim + 1 and b.shape[1:] == a.shape:
        return b.shape
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform "
                     f"(broadcasting only over the leading batch axis)")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    return grad.sum(axis=0)


def add(a, b) -> Tensor:
    a, b = _operands(a, b)
    _broadcast_shape("add", a, b)
    return _record("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _operands(a, b)
    _broadcast_shape("sub", a, b)
    return _record("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _operands(a, b)
    _broadcast_shape("mul", a, b)
    return _record("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _operands(a, b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise NumericError("div: division by zero")
    return _record("div", a.data / b.data, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _operands(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    return _record("matmul", a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g))


# --------------------------------------------------------------
# elementwise unary ops
# --------------------------------------------------------------

def neg(x: Tensor) -> Tensor:
    return _record("neg", -x.data, (x,), lambda g: (-g,))


def relu(x: Tensor) -> Tensor:
    return _record("relu", np.maximum(x.data, 0), (x,), lambda g: (g * (x.data > 0),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _record("tanh", t, (x,), lambda g: (g * (1 - t * t),))


def sigmoid(x: Tensor) -> Tensor:
    s = np.exp(-np.logaddexp(0, -x.data)).astype(x.dtype)
    return _record("sigmoid", s, (x,), lambda g: (g * s * (1 - s),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        e = np.exp(x.data)
    return _record("exp", e, (x,), lambda g: (g * e,))


def log(x: Tensor, min_value: Optional[float] = None) -> Tensor:
    """
    Natural logarithm.

    Non-positive input is an error unless the caller opts in with ``min_value``, in which
    case the input is clamped from below first (zero gradient where clamping applied).

    :param x: Input tensor.
    :type x: Tensor
    :param min_value: Optional lower clamp applied before the logarithm.
    :type min_value: Optional[float]
    :raises NumericError: If an input is non-positive and no clamp was requested.
    :rtype: Tensor
    """
    if min_value is None:
        if np.any(x.data <= 0):
            raise NumericError("log of non-positive input (pass min_value to clamp explicitly)")
        clamped, mask = x.data, None
    else:
        clamped = np.maximum(x.data, min_value).astype(x.dtype)
        mask = x.data >= min_value
    out = np.log(clamped)

    def backward_fn(g):
        grad = g / clamped
        return (grad if mask is None else grad * mask,)

    return _record("log", out, (x,), backward_fn)


def square(x: Tensor) -> Tensor:
    return _record("square", x.data * x.data, (x,), lambda g: (2 * x.data * g,))


def clamp(x: Tensor, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    """Clips values to ``[low, high]``; the gradient passes only where the input was inside."""
    out = x.data
    mask = np.ones(x.shape, dtype=bool)
    if low is not None:
        out = np.maximum(out, low)
        mask &= x.data >= low
    if high is not None:
        out = np.minimum(out, high)
        mask &= x.data <= high
    return _record("clamp", out.astype(x.dtype), (x,), lambda g: (g * mask,))


def clamp_min(x: Tensor, low: float) -> Tensor:
    return clamp(x, low=low)


# --------------------------------------------------------------
# reductions, gathers, reshapes
# --------------------------------------------------------------

def _check_axis(op: str, x: Tensor, axis: int):
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for shape {x.shape}")


def reduce_sum(x: Tensor, axis: Optional[int] = None) -> Tensor:
    if axis is None:
        return _record("sum", np.asarray(x.data.sum()), (x,),
                       lambda g: (np.broadcast_to(g, x.shape).copy(),))
    _check_axis("sum", x, axis)
    return _record("sum", x.data.sum(axis=axis), (x,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),))


def reduce_mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    return reduce_sum(x, axis) / float(count)


def reduce_min(x: Tensor, axis: int) -> Tensor:
    """Minimum over one axis; the gradient flows to the first minimal entry."""
    _check_axis("min", x, axis)
    index = np.expand_dims(np.argmin(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, index, axis=axis).squeeze(axis)

    def backward_fn(g):
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, index, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return _record("min", out, (x,), backward_fn)


def gather_rows(x: Tensor, index) -> Tensor:
    """Copies the rows ``x[index]``; repeated indices accumulate their gradients."""
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1 or index.size == 0:
        raise ShapeError(f"gather_rows: index must be a non-empty vector, got shape {index.shape}")
    if x.ndim == 0:
        raise ShapeError("gather_rows: cannot gather from a scalar")
    if index.min() < -x.shape[0] or index.max() >= x.shape[0]:
        raise IndexError(f"gather_rows: index out of range for {x.shape[0]} rows")

    def backward_fn(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, index, g)
        return (grad,)

    return _record("gather", x.data[index], (x,), backward_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"reshape: cannot view shape {x.shape} as {shape}")
    _check_shape(shape)
    return _record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def pairwise_sq_dist(x: Tensor, y: Tensor) -> Tensor:
    """
    Squared Euclidean distances between every row of ``x`` (n×d) and every row of ``y`` (m×d).

    Computed from explicit differences so that coincident rows give exactly zero.

    :rtype: Tensor
    """
    x, y = _operands(x, y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ShapeError(f"pairwise_sq_dist: shapes {x.shape} and {y.shape} do not conform")
    diff = x.data[:, None, :] - y.data[None, :, :]
    out = np.einsum("ijk,ijk->ij", diff, diff)

    def backward_fn(g):
        grad_x = 2 * (x.data * g.sum(axis=1)[:, None] - g @ y.data)
        grad_y = 2 * (y.data * g.sum(axis=0)[:, None] - g.T @ x.data)
        return grad_x, grad_y

    return _record("pairwise_sq_dist", out, (x, y), backward_fn)


def one_hot(labels, num_classes: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Constant n×num_classes indicator matrix for integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


# --------------------------------------------------------------
# reverse pass
# --------------------------------------------------------------

def backward(loss: Tensor):
    """
    Populates ``grad`` of every ``requires_grad`` leaf reachable from ``loss``.

    Gradients accumulate into existing leaf grads (optimizers zero them after a step).
    The tape is cleared afterwards, so a second call without a new forward pass fails.

    :param loss: The scalar loss tensor.
    :type loss: Tensor
    :raises AutodiffError: If the loss is not scalar or has no recorded graph.
    """
    if loss.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = get_tape()
    if loss._node is None or not tape.nodes:
        raise AutodiffError("no recorded graph for this loss (empty tape or backward already called)")
    grads = {id(loss): np.ones_like(loss.data)}
    try:
        for node in reversed(tape.nodes):
            grad = grads.pop(id(node.out), None)
            if grad is None:
                continue
            for inp, inp_grad in zip(node.inputs, node.backward_fn(grad)):
                if inp_grad is None or not inp.requires_grad:
                    continue
                inp_grad = np.asarray(inp_grad, dtype=inp.dtype).reshape(inp.shape)
                if inp._node is None:
                    _check_finite(inp_grad, f"backward of {node.op}")
                    inp.grad = inp_grad.copy() if inp.grad is None else inp.grad + inp_grad
                else:
                    key = id(inp)
                    grads[key] = inp_grad if key not in grads else grads[key] + inp_grad
    finally:
        tape.clear()
