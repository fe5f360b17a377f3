"""Reverse-mode differentiable tensors over float64 numpy arrays.

A Tensor wraps an immutable ndarray plus an optional gradient buffer.  Ops
record a dynamic tape: each result keeps references to its parents and a
closure that maps the result's output gradient to per-parent gradients.
``backward`` walks the tape once in reverse topological order and adds (+=)
into ``.grad`` of every reachable tensor that requires gradients, so repeated
backward calls accumulate until ``grad`` is cleared.

Every op validates that its output is finite and raises NumericError
otherwise; NaN/Inf never escape silently.
"""

from __future__ import annotations

import threading
import warnings

import numpy as np

from ..errors import (
    ConfigurationWarning,
    ContractError,
    DimensionError,
    GraphError,
    NumericError,
)

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that suspends tape recording on this thread."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.grad_enabled = self._prev
        return False


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced a non-finite value")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes that numpy broadcasting introduced."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squash = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squash:
        grad = grad.sum(axis=squash, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        _check_finite(self.data, "tensor")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._grad_fn = None
        self._op = "leaf"

    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, parents, grad_fn) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._grad_fn = grad_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._grad_fn = None
        out._op = op
        return out

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _bad_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    # -- arithmetic -------------------------------------------------------

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def softplus(self) -> "Tensor":
        return softplus(self)

    def mean(self) -> "Tensor":
        return mean(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def sum_of_squares(self) -> "Tensor":
        return sum_of_squares(self)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, *shape)

    def slice_axis(self, axis: int, start: int, stop: int) -> "Tensor":
        return slice_axis(self, axis, start, stop)


def _bad_item(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# -- primitive ops ---------------------------------------------------------


def _broadcast_binary(op: str, a: Tensor, b: Tensor, fwd, grad_a, grad_b) -> Tensor:
    try:
        data = fwd(a.data, b.data)
    except ValueError:
        raise DimensionError(
            f"{op}: incompatible shapes {a.shape} and {b.shape}"
        ) from None

    def grad_fn(g):
        return (
            _unbroadcast(grad_a(g), a.shape),
            _unbroadcast(grad_b(g), b.shape),
        )

    return Tensor._from_op(data, op, (a, b), grad_fn)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _broadcast_binary("add", a, b, np.add, lambda g: g, lambda g: g)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _broadcast_binary("sub", a, b, np.subtract, lambda g: g, lambda g: -g)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _broadcast_binary(
        "mul", a, b, np.multiply, lambda g: g * b.data, lambda g: g * a.data
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(-a.data, "neg", (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(
            f"matmul: expected two rank-2 operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def grad_fn(g):
        return (g @ b.data.T, a.data.T @ g)

    return Tensor._from_op(data, "matmul", (a, b), grad_fn)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form is overflow-free for large |x|
    s = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return Tensor._from_op(s, "sigmoid", (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return Tensor._from_op(t, "tanh", (a,), lambda g: (g * (1.0 - t * t),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    data = np.logaddexp(0.0, a.data)
    s = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return Tensor._from_op(data, "softplus", (a,), lambda g: (g * s,))


def mean(a) -> Tensor:
    a = as_tensor(a)
    data = np.asarray(a.data.mean())
    n = a.data.size

    def grad_fn(g):
        return (np.full(a.shape, float(g) / n),)

    return Tensor._from_op(data, "mean", (a,), grad_fn)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def grad_fn(g):
        if axis is None:
            return (np.full(a.shape, float(g)),)
        g_arr = np.asarray(g)
        if not keepdims:
            g_arr = np.expand_dims(g_arr, axis)
        return (np.broadcast_to(g_arr, a.shape).copy(),)

    return Tensor._from_op(data, "sum", (a,), grad_fn)


def sum_of_squares(a) -> Tensor:
    a = as_tensor(a)
    data = np.asarray(np.sum(a.data * a.data))
    return Tensor._from_op(data, "sum_of_squares", (a,), lambda g: (2.0 * float(g) * a.data,))


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat: need at least one tensor")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        shapes = [t.shape for t in ts]
        raise DimensionError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(data, "concat", ts, grad_fn)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if not (0 <= start <= stop <= a.shape[axis]):
        raise DimensionError(
            f"slice_axis: [{start}:{stop}] out of range for axis {axis} of shape {a.shape}"
        )
    index = tuple(
        slice(start, stop) if d == axis else slice(None) for d in range(a.ndim)
    )
    data = a.data[index]

    def grad_fn(g):
        out = np.zeros(a.shape)
        out[index] = g
        return (out,)

    return Tensor._from_op(data, "slice_axis", (a,), grad_fn)


def reshape(a, *shape) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {shape}") from None

    def grad_fn(g):
        return (np.asarray(g).reshape(old),)

    return Tensor._from_op(data, "reshape", (a,), grad_fn)


def conv1d_circular(x, kernel, dilation: int = 1) -> Tensor:
    """Circular 1-D convolution over the last (spatial) axis.

    ``x`` is (channels_in, D) or (batch, channels_in, D); ``kernel`` is
    (channels_out, channels_in, k) with k in {1, 3}.  Output position d sums
    kernel taps over input positions (d + (j - center) * dilation) mod D, so
    the spatial size is always preserved.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 3:
        raise DimensionError(f"conv1d_circular: kernel must be rank 3, got {kernel.shape}")
    c_out, c_in, k = kernel.shape
    if k not in (1, 3):
        raise ContractError(f"conv1d_circular: unsupported kernel size {k} (must be 1 or 3)")
    if dilation < 1:
        raise ContractError(f"conv1d_circular: dilation must be >= 1, got {dilation}")
    if x.ndim not in (2, 3):
        raise DimensionError(f"conv1d_circular: input must be rank 2 or 3, got {x.shape}")
    if x.shape[-2] != c_in:
        raise DimensionError(
            f"conv1d_circular: input channels {x.shape[-2]} != kernel channels_in {c_in}"
        )
    d_spatial = x.shape[-1]
    if dilation * (k - 1) >= 2 * d_spatial:
        warnings.warn(
            f"conv1d_circular: dilation {dilation} with kernel {k} wraps the "
            f"full circular axis (D={d_spatial}); taps alias",
            ConfigurationWarning,
            stacklevel=2,
        )

    center = (k - 1) // 2
    shifts = [(j - center) * dilation for j in range(k)]
    # tap j as a cyclic shift: gathered[..., j, d] = x[..., (d + shifts[j]) mod D]
    gathered = np.stack([np.roll(x.data, -s, axis=-1) for s in shifts], axis=-2)
    flat_in = gathered.reshape(x.shape[:-2] + (c_in * k, d_spatial))
    w2 = kernel.data.reshape(c_out, c_in * k)
    data = np.matmul(w2, flat_in)

    batched = x.ndim == 3

    def grad_fn(g):
        g_flat = np.matmul(w2.T, g)
        g_taps = g_flat.reshape(x.shape[:-2] + (c_in, k, d_spatial))
        grad_x = np.zeros(x.shape)
        for j, s in enumerate(shifts):
            grad_x += np.roll(g_taps[..., j, :], s, axis=-1)
        spec = "bod,bcd->oc" if batched else "od,cd->oc"
        grad_w = np.einsum(spec, g, flat_in, optimize=True).reshape(kernel.shape)
        return (grad_x, grad_w)

    return Tensor._from_op(data, "conv1d_circular", (x, kernel), grad_fn)


# -- backward --------------------------------------------------------------


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(tensor) into ``.grad`` of every reachable tensor
    that requires gradients.  ``root`` must be a scalar on the active graph."""
    if not isinstance(root, Tensor):
        raise ContractError("backward: root must be a Tensor")
    if root.data.size != 1:
        raise ContractError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        raise GraphError("backward: root is not attached to an active graph")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._grad_fn is None:
            continue
        parent_grads = node._grad_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            prev = grads.get(pid)
            grads[pid] = pg if prev is None else prev + pg
