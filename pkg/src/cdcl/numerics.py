"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation on :class:`Tensor` records a node holding its parents and a
closure that pushes the output gradient back to them.  ``backward`` walks the
recorded graph in reverse topological order.  Values are numpy arrays; the
graph itself is plain Python and single-threaded.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

FLOOR = 1e-12

_ids = itertools.count()
_grad_enabled = True


class GraphError(RuntimeError):
    """Raised for an invalid backward request."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure forward evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array plus the record needed to differentiate through it.

    Leaf tensors created with ``requires_grad=True`` are parameters; their
    ``grad`` slot accumulates across backward calls until :meth:`zero_grad`.
    """

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, *, _parents: tuple = (), _op: str = "leaf"):
        self.data = np.array(data, dtype=np.float64, order="C", copy=None)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.id = next(_ids)
        self.op = _op
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def recorded(self) -> bool:
        return bool(self._parents)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # -- operator sugar ----------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    if not _grad_enabled:
        return Tensor(data)
    out = Tensor(data, _parents=tuple(parents), _op=op)
    out._backward = backward
    return out


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", backward)


def div(a, b) -> Tensor:
    """Elementwise quotient; the divisor is floored at ``FLOOR`` in magnitude."""
    a, b = as_tensor(a), as_tensor(b)
    safe = np.where(np.abs(b.data) < FLOOR, np.where(b.data < 0, -FLOOR, FLOOR), b.data)
    out_data = a.data / safe

    def backward(g):
        a._accumulate(_unbroadcast(g / safe, a.shape))
        live = np.abs(b.data) >= FLOOR
        b._accumulate(_unbroadcast(np.where(live, -g * out_data / safe, 0.0), b.shape))

    return _make(out_data, (a, b), "div", backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1))

    return _make(a.data**exponent, (a,), "pow", backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return _make(a.data * mask, (a,), "relu", backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out_data**2))

    return _make(out_data, (a,), "tanh", backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), "sigmoid", backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), "exp", backward)


def log(a) -> Tensor:
    """Natural log of ``max(a, FLOOR)``; zero gradient where clamped."""
    a = as_tensor(a)
    live = a.data > FLOOR
    safe = np.where(live, a.data, FLOOR)

    def backward(g):
        a._accumulate(np.where(live, g / safe, 0.0))

    return _make(np.log(safe), (a,), "log", backward)


def sqrt(a) -> Tensor:
    """Square root of ``max(a, FLOOR)``; zero gradient where clamped."""
    a = as_tensor(a)
    live = a.data > FLOOR
    out_data = np.sqrt(np.where(live, a.data, FLOOR))

    def backward(g):
        a._accumulate(np.where(live, 0.5 * g / out_data, 0.0))

    return _make(out_data, (a,), "sqrt", backward)


def clamp_min(a, floor: float) -> Tensor:
    a = as_tensor(a)
    live = a.data > floor

    def backward(g):
        a._accumulate(g * live)

    return _make(np.where(live, a.data, floor), (a,), "clamp_min", backward)


# -- reductions and shape ---------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(out_data, (a,), "sum", backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def l2_norm(a, axis=-1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; gradient at the zero vector is zero."""
    a = as_tensor(a)
    norm = np.sqrt((a.data**2).sum(axis=axis, keepdims=True))
    safe = np.maximum(norm, FLOOR)
    out_data = norm if keepdims else np.squeeze(norm, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(g * a.data / safe)

    return _make(out_data, (a,), "l2_norm", backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), "reshape", backward)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out_data = np.transpose(a.data, axes)
    inverse = None if axes is None else tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(np.transpose(g, inverse))

    return _make(out_data, (a,), "transpose", backward)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in parts)

    def backward(g):
        full = np.zeros(a.shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        a._accumulate(full)

    return _make(a.data[index], (a,), "getitem", backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    bounds = [0]
    for t in tensors:
        bounds.append(bounds[-1] + t.shape[axis])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        for i, t in enumerate(tensors):
            t._accumulate(np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, "stack", backward)


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    """``a @ b`` for 2-D operands (rows of ``a`` times columns of ``b``)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = np.einsum("ij,jk->ik", a.data, b.data)

    def backward(g):
        a._accumulate(np.einsum("ik,jk->ij", g, b.data))
        b._accumulate(np.einsum("ij,ik->jk", a.data, g))

    return _make(out_data, (a, b), "matmul", backward)


def linear(x, weight, bias=None) -> Tensor:
    """Apply ``x @ weight.T + bias`` over the last axis of ``x``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight fan-in {weight.shape[1]}")
    out_data = np.einsum("...i,oi->...o", x.data, weight.data)

    def backward(g):
        x._accumulate(np.einsum("...o,oi->...i", g, weight.data))
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        weight._accumulate(np.einsum("bo,bi->oi", g2, x2))

    out = _make(out_data, (x, weight), "linear", backward)
    return out if bias is None else add(out, bias)


def conv1d_causal(x, kernel, dilation: int = 1, left_pad: bool = True) -> Tensor:
    """Dilated causal 1-D convolution.

    ``x`` is ``(channels_in, length)`` or batched ``(batch, channels_in, length)``;
    ``kernel`` is ``(channels_out, channels_in, k)``.  Output position ``t`` sees
    inputs ``t, t - dilation, ..., t - (k-1)*dilation``; tap ``k-1`` multiplies
    the current tick.  With ``left_pad`` the input is zero-padded on the left and
    the length is preserved, otherwise the output is shortened by
    ``(k-1)*dilation``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if kernel.ndim != 3 or kernel.shape[2] < 1:
        raise ValueError(f"kernel must be (out, in, k) with k >= 1, got {kernel.shape}")
    batched = x.ndim == 3
    xd = x.data if batched else x.data[None]
    if xd.ndim != 3 or xd.shape[1] != kernel.shape[1]:
        raise ValueError(f"conv1d_causal: input {x.shape} does not match kernel {kernel.shape}")
    k = kernel.shape[2]
    span = (k - 1) * dilation
    length = xd.shape[2]
    if left_pad:
        if span:
            xp = np.zeros((xd.shape[0], xd.shape[1], length + span))
            xp[:, :, span:] = xd
        else:
            xp = xd
        out_len = length
    else:
        if length < span + 1:
            raise ValueError(f"input length {length} too short for span {span + 1} without padding")
        xp = xd
        out_len = length - span
    w = kernel.data
    n_out, n_in = w.shape[0], w.shape[1]
    # im2col: cols[b, i*k + j, t] = xp[b, i, t + j*dilation]
    xp = np.ascontiguousarray(xp)
    sb, sc, st = xp.strides
    taps = np.lib.stride_tricks.as_strided(
        xp, (xp.shape[0], n_in, k, out_len), (sb, sc, st * dilation, st), writeable=False
    )
    cols = taps.reshape(xd.shape[0], n_in * k, out_len)
    w2 = w.reshape(n_out, n_in * k)
    out = np.matmul(w2, cols)

    def backward(g):
        gb = g if batched else g[None]
        kernel._accumulate(np.tensordot(gb, cols, axes=([0, 2], [0, 2])).reshape(w.shape))
        gcols = np.matmul(w2.T, gb).reshape(xd.shape[0], n_in, k, out_len)
        gxp = np.zeros_like(xp)
        for j in range(k):
            off = j * dilation
            gxp[:, :, off : off + out_len] += gcols[:, :, j, :]
        gx = gxp[:, :, span:] if left_pad else gxp
        x._accumulate(gx if batched else gx[0])

    return _make(out if batched else out[0], (x, kernel), "conv1d_causal", backward)


# -- backward pass ----------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack_.append((node, True))
        for p in node._parents:
            if p.id not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Returns a map from parameter id to its gradient.  Parameters listed in
    ``params`` but unreachable from ``loss`` get an all-zero gradient.  Interior
    gradients are freed afterwards; leaf gradients accumulate until reset.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {loss.shape}")
    if not loss.recorded and not loss.requires_grad:
        raise GraphError("backward on a detached node (no recorded graph)")
    order = _topological(loss)
    interior = [n for n in order if n.recorded]
    for n in interior:
        n.grad = None
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for n in interior:
        if n is not loss:
            n.grad = None
    leaves = [n for n in order if not n.recorded and n.requires_grad]
    if params is not None:
        leaves = list(params)
    out = {}
    for p in leaves:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        out[p.id] = p.grad
    return out


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``f`` re-evaluates the scalar loss from the current values of ``params``.
    The gap is ``||analytic - numeric|| / max(1e-8, ||numeric||)`` over the
    concatenation of all parameters.  A per-tensor ratio would divide roundoff
    by zero for tensors whose true gradient vanishes (e.g. biases feeding
    batch normalization).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("loss is not finite at the base point")
    backward(loss, params)
    diff_sq = numeric_sq = 0.0
    for p in params:
        analytic = p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with no_grad():
                up = f().item()
            flat[i] = orig - step
            with no_grad():
                down = f().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"non-finite loss while perturbing parameter {p.id}")
            nflat[i] = (up - down) / (2 * step)
        diff_sq += float(np.sum((analytic - numeric) ** 2))
        numeric_sq += float(np.sum(numeric**2))
    for p in params:
        p.zero_grad()
    return float(np.sqrt(diff_sq) / max(1e-8, np.sqrt(numeric_sq)))
