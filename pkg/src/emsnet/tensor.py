"""Dense float64 tensors with reverse-mode automatic differentiation.

Every array-valued quantity in the network lives in a :class:`Tensor`.
Operations on tensors that require gradients are recorded with a monotonic
sequence number; :meth:`Tensor.backward` replays them in reverse execution
order, visiting each recorded op exactly once.

Broadcasting in binary ops is deliberately narrow: an operand may only be
expanded along *leading* axes (missing axes or leading extents of 1), e.g.
``(E,)`` or ``(1, E)`` against ``(N, E)``. Trailing expansion such as
``(N, 1)`` against ``(N, E)`` is rejected.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError, DomainError, GradStateError, NonFiniteError, ShapeError

_sequence = itertools.count()
# grad mode is per thread so concurrent no_grad blocks cannot clobber each other
_local = threading.local()
_op_log: list | None = None


@dataclass(frozen=True)
class OpRecord:
    name: str
    input_shapes: tuple
    output_shape: tuple


@dataclass
class GradTape:
    """Ops visited by one backward pass, in visitation (reverse execution) order."""

    ops: list = field(default_factory=list)
    seqs: list = field(default_factory=list)

    def __len__(self):
        return len(self.ops)


def _grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording (inference mode)."""
    previous = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


@contextlib.contextmanager
def record_ops() -> Iterator[list]:
    """Collect an :class:`OpRecord` for every forward op executed in the block.

    Used as an operation-count probe, e.g. to see how many rows a softmax
    actually processes.
    """
    global _op_log
    previous = _op_log
    log: list = []
    _op_log = log
    try:
        yield log
    finally:
        _op_log = previous


class Tensor:
    """An n-dimensional float64 array that can take part in autodiff."""

    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._seq = -1
        self._consumed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- autodiff ---------------------------------------------------------
    def backward(self) -> GradTape:
        """Backpropagate from this scalar, filling ``.grad`` on every reachable leaf.

        Returns the tape of visited ops. Calling it a second time on the same
        loss raises :class:`GradStateError`; build a new forward graph instead.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise GradStateError("backward() already ran on this loss; rerun the forward pass first")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor with requires_grad=True")
        if self.is_leaf:
            self.grad = np.ones_like(self.data) if self.grad is None else self.grad + 1.0
            self._consumed = True
            return GradTape()

        nodes: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in nodes:
                continue
            nodes[id(node)] = node
            stack.extend(p for p in node._parents if p.requires_grad)
        order = sorted((n for n in nodes.values() if not n.is_leaf), key=lambda n: n._seq, reverse=True)

        pending = {id(self): np.ones_like(self.data)}
        tape = GradTape()
        for node in order:
            g = pending.pop(id(node), None)
            if g is None:
                continue
            tape.ops.append(node._op)
            tape.seqs.append(node._seq)
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.is_leaf:
                    parent.grad = np.array(pg) if parent.grad is None else parent.grad + pg
                elif id(parent) in pending:
                    pending[id(parent)] = pending[id(parent)] + pg
                else:
                    pending[id(parent)] = pg
        for node in order:
            node._parents = ()
            node._backward = None
            node._consumed = True
        self._consumed = True
        return tape

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported; multiply by a reciprocal")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced NaN or Inf")
    if _op_log is not None:
        _op_log.append(OpRecord(op, tuple(p.shape for p in parents), data.shape))
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._consumed = False
    out.requires_grad = _grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
        out._op = op
        out._seq = next(_sequence)
    else:
        out._parents = ()
        out._backward = None
        out._op = "leaf"
        out._seq = -1
    return out


# -- broadcasting -------------------------------------------------------------
def _core(shape: tuple) -> tuple:
    i = 0
    while i < len(shape) and shape[i] == 1:
        i += 1
    return shape[i:]


def _leading_broadcast(a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    try:
        out = np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"shapes {a} and {b} are not broadcast-compatible") from None
    for s in (a, b):
        core = _core(s)
        if core != out[len(out) - len(core):]:
            raise ShapeError(f"shapes {a} and {b} need non-leading broadcasting, which is not supported")
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise binary -------------------------------------------------------
def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return shift(a, float(b))
    a = as_tensor(a)
    _leading_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return shift(a, -float(b))
    a = as_tensor(a)
    _leading_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, float(b))
    a = as_tensor(a)
    _leading_broadcast(a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), backward, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def shift(x: Tensor, c: float) -> Tensor:
    return _make(x.data + c, (x,), lambda g: (g,), "shift")


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


# -- elementwise unary --------------------------------------------------------
def tabs(x: Tensor) -> Tensor:
    """Absolute value; the subgradient at exactly 0 is 0."""
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def log(x: Tensor) -> Tensor:
    d = x.data
    if np.any(d <= 0):
        raise DomainError(f"log of non-positive value (min {d.min()!r})")
    return _make(np.log(d), (x,), lambda g: (g / d,), "log")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient passes only where the input was inside."""
    d = x.data
    inside = (d >= lo) & (d <= hi)
    return _make(np.clip(d, lo, hi), (x,), lambda g: (g * inside,), "clip")


# -- reductions -------------------------------------------------------------
def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for {ndim}-d tensor")
        out.append(a % ndim)
    return tuple(sorted(out))


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axis(axis, x.ndim)
    shape = x.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))

    def backward(g):
        return (np.broadcast_to(np.reshape(g, kept), shape),)

    return _make(np.sum(x.data, axis=axes, keepdims=keepdims), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(tsum(x, axes, keepdims), 1.0 / count)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; every slice along ``axis`` sums to 1."""
    (ax,) = _normalize_axis(axis, x.ndim)
    z = x.data - np.max(x.data, axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=ax, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=ax, keepdims=True)),)

    return _make(y, (x,), backward, "softmax")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale slices along ``axis`` to unit L2 norm; zero slices stay zero."""
    (ax,) = _normalize_axis(axis, x.ndim)
    norm = np.sqrt(np.sum(x.data * x.data, axis=ax, keepdims=True))
    denom = np.maximum(norm, eps)
    y = x.data / denom
    active = norm > eps

    def backward(g):
        radial = np.where(active, np.sum(g * y, axis=ax, keepdims=True), 0.0)
        return ((g - y * radial) / denom,)

    return _make(y, (x,), backward, "l2_normalize")


# -- shape ops ----------------------------------------------------------------
def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} into {tuple(shape)}") from None
    return _make(y, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; with ``axes=None`` swap the last two."""
    if axes is None:
        if x.ndim < 2:
            raise ShapeError("transpose needs at least 2 dimensions")
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    (ax,) = _normalize_axis(axis, ndim)
    try:
        y = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError as exc:
        raise ShapeError(f"concat shape mismatch: {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make(y, tuple(tensors), backward, "concat")


def take(x: Tensor, index) -> Tensor:
    """Numpy-style indexing with a scatter-add gradient."""
    shape = x.shape
    y = np.array(x.data[index])

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(y, (x,), backward, "take")


# -- linear algebra -----------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, with leading-axis batching."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    lead = _leading_broadcast(a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    out = np.matmul(ad, bd)
    assert out.shape[:-2] == lead
    return _make(out, (a, b), backward, "matmul")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded 2-D cross-correlation.

    ``x`` is ``(N, C_in, H, W)`` or ``(C_in, H, W)``; ``kernel`` is
    ``(C_out, C_in, k, k)`` with odd ``k``; ``bias`` is ``(C_out,)``.
    Padding is zeros, so the output keeps the input's spatial size.
    """
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"kernel must be (C_out, C_in, k, k), got {kernel.shape}")
    k = kernel.shape[-1]
    if k % 2 == 0:
        raise ConfigError(f"conv2d kernel size must be odd, got {k}")
    if x.ndim == 3:
        return reshape(conv2d(reshape(x, (1,) + x.shape), kernel, bias), (kernel.shape[0],) + x.shape[1:])
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be 3-d or 4-d, got {x.shape}")
    n, c_in, h, w = x.shape
    c_out = kernel.shape[0]
    if kernel.shape[1] != c_in:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d bias must be ({c_out},), got {bias.shape}")

    p = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    # (N, C_in, H, W, k, k) -> rows of receptive fields
    cols = sliding_window_view(xp, (k, k), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c_in * k * k)
    wmat = kernel.data.reshape(c_out, c_in * k * k)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    y = out.reshape(n, h, w, c_out).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * h * w, c_out)
        gk = (g2.T @ cols).reshape(kernel.shape)
        dcols = (g2 @ wmat).reshape(n, h, w, c_in, k, k)
        dxp = np.zeros(xp.shape)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = dxp[:, :, p:p + h, p:p + w]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(np.ascontiguousarray(y), parents, backward, "conv2d")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as ``(out, in)``."""
    if x.ndim == 1:
        y = linear(reshape(x, (1, x.shape[0])), weight, bias)
        return reshape(y, (weight.shape[0],))
    y = matmul(x, transpose(weight))
    return y if bias is None else add(y, bias)
