"""Reverse-mode autodiff over numpy arrays.

Every backward rule is written in terms of :class:`Tensor` operations, so
running :func:`backward` with ``create_graph=True`` yields gradients that are
themselves attached to the graph and can be differentiated again.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

_default_dtype = np.float32
_grad_enabled = True
_check_finite = True


class NumericError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype of newly created tensors (e.g. float64 for gradchecks)."""
    global _default_dtype
    prev = _default_dtype
    _default_dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _default_dtype = prev


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = enabled
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """An n-dimensional array, optionally attached to a computation graph.

    ``op``, ``parents`` and ``backward_fn`` form the graph node. ``backward_fn``
    maps the upstream gradient to one gradient per parent (``None`` where a
    parent needs none).
    """

    __slots__ = ("data", "requires_grad", "op", "parents", "backward_fn", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(_default_dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.op: str = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None

    # -- construction -----------------------------------------------------
    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, parents: Sequence["Tensor"], backward_fn) -> "Tensor":
        if _check_finite and not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite value produced by op '{op}'")
        out = cls.__new__(cls)
        out.data = data
        out.op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.parents = tuple(parents)
            out.backward_fn = backward_fn
        else:
            out.requires_grad = False
            out.parents = ()
            out.backward_fn = None
        return out

    def _const(self, value) -> "Tensor":
        return Tensor(np.asarray(value, dtype=self.data.dtype))

    # -- properties -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.backward_fn is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def requires_grad_(self, flag: bool = True) -> "Tensor":
        self.requires_grad = flag
        return self

    def __repr__(self) -> str:
        g = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{g})"

    # -- operators --------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _default_dtype
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


# ---------------------------------------------------------------------------
# shape plumbing: broadcast_to and sum_to are mutually adjoint


def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``x`` down to a broadcast-compatible ``shape``."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1
    )
    data = x.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(data.shape[lead:])
    in_shape = x.shape
    return Tensor._from_op(data, "sum_to", (x,), lambda g: (broadcast_to(g, in_shape),))


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    in_shape = x.shape
    data = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    return Tensor._from_op(data, "broadcast_to", (x,), lambda g: (sum_to(g, in_shape),))


def _unbroadcast(g: Tensor | None, shape) -> Tensor | None:
    if g is None:
        return None
    return sum_to(g, shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._from_op(a.data + b.data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(neg(g), sb)

    return Tensor._from_op(a.data - b.data, "sub", (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, "neg", (a,), lambda g: (neg(g),))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        ga = _unbroadcast(mul(g, b), sa) if a.requires_grad else None
        gb = _unbroadcast(mul(g, a), sb) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, "mul", (a, b), bw)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._from_op(a.data * a.data.dtype.type(c), "scalar_mul", (a,), lambda g: (scalar_mul(g, c),))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        ga = _unbroadcast(div(g, b), sa) if a.requires_grad else None
        gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), sb) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data / b.data, "div", (a, b), bw)


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    if p == 1.0:
        return a

    def bw(g):
        return (mul(g, scalar_mul(power(a, p - 1.0), p)),)

    return Tensor._from_op(a.data ** a.data.dtype.type(p), "pow", (a,), bw)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    out: Tensor

    def bw(g):
        return (mul(g, out),)

    out = Tensor._from_op(out_data, "exp", (a,), bw)
    return out


def log(a: Tensor) -> Tensor:
    return Tensor._from_op(np.log(a.data), "log", (a,), lambda g: (div(g, a),))


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    out: Tensor

    def bw(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = Tensor._from_op(out_data.astype(a.dtype, copy=False), "sigmoid", (a,), bw)
    return out


def where_const(mask: np.ndarray, a: Tensor, scale_false: float) -> Tensor:
    """Multiply ``a`` by 1 where ``mask`` holds and by ``scale_false`` elsewhere.

    The factor is a constant, so the second derivative is zero.
    """
    factor = np.where(mask, 1.0, scale_false).astype(a.dtype)
    return mul(a, Tensor(factor))


# ---------------------------------------------------------------------------
# reductions and shape ops


def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, a.ndim)
    in_shape = a.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(in_shape))

    def bw(g):
        return (broadcast_to(reshape(g, kept), in_shape),)

    data = a.data.sum(axis=axes, keepdims=keepdims)
    return Tensor._from_op(np.asarray(data), "sum", (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return scalar_mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    in_shape = a.shape
    data = a.data.reshape(shape)
    return Tensor._from_op(data, "reshape", (a,), lambda g: (reshape(g, in_shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(np.ascontiguousarray(a.data.transpose(axes)), "transpose", (a,),
                           lambda g: (transpose(g, inv),))


def getitem(a: Tensor, idx) -> Tensor:
    in_shape = a.shape

    def bw(g):
        return (_scatter(g, idx, in_shape),)

    return Tensor._from_op(np.array(a.data[idx]), "getitem", (a,), bw)


def _scatter(g: Tensor, idx, shape) -> Tensor:
    """Adjoint of basic indexing: place ``g`` into zeros of ``shape``."""
    out = np.zeros(shape, dtype=g.dtype)
    out[idx] = g.data
    return Tensor._from_op(out, "scatter", (g,), lambda h: (getitem(h, idx),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(lo), int(hi))
            out.append(getitem(g, tuple(sl)))
        return tuple(out)

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), "concat", tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


def detach(a: Tensor) -> Tensor:
    return a.detach()


# ---------------------------------------------------------------------------
# backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt, create_graph: bool = False):
    """Gradients of scalar ``loss`` with respect to ``wrt``.

    ``wrt`` may be a single tensor, a sequence of tensors, or a mapping of
    name to tensor; the result mirrors its structure. Tensors the loss does
    not depend on get zero gradients. With ``create_graph`` the gradients are
    graph-attached (needed for second-order meta-gradients); otherwise they
    are plain constants.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if isinstance(wrt, Tensor):
        targets = [wrt]
    elif isinstance(wrt, Mapping):
        targets = list(wrt.values())
    else:
        targets = list(wrt)

    target_ids = {id(t) for t in targets}
    grads: dict[int, Tensor] = {}
    if loss.requires_grad:
        with _grad_mode(create_graph):
            grads[id(loss)] = Tensor(np.ones_like(loss.data))
            for node in reversed(_topo_order(loss)):
                g = grads.get(id(node))
                if g is None or node.backward_fn is None:
                    continue
                try:
                    parent_grads = node.backward_fn(g)
                except NumericError as exc:
                    raise NumericError(f"{exc} while differentiating op '{node.op}'") from exc
                for p, pg in zip(node.parents, parent_grads):
                    if pg is None or not p.requires_grad:
                        continue
                    prev = grads.get(id(p))
                    grads[id(p)] = pg if prev is None else add(prev, pg)
                if id(node) not in target_ids:
                    del grads[id(node)]

    result = []
    for t in targets:
        g = grads.get(id(t))
        if g is None:
            g = Tensor(np.zeros_like(t.data))
        elif not create_graph:
            g = g.detach()
        result.append(g)
    if isinstance(wrt, Tensor):
        return result[0]
    if isinstance(wrt, Mapping):
        ctor = type(wrt) if isinstance(wrt, dict) else dict
        return ctor(zip(wrt.keys(), result))
    return result


grad = backward


def ensure_finite(t: Tensor, what: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite value in {what}")
    return t


def zeros(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or _default_dtype))


def ones(shape, dtype=None) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype or _default_dtype))


def tensors_data(ts: Iterable[Tensor]) -> list[np.ndarray]:
    return [t.data for t in ts]
