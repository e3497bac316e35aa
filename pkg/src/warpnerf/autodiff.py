"""Dense-tensor core with reverse-mode automatic differentiation.

Wraps numpy arrays in :class:`Tensor` and records an op graph whenever grad
tracking is on and an input requires grad. ``backward`` walks the graph in
reverse topological order, accumulates gradients into the leaves' ``.grad``,
and frees the tape as it goes: one tape per step, a second backward through
the same graph raises. Gradients of fan-out nodes sum over all consumers.

Shapes and broadcasting follow numpy. Floating dtypes only; an op's output
dtype is whatever numpy promotes its inputs to, so a float32 graph stays
float32 unless a float64 constant sneaks in.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "no_grad",
    "grad_enabled",
    "concat",
    "stack",
    "gather_rows",
    "scatter_rows",
    "segment_sum",
    "segment_cumsum_exclusive",
    "exp",
    "log",
    "sin",
    "cos",
    "relu",
    "sigmoid",
    "absolute",
    "clip",
    "matmul",
]

_STATE = threading.local()


def grad_enabled() -> bool:
    """True when ops should record the graph (thread-local)."""
    return getattr(_STATE, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording on the current thread."""

    def __enter__(self) -> "no_grad":
        self._prev = grad_enabled()
        _STATE.grad_enabled = False
        return self

    def __exit__(self, *exc) -> None:
        _STATE.grad_enabled = self._prev


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """numpy array plus an optional grad slot and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] | None = None
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flags = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flags})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Copy-free view with no graph linkage."""
        return Tensor(self.data)

    # -- graph --------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into each reachable leaf's ``.grad``.

        ``self`` must be a scalar attached to a live tape. The tape is freed
        during the walk; calling backward twice on the same graph raises.
        """
        if self.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("backward on a tensor with no gradient tape (detached or built under no_grad)")
        if self._parents is None:
            raise RuntimeError("backward on a leaf or an already-consumed tape")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            if node._parents is not None:
                for p in node._parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._parents is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._vjp(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg
            node._parents = None
            node._vjp = None

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, np.add, lambda a, b, g: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract, lambda a, b, g: (g, -g))

    def __rsub__(self, other):
        return _binary(other, self, np.subtract, lambda a, b, g: (g, -g))

    def __mul__(self, other):
        return _binary(self, other, np.multiply, lambda a, b, g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, np.divide, lambda a, b, g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return _binary(other, self, np.divide, lambda a, b, g: (g / b, -g * a / (b * b)))

    def __neg__(self):
        return _unary(self, np.negative, lambda a, out, g: -g)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        return _unary(self, lambda a: a**p, lambda a, out, g: g * p * a ** (p - 1))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        """Basic (slice/int/ellipsis) indexing; gradient scatters back."""
        src_shape = self.data.shape

        def vjp(g, key=key):
            full = np.zeros(src_shape, dtype=g.dtype)
            full[key] += g
            return (full,)

        return _op(self.data[key], (self,), vjp)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        in_shape = self.data.shape

        def vjp(g):
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                axes = tuple(a % len(in_shape) for a in axes)
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g, in_shape).copy(),)

        return _op(self.data.sum(axis=axis, keepdims=keepdims), (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        in_shape = self.data.shape
        return _op(self.data.reshape(shape), (self,), lambda g: (g.reshape(in_shape),))

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        return _op(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _op(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _binary(x, y, fwd, grad_fn) -> Tensor:
    # python scalars adopt the tensor operand's dtype so f32 graphs stay f32
    if isinstance(x, Tensor) and isinstance(y, (int, float)):
        y = Tensor(np.asarray(y, dtype=x.data.dtype))
    elif isinstance(y, Tensor) and isinstance(x, (int, float)):
        x = Tensor(np.asarray(x, dtype=y.data.dtype))
    a, b = _as_tensor(x), _as_tensor(y)
    ad, bd = a.data, b.data

    def vjp(g):
        ga, gb = grad_fn(ad, bd, g)
        return (_unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape))

    return _op(fwd(ad, bd), (a, b), vjp)


def _unary(x, fwd, grad_fn) -> Tensor:
    a = _as_tensor(x)
    out_data = fwd(a.data)
    return _op(out_data, (a,), lambda g: (grad_fn(a.data, out_data, g),))


# -- pointwise functions ----------------------------------------------------


def exp(x) -> Tensor:
    return _unary(x, np.exp, lambda a, out, g: g * out)


def log(x) -> Tensor:
    return _unary(x, np.log, lambda a, out, g: g / a)


def sin(x) -> Tensor:
    return _unary(x, np.sin, lambda a, out, g: g * np.cos(a))


def cos(x) -> Tensor:
    return _unary(x, np.cos, lambda a, out, g: -g * np.sin(a))


def relu(x) -> Tensor:
    return _unary(x, lambda a: np.maximum(a, 0), lambda a, out, g: g * (a > 0))


def sigmoid(x) -> Tensor:
    return _unary(x, lambda a: expit(a).astype(a.dtype, copy=False), lambda a, out, g: g * out * (1.0 - out))


def absolute(x) -> Tensor:
    return _unary(x, np.abs, lambda a, out, g: g * np.sign(a))


def clip(x, lo: float | None, hi: float | None) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the input was in range."""

    def grad(a, out, g):
        mask = np.ones_like(a, dtype=bool)
        if lo is not None:
            mask &= a >= lo
        if hi is not None:
            mask &= a <= hi
        return g * mask

    return _unary(x, lambda a: np.clip(a, lo, hi), grad)


def matmul(x, y) -> Tensor:
    """Batched matrix product; both operands must have ndim >= 2."""
    a, b = _as_tensor(x), _as_tensor(y)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs ndim >= 2 operands, got {a.ndim} and {b.ndim}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape)
        gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape)
        return (ga, gb)

    return _op(ad @ bd, (a, b), vjp)


# -- structural ops ----------------------------------------------------------


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return _op(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]

    def vjp(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i] for i in range(len(ts)))

    return _op(np.stack([t.data for t in ts], axis=axis), tuple(ts), vjp)


def gather_rows(table, index) -> Tensor:
    """``table[index]`` along the leading axis; index is any integer array.

    The gradient scatter-adds back into the table (duplicate indices sum).
    """
    t = _as_tensor(table)
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("gather_rows index must be integral")
    rows = t.data.shape[0]
    trailing = t.data.shape[1:]
    k = int(np.prod(trailing)) if trailing else 1

    def vjp(g):
        flat_idx = idx.ravel()
        if k <= 16:
            cols = g.reshape(-1, k)
            out = np.empty((rows, k), dtype=g.dtype)
            for j in range(k):
                out[:, j] = np.bincount(flat_idx, weights=cols[:, j], minlength=rows)
            return (out.reshape((rows,) + trailing),)
        full = np.zeros((rows,) + trailing, dtype=g.dtype)
        np.add.at(full, flat_idx, g.reshape((-1,) + trailing))
        return (full,)

    return _op(t.data[idx], (t,), vjp)


def scatter_rows(values, index, length: int) -> Tensor:
    """Scatter-add ``values`` into a zero tensor of ``length`` leading rows."""
    v = _as_tensor(values)
    idx = np.asarray(index)
    out = np.zeros((length,) + v.data.shape[1:], dtype=v.data.dtype)
    np.add.at(out, idx, v.data)
    return _op(out, (v,), lambda g: (g[idx],))


def segment_sum(values, segment_ids, num_segments: int) -> Tensor:
    """Sum rows sharing a segment id; values are (n,) or (n, k)."""
    v = _as_tensor(values)
    seg = np.asarray(segment_ids)
    if v.data.ndim == 1:
        data = np.bincount(seg, weights=v.data, minlength=num_segments).astype(v.data.dtype, copy=False)
    else:
        k = v.data.shape[1]
        data = np.empty((num_segments, k), dtype=v.data.dtype)
        for j in range(k):
            data[:, j] = np.bincount(seg, weights=v.data[:, j], minlength=num_segments)
    return _op(data, (v,), lambda g: (g[seg],))


def _exclusive_cumsum_by_segment(x: np.ndarray, seg: np.ndarray) -> np.ndarray:
    """Per-segment exclusive prefix sum; segments must be contiguous."""
    if x.size == 0:
        return x.copy()
    acc = np.cumsum(x, dtype=np.float64)
    incl_minus_self = acc - x
    first = np.searchsorted(seg, seg, side="left")
    base = incl_minus_self[first]
    return (incl_minus_self - base).astype(x.dtype, copy=False)


def segment_cumsum_exclusive(values, segment_ids) -> Tensor:
    """Exclusive cumulative sum within each contiguous segment.

    The first element of every segment maps to 0. Segment ids must be sorted
    ascending (rays are laid out contiguously); unsorted ids raise.
    """
    v = _as_tensor(values)
    seg = np.asarray(segment_ids)
    if v.data.ndim != 1:
        raise ValueError("segment_cumsum_exclusive expects a flat value array")
    if seg.shape != v.data.shape:
        raise ValueError("segment ids must match values in shape")
    if seg.size and np.any(np.diff(seg) < 0):
        raise ValueError("segment ids must be sorted ascending")

    def vjp(g):
        # d out_j / d x_i = 1 for i < j within a segment, so the gradient of
        # x_i is the suffix sum of g over its segment, excluding g_i itself.
        total = np.bincount(seg, weights=g, minlength=int(seg[-1]) + 1 if seg.size else 0)
        incl = _exclusive_cumsum_by_segment(g, seg) + g
        return ((total[seg] - incl).astype(g.dtype, copy=False),)

    return _op(_exclusive_cumsum_by_segment(v.data, seg), (v,), vjp)
