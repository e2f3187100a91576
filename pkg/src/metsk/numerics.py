"""Float64 tensors with a reverse-mode gradient tape.

Every backward rule is written in terms of the same differentiable
operations, so gradients can themselves be differentiated
(``create_graph=True``). That is what the exact second-order meta-gradient
relies on; the default first-order path never records backward graphs.

Parameters travel as a *ParamTree*: a flat ``dict`` mapping slash-separated
paths (``"extractor/layer0/W"``) to ``numpy`` arrays.
"""

from __future__ import annotations

import contextlib
from collections.abc import Callable, Iterable, Mapping
from typing import Union

import numpy as np

from .errors import DimensionError, NumericalError, ValidationError

ParamTree = dict[str, np.ndarray]
Selector = Union[None, str, Iterable[str], Callable[[str], bool]]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _check_finite(data: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(data).all():
        raise NumericalError(f"non-finite value produced by {op}")
    return data


class Tensor:
    """Immutable float64 array that optionally records how it was produced."""

    __slots__ = ("data", "requires_grad", "_parents")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=()):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self._parents = _parents

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool = False, parents=()) -> Tensor:
        # internal constructor: takes ownership of a freshly computed array
        t = cls.__new__(cls)
        t.data = np.asarray(data, dtype=np.float64)
        t.requires_grad = requires_grad
        t._parents = parents
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, other: matmul(self, other)
    __rmatmul__ = lambda self, other: matmul(other, self)
    __pow__ = lambda self, p: power(self, p)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int) -> Tensor:
        return swapaxes(self, a, b)

    @property
    def T(self) -> Tensor:
        return swapaxes(self, -1, -2)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents) -> Tensor:
    if _grad_enabled:
        tracked = tuple((p, fn) for p, fn in parents if p.requires_grad)
        if tracked:
            return Tensor._wrap(data, True, tracked)
    return Tensor._wrap(data)


# --------------------------------------------------------------------------
# elementwise arithmetic with broadcasting
# --------------------------------------------------------------------------


def unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``g`` down to ``shape`` (adjoint of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and g.shape[lead + i] != 1
    )
    out = tsum(g, axes, keepdims=True) if axes else g
    return reshape(out, tuple(shape))


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    data = np.broadcast_to(a.data, shape)
    return _make(data, [(a, lambda g: unbroadcast(g, a.shape))])


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        [(a, lambda g: unbroadcast(g, a.shape)), (b, lambda g: unbroadcast(g, b.shape))],
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        [(a, lambda g: unbroadcast(g, a.shape)), (b, lambda g: unbroadcast(neg(g), b.shape))],
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, [(a, neg)])


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        [
            (a, lambda g: unbroadcast(mul(g, b), a.shape)),
            (b, lambda g: unbroadcast(mul(g, a), b.shape)),
        ],
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _check_finite(a.data / b.data, "div")
    return _make(
        out,
        [
            (a, lambda g: unbroadcast(div(g, b), a.shape)),
            (b, lambda g: unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape)),
        ],
    )


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = _check_finite(a.data ** p, "power")
    return _make(out, [(a, lambda g: mul(g, mul(p, power(a, p - 1))))])


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = _make(_check_finite(np.exp(a.data), "exp"), [])
    if _grad_enabled and a.requires_grad:
        out = Tensor._wrap(out.data, True, ((a, lambda g: mul(g, out)),))
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _check_finite(np.log(a.data), "log")
    return _make(out, [(a, lambda g: div(g, a))])


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = _make(_check_finite(np.sqrt(a.data), "sqrt"), [])
    if _grad_enabled and a.requires_grad:
        out = Tensor._wrap(out.data, True, ((a, lambda g: div(mul(g, 0.5), out)),))
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    return _make(a.data * mask, [(a, lambda g: mul(g, mask))])


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    data = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = _make(data, [])
    if _grad_enabled and a.requires_grad:
        out = Tensor._wrap(data, True, ((a, lambda g: mul(g, mul(out, sub(1.0, out)))),))
    return out


def log_sigmoid(a) -> Tensor:
    """log(sigmoid(a)) without overflow: -softplus(-a)."""
    a = as_tensor(a)
    x = a.data
    data = -(np.maximum(-x, 0.0) + np.log1p(np.exp(-np.abs(x))))
    return _make(data, [(a, lambda g: mul(g, sigmoid(neg(a))))])


# --------------------------------------------------------------------------
# reductions and shape manipulation
# --------------------------------------------------------------------------


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def vjp(g):
        return broadcast_to(reshape(g, kept_shape), a.shape)

    return _make(np.asarray(data), [(a, vjp)])


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(tsum(a, axes, keepdims), 1.0 / count)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)
    return _make(data, [(a, lambda g: reshape(g, a.shape))])


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, i, j), [(a, lambda g: swapaxes(g, i, j))])


def logsumexp(a, axis: int = -1, weights: np.ndarray | None = None) -> Tensor:
    """Stabilised ``log(sum(weights * exp(a), axis))``.

    ``weights`` is a constant 0/1 (or nonnegative) mask used to exclude
    entries from the sum without introducing infinities.
    """
    a = as_tensor(a)
    if weights is None:
        shift = a.data.max(axis=axis, keepdims=True)
    else:
        masked = np.where(weights > 0, a.data, -np.inf)
        shift = masked.max(axis=axis, keepdims=True)
        if not np.isfinite(shift).all():
            raise ValidationError("logsumexp mask removes every entry along an axis")
        # masked entries may exceed the shift; park them at it so exp stays <= 1
        keep = (weights > 0).astype(np.float64)
        a = add(mul(a, keep), (1.0 - keep) * shift)
    z = exp(sub(a, shift))
    if weights is not None:
        z = mul(z, weights)
    return add(log(tsum(z, axis)), np.squeeze(shift, axis=axis))


def l2_norm(a, axis=-1, keepdims: bool = False) -> Tensor:
    return sqrt(tsum(mul(a, a), axis, keepdims))


def cosine_similarity_matrix(u, v) -> Tensor:
    """Pairwise cosine similarities between rows of ``u`` and rows of ``v``."""
    un = div(u, l2_norm(u, -1, keepdims=True))
    vn = div(v, l2_norm(v, -1, keepdims=True))
    return matmul(un, swapaxes(vn, -1, -2))


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes with numpy batch broadcasting.

    A 2-D right operand is applied to every leading row of ``a``; this is
    the layout of every weight product in the model and keeps the
    weight gradient a single large product instead of many tiny ones.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    if b.ndim == 2:
        k, n = b.shape
        flat = a.data.reshape(-1, k)
        data = (flat @ b.data).reshape(a.shape[:-1] + (n,))

        def vjp_a(g):
            return matmul(g, swapaxes(b, 0, 1))

        def vjp_b(g):
            return matmul(swapaxes(reshape(a, (-1, k)), 0, 1), reshape(g, (-1, n)))

        return _make(data, [(a, vjp_a), (b, vjp_b)])

    data = np.matmul(a.data, b.data)
    return _make(
        data,
        [
            (a, lambda g: unbroadcast(matmul(g, swapaxes(b, -1, -2)), a.shape)),
            (b, lambda g: unbroadcast(matmul(swapaxes(a, -1, -2), g), b.shape)),
        ],
    )


# --------------------------------------------------------------------------
# 1-D convolution along the time axis (axis -2), zero same-padding, stride 1
# --------------------------------------------------------------------------


def _check_kernel(kernel: int, length: int) -> None:
    if kernel % 2 != 1:
        raise ValidationError(f"temporal kernel must be odd, got {kernel}")
    if kernel > 2 * length - 1:
        raise ValidationError(f"temporal kernel {kernel} longer than 2L-1 for L={length}")


def _pad_time(x: np.ndarray, half: int) -> np.ndarray:
    widths = [(0, 0)] * x.ndim
    widths[-2] = (half, half)
    return np.pad(x, widths)


def _padded_rows(x: np.ndarray, half: int) -> np.ndarray:
    """Zero-pad time, then flatten to rows; tap ``t`` of output row ``r``
    reads input row ``r + t``, so every tap is one contiguous GEMM."""
    return _pad_time(x, half).reshape(-1, x.shape[-1])


def conv_time(x, K) -> Tensor:
    """``out[..., l, :] = sum_t xpad[..., l + t, :] @ K[t]``.

    ``x`` is ``[..., L, C_in]``, ``K`` is ``[kernel, C_in, C_out]``.
    """
    x, K = as_tensor(x), as_tensor(K)
    kernel, c_in, c_out = K.shape
    length = x.shape[-2]
    _check_kernel(kernel, length)
    if x.shape[-1] != c_in:
        raise DimensionError(f"conv_time channel mismatch: {x.shape} vs kernel {K.shape}")
    half = kernel // 2
    rows = _padded_rows(x.data, half)
    n = rows.shape[0] - 2 * half
    ext = np.zeros((rows.shape[0], c_out))
    for t in range(kernel):
        ext[:n] += rows[t : t + n] @ K.data[t]
    out = ext.reshape(x.shape[:-2] + (length + 2 * half, c_out))[..., :length, :]
    return _make(
        np.ascontiguousarray(out),
        [
            (x, lambda g: conv_time(g, flip_kernel(K))),
            (K, lambda g: conv_time_weight_grad(x, g, kernel)),
        ],
    )


def flip_kernel(K) -> Tensor:
    """Reverse the tap order and transpose every tap (adjoint kernel)."""
    K = as_tensor(K)
    return _make(np.swapaxes(K.data[::-1], -1, -2), [(K, flip_kernel)])


def conv_time_weight_grad(x, g, kernel: int) -> Tensor:
    """``dK[t] = sum over batch and time of xpad[l + t]^T g[l]``."""
    x, g = as_tensor(x), as_tensor(g)
    c_in, c_out = x.shape[-1], g.shape[-1]
    half = kernel // 2
    length = x.shape[-2]
    rows = _padded_rows(x.data, half)
    n = rows.shape[0] - 2 * half
    # g laid out on the padded grid with zeros past the end of each series
    gz = np.zeros(g.shape[:-2] + (length + 2 * half, c_out))
    gz[..., :length, :] = g.data
    gz = gz.reshape(-1, c_out)[:n]
    out = np.empty((kernel, c_in, c_out))
    for t in range(kernel):
        out[t] = rows[t : t + n].T @ gz
    return _make(
        out,
        [
            (x, lambda G: conv_time(g, flip_kernel(G))),
            (g, lambda G: conv_time(x, G)),
        ],
    )


# --------------------------------------------------------------------------
# differentiation
# --------------------------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def gradients(output: Tensor, inputs: list[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Reverse-mode derivatives of scalar ``output`` w.r.t. ``inputs``.

    Inputs that ``output`` does not depend on receive zeros. With
    ``create_graph`` the returned tensors are themselves differentiable.
    """
    if output.data.size != 1:
        raise DimensionError(f"gradients needs a scalar output, got shape {output.shape}")
    if not np.isfinite(output.data).all():
        raise NumericalError("loss is non-finite")
    grads: dict[int, Tensor] = {}
    keep = {id(x) for x in inputs}
    if output.requires_grad:
        grads[id(output)] = Tensor(np.ones_like(output.data))
    ctx = contextlib.nullcontext() if create_graph else no_grad()
    with ctx:
        for node in reversed(_toposort(output)) if output.requires_grad else []:
            keep_node = id(node) in keep or not node._parents
            g = grads.get(id(node)) if keep_node else grads.pop(id(node), None)
            if g is None:
                continue
            for parent, vjp in node._parents:
                contrib = vjp(g)
                prev = grads.get(id(parent))
                grads[id(parent)] = contrib if prev is None else add(prev, contrib)
    return [grads.get(id(x), Tensor(np.zeros(x.shape))) for x in inputs]


def _selected(path: str, wrt: Selector) -> bool:
    if wrt is None:
        return True
    if callable(wrt):
        return bool(wrt(path))
    prefixes = (wrt,) if isinstance(wrt, str) else tuple(wrt)
    return any(path == p or path.startswith(p.rstrip("/") + "/") for p in prefixes)


def select(params: Mapping[str, np.ndarray], wrt: Selector) -> list[str]:
    """Leaf paths of ``params`` matched by a selector (prefix, prefixes or predicate)."""
    return [p for p in params if _selected(p, wrt)]


def value_and_grad(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    wrt: Selector = None,
) -> tuple[float, ParamTree]:
    """Evaluate ``loss_fn`` and its exact gradient.

    Unselected leaves enter ``loss_fn`` as constants and get zero
    gradients, so the result has the same keys and shapes as ``params``.
    """
    tensors = {
        path: Tensor(value, requires_grad=_selected(path, wrt)) for path, value in params.items()
    }
    loss = loss_fn(tensors)
    if not np.isfinite(loss.data).all():
        raise NumericalError("loss is non-finite")
    paths = list(tensors)
    grads = gradients(loss, [tensors[p] for p in paths])
    out: ParamTree = {}
    for path, g in zip(paths, grads):
        if not np.isfinite(g.data).all():
            raise NumericalError("non-finite gradient", path)
        out[path] = np.array(g.data)
    return float(loss.data), out


def grad(loss_fn, params: Mapping[str, np.ndarray], wrt: Selector = None) -> ParamTree:
    """Gradient tree of ``loss_fn`` at ``params``; see :func:`value_and_grad`."""
    return value_and_grad(loss_fn, params, wrt)[1]


def numerical_grad(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    wrt: Selector = None,
    h: float = 1e-5,
) -> ParamTree:
    """Central finite differences; the reference used to audit :func:`grad`."""
    base = {p: np.array(v, dtype=np.float64) for p, v in params.items()}
    out: ParamTree = {}

    def evaluate() -> float:
        # leaves stay differentiable so losses that take inner gradients still work
        return float(loss_fn({k: Tensor(v, requires_grad=True) for k, v in base.items()}).data)

    for path in base:
        g = np.zeros_like(base[path])
        if _selected(path, wrt):
            flat = base[path].reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = evaluate()
                flat[i] = orig - h
                down = evaluate()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * h)
        out[path] = g
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """``max|a-b| / max(max|a|, max|b|, floor)``."""
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def tree_map(fn, *trees: Mapping[str, np.ndarray]) -> ParamTree:
    return {k: fn(*(t[k] for t in trees)) for k in trees[0]}


def tree_copy(tree: Mapping[str, np.ndarray]) -> ParamTree:
    return {k: np.array(v, dtype=np.float64) for k, v in tree.items()}
