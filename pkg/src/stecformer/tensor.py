"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable operation records a node on the active :class:`Tape`
(one per thread). Outside a tape, operations run as plain numpy and build no
graph, which is what evaluation loops use.

Non-leaf tensors do not retain gradients; only leaves created with
``requires_grad=True`` accumulate into ``.grad``.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor", "Tape", "ShapeError", "NonFiniteError", "NonDeterministicError",
    "tensor", "zeros", "ones", "backward", "no_tape", "current_tape", "record",
    "add", "sub", "mul", "div", "neg", "relu", "gelu", "square", "log",
    "elementwise", "matmul", "sum", "mean", "reshape", "transpose", "concat",
    "take", "take_along_axis", "pad_axis", "softmax", "log_softmax", "conv1d",
    "grad_check",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class NonDeterministicError(RuntimeError):
    pass


_local = threading.local()


def _stack() -> list:
    try:
        return _local.tapes
    except AttributeError:
        _local.tapes = []
        return _local.tapes


def current_tape() -> "Tape | None":
    st = _stack()
    if st:
        top = st[-1]
        if top is not None and top.active:
            return top
    return None


class Tape:
    """Ordered record of operations, filled while the tape is entered.

    Nodes are appended as results are produced, so the list is already in
    topological order and backward is a single reverse sweep.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.active = False

    def __enter__(self) -> "Tape":
        self.active = True
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        self.active = False
        _stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out: "Tensor", parents, fn) -> None:
        out._tape = self
        out._node = len(self.nodes)
        self.nodes.append((out, tuple(parents), fn))


class no_tape:
    """Suspend recording inside a block (evaluation, finite differences)."""

    def __enter__(self):
        _stack().append(None)

    def __exit__(self, *exc):
        _stack().pop()
        return False


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._tape: Tape | None = None
        self._node: int | None = None

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
    def is_leaf(self) -> bool:
        return self._node is None

    @property
    def tape_id(self):
        return None if self._node is None else (id(self._tape), self._node)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(self, o)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(_as_tensor(o), self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(self, o)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(_as_tensor(o), self)
    def __neg__(self): return neg(self)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return take(self, idx)

    def sum(self, axis=None, keepdims=False): return sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return transpose(self, axes or None)


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str = "op") -> Tensor:
    """Wrap ``data`` as the result of an operation on ``parents``.

    ``backward_fn(g)`` maps the output gradient to one gradient (or None) per
    parent, each already shaped like that parent. Custom operations in other
    modules are built on this.
    """
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == np.float64 else data.astype(np.float64)
    out.name = None
    out._tape = None
    out._node = None
    out.grad = None
    tape = current_tape()
    out.requires_grad = tape is not None and any(p.requires_grad for p in parents)
    if out.requires_grad:
        tape.record(out, parents, backward_fn)
    return out


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf reachable from ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape if tape is not None else loss._tape
    if tape is None or loss._tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {loss._node: np.ones_like(loss.data)}
    for idx in range(loss._node, -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        out, parents, fn = tape.nodes[idx]
        pgrads = fn(g)
        for p, pg in zip(parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if p._node is None or p._tape is not tape:
                p.grad = p.grad + pg if p.grad is not None else np.array(pg, dtype=np.float64)
            elif p._node in grads:
                grads[p._node] = grads[p._node] + pg
            else:
                grads[p._node] = pg


# ---------------------------------------------------------------- elementwise

def _broadcast_ok(a: tuple, b: tuple) -> bool:
    if len(b) > len(a):
        a, b = b, a
    for da, db in zip(a[::-1], b[::-1]):
        if da != db and da != 1 and db != 1:
            return False
    return True


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary_prep(a, b, op):
    a, b = _as_tensor(a), _as_tensor(b)
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary_prep(a, b, "add")
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _binary_prep(a, b, "sub")
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_prep(a, b, "mul")
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _binary_prep(a, b, "div")
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise NonFiniteError("div: division by zero")
    out = ad / bd
    return record(out, (a, b),
                  lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)), "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    return record(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    return record(a.data * mask, (a,), lambda g: (g * mask,), "relu")


_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    # exp(-x^2/2) underflows to 0 for large |x|, never overflows.
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return record(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),), "gelu")


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise NonFiniteError("log: non-positive input")
    ad = a.data
    return record(np.log(ad), (a,), lambda g: (g / ad,), "log")


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "div": div}
_UNARY = {"relu": relu, "gelu": gelu, "neg": neg, "square": square}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    if op_kind in _ELEMENTWISE:
        if b is None:
            raise ValueError(f"{op_kind} needs two operands")
        return _ELEMENTWISE[op_kind](a, b)
    if op_kind in _UNARY:
        return _UNARY[op_kind](a)
    raise ValueError(f"unknown op_kind {op_kind!r}")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Batched matrix product; batch dims broadcast from the right (a 2-D weight is shared)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs at least 2-D operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions {a.shape} @ {b.shape}")
    if not _broadcast_ok(a.shape[:-2], b.shape[:-2]):
        raise ShapeError(f"matmul: batch dimensions {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            if ad.ndim == 2 and bd.ndim > 2:
                ga = g.reshape(-1, g.shape[-2], g.shape[-1])
                bb = np.broadcast_to(bd, g.shape[:-2] + bd.shape[-2:]).reshape(-1, *bd.shape[-2:])
                ga = np.einsum("nij,nkj->ik", ga, bb)
            else:
                ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                # weight shared over the batch: fold batch into rows
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return record(ad @ bd, (a, b), bw, "matmul")


# ---------------------------------------------------------------- reductions / shape

def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    return record(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a, i, j) -> Tensor:
    a = _as_tensor(a)
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    cuts = np.cumsum(sizes)[:-1]
    return record(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def take(a, idx) -> Tensor:
    """Basic/advanced numpy indexing with scatter-add backward."""
    a = _as_tensor(a)
    shape = a.shape
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in parts)

    def bw(g):
        full = np.zeros(shape)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return record(np.array(a.data[idx]), (a,), bw, "take")


def take_along_axis(a, indices: np.ndarray, axis: int) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        # put is exact when indices along the axis are unique (top-k selections)
        np.put_along_axis(full, indices, g, axis=axis)
        return (full,)

    return record(np.take_along_axis(a.data, indices, axis=axis), (a,), bw, "take_along_axis")


def pad_axis(a, left: int, right: int, axis: int = -1, mode: str = "replicate") -> Tensor:
    """Pad along one axis by edge replication or zeros."""
    a = _as_tensor(a)
    axis = axis % a.ndim
    n = a.shape[axis]
    widths = [(0, 0)] * a.ndim
    widths[axis] = (left, right)
    if mode == "replicate":
        out = np.pad(a.data, widths, mode="edge")
    elif mode == "zero":
        out = np.pad(a.data, widths, mode="constant")
    else:
        raise ValueError(f"unknown padding mode {mode!r}")

    def bw(g):
        g = np.moveaxis(g, axis, 0)
        core = g[left:left + n].copy()
        if mode == "replicate":
            if left:
                core[0] += g[:left].sum(axis=0)
            if right:
                core[-1] += g[left + n:].sum(axis=0)
        return (np.moveaxis(core, 0, axis),)

    return record(out, (a,), bw, "pad")


# ---------------------------------------------------------------- softmax / conv

def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return record(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return record(out, (x,), lambda g: (g - s * g.sum(axis=axis, keepdims=True),), "log_softmax")


def conv1d(x, w, bias=None, padding: str = "same-replicate") -> Tensor:
    """1-D convolution (cross-correlation) over the last axis.

    ``x`` is ``[..., C_in, L]``, ``w`` is ``[C_out, C_in, k]`` with odd ``k``;
    the output keeps length ``L``.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    c_out, c_in, k = w.shape
    if k % 2 != 1:
        raise ValueError(f"conv1d kernel size must be odd, got {k}")
    if x.ndim < 2 or x.shape[-2] != c_in:
        raise ShapeError(f"conv1d: input channels {x.shape} vs weight {w.shape}")
    mode = {"same-replicate": "replicate", "same-zero": "zero"}.get(padding)
    if mode is None:
        raise ValueError(f"unknown padding {padding!r}")
    half = k // 2
    xp = pad_axis(x, half, half, axis=-1, mode=mode) if half else x
    L = x.shape[-1]
    xd, wd = xp.data, w.data
    cols = np.lib.stride_tricks.sliding_window_view(xd, k, axis=-1)  # [..., C_in, L, k]
    out = np.einsum("...clk,ock->...ol", cols, wd, optimize=True)

    def bw(g):
        gw = np.einsum("...ol,...clk->ock", g, cols, optimize=True)
        gcols = np.einsum("...ol,ock->...clk", g, wd, optimize=True)
        gx = np.zeros(xd.shape)
        for j in range(k):
            gx[..., j:j + L] += gcols[..., j]
        return gx, gw

    y = record(out, (xp, w), bw, "conv1d")
    if bias is not None:
        y = add(y, reshape(bias, (c_out, 1)))
    return y


# ---------------------------------------------------------------- gradient check

def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-6) -> float:
    """Largest relative discrepancy between backward and central differences.

    For each parameter tensor the error is
    ``||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12)``; the
    function returns the maximum over parameters. ``f`` takes no arguments and
    reads the parameters' current values.
    """
    params = list(params)
    if not 1e-8 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-8, 1e-4]")
    with no_tape():
        f0 = f().data.copy()
        f1 = f().data.copy()
    if not np.array_equal(f0, f1):
        raise NonDeterministicError("two identical forward passes disagreed")

    saved = [p.grad for p in params]
    for p in params:
        p.grad = np.zeros_like(p.data)
    with Tape():
        loss = f()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p, g in zip(params, saved):
        p.grad = g

    worst = 0.0
    with no_tape():
        for p, an in zip(params, analytic):
            num = np.zeros_like(p.data)
            for i in np.ndindex(p.shape):
                orig = p.data[i]
                p.data[i] = orig + eps
                fp = float(f().data.sum())
                p.data[i] = orig - eps
                fm = float(f().data.sum())
                p.data[i] = orig
                num[i] = (fp - fm) / (2.0 * eps)
            diff = np.linalg.norm(an - num)
            scale = max(np.linalg.norm(an), np.linalg.norm(num), 1e-12)
            worst = max(worst, diff / scale)
    return worst
