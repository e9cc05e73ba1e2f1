"""Small reverse-mode autodiff over float64 numpy arrays.

Every differentiable op builds a new :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients.
:func:`backward` walks the graph in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import special

DTYPE = np.float64


class DimensionError(ValueError):
    pass


class ContractError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "grad_fn", "name")
    # make numpy arrays defer to Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

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

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], grad_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.grad_fn = grad_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data ** 2, (a,), lambda g: (2.0 * a.data * g,))


def power(a, p: float) -> Tensor:
    """Elementwise ``a ** p`` for a constant exponent."""
    a = as_tensor(a)
    return _make(a.data ** p, (a,), lambda g: (p * a.data ** (p - 1.0) * g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def expm1(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.expm1(a.data), (a,), lambda g: (g * np.exp(a.data),))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def log1p(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log1p(a.data), (a,), lambda g: (g / (1.0 + a.data),))


def log1mexp(a) -> Tensor:
    """log(1 - exp(a)) for a < 0, switching formulas at -log 2."""
    a = as_tensor(a)
    x = a.data
    with np.errstate(divide="ignore"):
        out = np.where(x > -np.log(2.0), np.log(-np.expm1(np.minimum(x, -1e-300))),
                       np.log1p(-np.exp(np.minimum(x, -np.log(2.0)))))
    return _make(out, (a,), lambda g: (-g / np.expm1(-x),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = special.expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    """log(1 + exp(a)), stable for large |a|."""
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return _make(out, (a,), lambda g: (g * special.expit(a.data),))


def log_sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = -np.logaddexp(0.0, -a.data)
    return _make(out, (a,), lambda g: (g * special.expit(-a.data),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + special.erf(a.data / _SQRT_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data ** 2)
    return _make(a.data * cdf, (a,), lambda g: (g * (cdf + a.data * pdf),))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp with zero gradient outside ``[lo, hi]``."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def lgamma(a) -> Tensor:
    a = as_tensor(a)
    return _make(special.gammaln(a.data), (a,), lambda g: (g * special.digamma(a.data),))


def digamma_diff(x, y) -> np.ndarray:
    """psi(x) - psi(x + y) without cancellation when x is large."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    out = np.empty(x.shape)
    big = x > 100.0
    xs, ys = x[~big], y[~big]
    out[~big] = special.digamma(xs) - special.digamma(xs + ys)
    xb, yb = x[big], y[big]
    s = xb + yb
    out[big] = (-np.log1p(yb / xb) - yb / (2 * xb * s) - (1.0 / xb ** 2 - 1.0 / s ** 2) / 12.0
                + (1.0 / xb ** 4 - 1.0 / s ** 4) / 120.0 - (1.0 / xb ** 6 - 1.0 / s ** 6) / 252.0)
    return out


def betaln_value(a, b) -> np.ndarray:
    """log B(a, b), smooth in a for large a (scipy's value jitters near a ~ 1e6)."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    big_a = a >= b
    x = np.where(big_a, a, b)
    y = np.where(big_a, b, a)
    out = np.empty(x.shape)
    big = x > 100.0
    out[~big] = special.betaln(x[~big], y[~big])
    xb, yb = x[big], y[big]
    s = xb + yb
    # Stirling difference for lgamma(x + y) - lgamma(x)
    diff = ((xb - 0.5) * np.log1p(yb / xb) + yb * np.log(s) - yb
            + (1.0 / s - 1.0 / xb) / 12.0 - (1.0 / s ** 3 - 1.0 / xb ** 3) / 360.0
            + (1.0 / s ** 5 - 1.0 / xb ** 5) / 1260.0)
    out[big] = special.gammaln(yb) - diff
    return out


def betaln(a, b) -> Tensor:
    """log B(a, b); stays accurate when one argument is much larger."""
    a, b = as_tensor(a), as_tensor(b)
    out = betaln_value(a.data, b.data)

    def grad_fn(g):
        return (_unbroadcast(g * digamma_diff(a.data, b.data), a.shape),
                _unbroadcast(g * digamma_diff(b.data, a.data), b.shape))

    return _make(out, (a, b), grad_fn)


def digamma(a) -> Tensor:
    a = as_tensor(a)
    return _make(special.digamma(a.data), (a,),
                 lambda g: (g * special.polygamma(1, a.data),))


# ------------------------------------------------------------- shape & linear


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with weight stored as (out, in)."""
    out = matmul(x, transpose(weight))
    return out if bias is None else add(out, bias)


def index(a, idx) -> Tensor:
    """Basic or advanced indexing; gradient is scattered back with add."""
    a = as_tensor(a)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), grad_fn)


def take_rows(a, rows: np.ndarray) -> Tensor:
    """``a[rows]`` along axis 0; backward is a deterministic segment sum."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.intp)
    return _make(a.data[rows], (a,), lambda g: (scatter_rows(g, rows, a.shape[0]),))


def scatter_rows(values: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    """Sum ``values[i]`` into output row ``rows[i]`` in a fixed order."""
    out = np.zeros((n,) + values.shape[1:], dtype=DTYPE)
    if len(rows) == 0:
        return out
    order = np.argsort(rows, kind="stable")
    srows = rows[order]
    starts = np.flatnonzero(np.r_[True, srows[1:] != srows[:-1]])
    out[srows[starts]] = np.add.reduceat(values[order], starts, axis=0)
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


# ----------------------------------------------------------------- reductions


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), grad_fn)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return div(sum(a, axis=axis, keepdims=keepdims), float(n))


def cumsum(a, axis: int = 0) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make(np.cumsum(a.data, axis=axis), (a,), grad_fn)


def segment_sum(values, segment_of: np.ndarray, num_segments: int) -> Tensor:
    values = as_tensor(values)
    seg = np.asarray(segment_of, dtype=np.intp)
    return _make(scatter_rows(values.data, seg, num_segments), (values,),
                 lambda g: (g[seg],))


def _segment_softmax_array(scores: np.ndarray, seg: np.ndarray, num_segments: int):
    maxes = np.full((num_segments,) + scores.shape[1:], -np.inf)
    np.maximum.at(maxes, seg, scores)
    e = np.exp(scores - maxes[seg])
    denom = scatter_rows(e, seg, num_segments)
    return e / denom[seg]


def segment_softmax(scores, segment_of, num_segments: int | None = None):
    """Softmax of ``scores`` within groups sharing the same ``segment_of`` id.

    Accepts a plain list/array (returns an array) or a Tensor (returns a
    Tensor on the tape). Extra trailing axes, e.g. heads, are normalized
    independently.
    """
    seg = np.asarray(segment_of, dtype=np.intp)
    raw = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=DTYPE)
    if raw.shape[0] != seg.shape[0]:
        raise DimensionError(
            f"segment_softmax length mismatch: {raw.shape[0]} scores, {seg.shape[0]} ids")
    if num_segments is None:
        num_segments = int(seg.max()) + 1 if seg.size else 0
    out = _segment_softmax_array(raw, seg, num_segments)
    if not isinstance(scores, Tensor):
        return out

    def grad_fn(g):
        inner = scatter_rows(g * out, seg, num_segments)
        return (out * (g - inner[seg]),)

    return _make(out, (scores,), grad_fn)


# ------------------------------------------------------------------- backward


def _topological(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to each named leaf.

    Leaves not reachable from ``loss`` receive zeros.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_topological(loss)):
            g = grads.get(id(node))
            if g is None or node.grad_fn is None:
                continue
            for parent, pg in zip(node.parents, node.grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = np.asarray(pg, dtype=DTYPE)
    return {name: grads.get(id(t), np.zeros_like(t.data)).reshape(t.shape)
            for name, t in params.items()}


def leaves(arrays: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}


def finite_difference_check(loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
                            params,
                            step: float = 1e-5,
                            names: Iterable[str] | None = None,
                            per: str = "entry",
                            details: dict | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``per="entry"`` scores every scalar entry as
    |g - g_fd| / max(|g|, |g_fd|, 1e-8); ``per="tensor"`` applies the same
    ratio to whole-tensor L2 norms. Entries far below ~1e-4 pick up float64
    roundoff of order eps * |loss| / step, so entrywise checks need a point
    where no gradient entry is vanishingly small.

    ``loss_fn`` maps a dict of leaf tensors to a scalar tensor and must be
    deterministic (freeze any noise before calling). If ``details`` is given
    it is filled with per-tensor scores under both reductions.
    """
    if not step > 0:
        raise ContractError(f"step must be positive, got {step}")
    if per not in ("tensor", "entry"):
        raise ContractError(f"per must be 'tensor' or 'entry', got {per!r}")
    arrays = params.params if hasattr(params, "params") else params
    base = {k: np.array(v, dtype=DTYPE) for k, v in arrays.items()}
    bound = leaves(base)
    loss = loss_fn(bound)
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("loss is not finite")
    analytic = backward(loss, bound)
    worst = 0.0
    for name in (names if names is not None else base):
        flat = base[name].reshape(-1)
        fd = np.empty(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = loss_fn({k: Tensor(v) for k, v in base.items()}).item()
            flat[i] = old - step
            down = loss_fn({k: Tensor(v) for k, v in base.items()}).item()
            flat[i] = old
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"non-finite loss perturbing {name}[{i}]")
            fd[i] = (up - down) / (2.0 * step)
        an = analytic[name].reshape(-1)
        tensor_err = float(np.linalg.norm(an - fd)
                           / max(np.linalg.norm(an), np.linalg.norm(fd), 1e-8)) if fd.size else 0.0
        entry_err = float(np.max(np.abs(an - fd) / np.maximum(np.maximum(np.abs(an), np.abs(fd)), 1e-8),
                                 initial=0.0))
        if details is not None:
            details[name] = {"tensor": tensor_err, "entry": entry_err}
        worst = max(worst, tensor_err if per == "tensor" else entry_err)
    return worst
