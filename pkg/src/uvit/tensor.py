"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a contiguous numpy array. Operations return new Tensors and,
when any operand participates in differentiation, record their parents plus a
closure that pushes the output gradient back to them. backward() walks that
record in reverse topological order. Tensors that do not require gradients
keep no links, so inference-only forward passes retain no graph.

All arithmetic is float64 end to end; integer and float inputs are promoted
on construction.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError, NumericError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 _parents=(), _vjp=None):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if any(extent < 1 for extent in arr.shape):
            raise DimensionError(f"tensor extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad = None
        self.op = op
        # Graph links are kept only when a gradient can flow through this node.
        if self.requires_grad and _parents:
            self._parents = tuple(_parents)
            self._vjp = _vjp
        else:
            self._parents = ()
            self._vjp = None

    @property
    def dims(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got dims {self.dims}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(dims={self.dims}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- operator sugar; the free functions below do the real work --

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, dims):
        return reshape(self, dims)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, dims: tuple) -> np.ndarray:
    """Sum g down to `dims`, undoing numpy broadcasting."""
    extra = g.ndim - len(dims)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, e in enumerate(dims) if e == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g.reshape(dims)


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add dims {a.dims} and {b.dims}") from exc

    def vjp(g):
        _accumulate(a, _unbroadcast(g, a.dims))
        _accumulate(b, _unbroadcast(g, b.dims))

    return Tensor(out, op="add", _parents=(a, b), _vjp=vjp)


def neg(a: Tensor) -> Tensor:
    def vjp(g):
        _accumulate(a, -g)

    return Tensor(-a.data, op="neg", _parents=(a,), _vjp=vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply dims {a.dims} and {b.dims}") from exc

    def vjp(g):
        _accumulate(a, _unbroadcast(g * b.data, a.dims))
        _accumulate(b, _unbroadcast(g * a.data, b.dims))

    return Tensor(out, op="mul", _parents=(a, b), _vjp=vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Strict 2-D matrix product; inner extents must agree."""
    if len(a.dims) != 2 or len(b.dims) != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.dims} and {b.dims}")
    if a.dims[1] != b.dims[0]:
        raise DimensionError(f"inner extents differ: {a.dims} vs {b.dims}")

    def vjp(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return Tensor(a.data @ b.data, op="matmul", _parents=(a, b), _vjp=vjp)


def transpose(a: Tensor) -> Tensor:
    if len(a.dims) != 2:
        raise DimensionError(f"transpose needs a 2-D tensor, got {a.dims}")

    def vjp(g):
        _accumulate(a, g.T)

    return Tensor(a.data.T, op="transpose", _parents=(a,), _vjp=vjp)


def sum_all(a: Tensor) -> Tensor:
    def vjp(g):
        _accumulate(a, np.broadcast_to(g, a.dims))

    return Tensor(a.data.sum(), op="sum", _parents=(a,), _vjp=vjp)


def mean_all(a: Tensor) -> Tensor:
    inv = 1.0 / a.data.size

    def vjp(g):
        _accumulate(a, np.broadcast_to(g * inv, a.dims))

    return Tensor(a.data.mean(), op="mean", _parents=(a,), _vjp=vjp)


def softmax_rows(a: Tensor) -> Tensor:
    """Row softmax of a 2-D tensor, stabilized by per-row max subtraction.

    Rows of the result sum to 1 to within 1e-9. Non-finite entries are
    rejected rather than propagated.
    """
    if len(a.dims) != 2:
        raise DimensionError(f"softmax_rows needs a 2-D tensor, got {a.dims}")
    if not np.isfinite(a.data).all():
        raise NumericError("softmax_rows input contains non-finite entries")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        # d softmax: s * (g - <g, s> per row)
        inner = (g * out).sum(axis=1, keepdims=True)
        _accumulate(a, out * (g - inner))

    return Tensor(out, op="softmax_rows", _parents=(a,), _vjp=vjp)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then scale and shift.

    Uses the population variance; eps sits inside the square root. gamma and
    beta are 1-D with length equal to the last extent of x.
    """
    if eps <= 0.0:
        raise ContractError(f"layernorm eps must be positive, got {eps}")
    if len(x.dims) < 1:
        raise DimensionError("layernorm needs at least one axis")
    d = x.dims[-1]
    if gamma.dims != (d,) or beta.dims != (d,):
        raise DimensionError(
            f"gamma/beta must be 1-D of length {d}, got {gamma.dims} and {beta.dims}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def vjp(g):
        _accumulate(beta, g.reshape(-1, d).sum(axis=0))
        _accumulate(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        gx = g * gamma.data
        # standard layernorm backward over the last axis
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * (gx - m1 - xhat * m2))

    return Tensor(out, op="layernorm", _parents=(x, gamma, beta), _vjp=vjp)


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with Phi the standard normal CDF."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        _accumulate(a, g * (cdf + x * pdf))

    return Tensor(out, op="gelu", _parents=(a,), _vjp=vjp)


# ---------------------------------------------------------------------------
# movement


def reshape(a: Tensor, dims) -> Tensor:
    dims = tuple(int(d) for d in dims)
    if math.prod(dims) != a.size:
        raise DimensionError(f"cannot reshape {a.dims} to {dims}")

    def vjp(g):
        _accumulate(a, g.reshape(a.dims))

    return Tensor(a.data.reshape(dims), op="reshape", _parents=(a,), _vjp=vjp)


def take_rows(a: Tensor, index) -> Tensor:
    """Gather rows of a 2-D tensor by integer index (repeats allowed)."""
    if len(a.dims) != 2:
        raise DimensionError(f"take_rows needs a 2-D tensor, got {a.dims}")
    idx = np.asarray(index, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionError(f"row index must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.dims[0]):
        raise DimensionError(f"row index out of range for {a.dims[0]} rows")

    def vjp(g):
        if a.requires_grad:
            acc = np.zeros(a.dims)
            np.add.at(acc, idx, g)
            _accumulate(a, acc)

    return Tensor(a.data[idx], op="take_rows", _parents=(a,), _vjp=vjp)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if len(a.dims) != 2:
        raise DimensionError(f"slice_cols needs a 2-D tensor, got {a.dims}")
    if not (0 <= start < stop <= a.dims[1]):
        raise DimensionError(f"column range [{start}, {stop}) invalid for {a.dims[1]} columns")

    def vjp(g):
        if a.requires_grad:
            acc = np.zeros(a.dims)
            acc[:, start:stop] = g
            _accumulate(a, acc)

    return Tensor(a.data[:, start:stop], op="slice_cols", _parents=(a,), _vjp=vjp)


def _concat(parts, axis: int, op: str) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise DimensionError(f"{op} needs at least one part")
    for p in parts:
        if len(p.dims) != 2:
            raise DimensionError(f"{op} needs 2-D parts, got {p.dims}")
    other = 1 - axis
    ref = parts[0].dims[other]
    if any(p.dims[other] != ref for p in parts):
        raise DimensionError(f"{op}: parts disagree on extent {other}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + [p.dims[axis] for p in parts])

    def vjp(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            piece = g[lo:hi] if axis == 0 else g[:, lo:hi]
            _accumulate(p, piece)

    return Tensor(out, op=op, _parents=parts, _vjp=vjp)


def concat_rows(parts) -> Tensor:
    return _concat(parts, 0, "concat_rows")


def concat_cols(parts) -> Tensor:
    return _concat(parts, 1, "concat_cols")


def gather(a: Tensor, flat_index) -> Tensor:
    """Index the flattened tensor; the result takes the index array's shape."""
    idx = np.asarray(flat_index, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.size):
        raise DimensionError(f"flat index out of range for {a.size} elements")

    def vjp(g):
        if a.requires_grad:
            acc = np.zeros(a.size)
            np.add.at(acc, idx.ravel(), g.ravel())
            _accumulate(a, acc.reshape(a.dims))

    return Tensor(a.data.reshape(-1)[idx], op="gather", _parents=(a,), _vjp=vjp)


def bilinear_resize(grid: Tensor, target_h: int, target_w: int) -> Tensor:
    """Resize an h x w x c grid to target_h x target_w with align-corners bilinear.

    Corner samples reproduce corner inputs exactly, and constant inputs stay
    exactly constant. An axis of extent 1 maps every target coordinate to
    source index 0.
    """
    if len(grid.dims) != 3:
        raise DimensionError(f"bilinear_resize needs an h x w x c grid, got {grid.dims}")
    target_h = int(target_h)
    target_w = int(target_w)
    if target_h < 1 or target_w < 1:
        raise DimensionError(f"target extents must be >= 1, got {target_h} x {target_w}")
    h, w, _ = grid.dims

    def axis_coords(src: int, tgt: int):
        if tgt == 1 or src == 1:
            return np.zeros(tgt, dtype=np.intp), np.zeros(tgt, dtype=np.intp), np.zeros(tgt)
        # (i * (src-1)) / (tgt-1): one correctly-rounded division keeps the
        # endpoints exact, so corner samples match the source bit for bit.
        pos = (np.arange(tgt, dtype=np.float64) * (src - 1)) / (tgt - 1)
        lo = np.clip(np.floor(pos).astype(np.intp), 0, src - 1)
        hi = np.minimum(lo + 1, src - 1)
        return lo, hi, pos - lo

    y0, y1, wy = axis_coords(h, target_h)
    x0, x1, wx = axis_coords(w, target_w)
    v = grid.data
    a = v[np.ix_(y0, x0)]
    b = v[np.ix_(y0, x1)]
    c = v[np.ix_(y1, x0)]
    d = v[np.ix_(y1, x1)]
    wxc = wx[None, :, None]
    wyc = wy[:, None, None]
    # two-stage lerp: exact on constants because each stage adds a scaled
    # difference of equal values
    top = a + wxc * (b - a)
    bottom = c + wxc * (d - c)
    out = top + wyc * (bottom - top)

    def vjp(g):
        if not grid.requires_grad:
            return
        g_top = g * (1.0 - wyc)
        g_bottom = g * wyc
        acc = np.zeros(grid.dims)
        flat = acc.reshape(h * w, grid.dims[2])
        yy0, xx0 = np.meshgrid(y0, x0, indexing="ij")
        yy1, xx1 = np.meshgrid(y1, x1, indexing="ij")
        for rows, cols, contrib in (
            (yy0, xx0, g_top * (1.0 - wxc)),
            (yy0, xx1, g_top * wxc),
            (yy1, xx0, g_bottom * (1.0 - wxc)),
            (yy1, xx1, g_bottom * wxc),
        ):
            np.add.at(flat, (rows * w + cols).ravel(),
                      contrib.reshape(-1, grid.dims[2]))
        _accumulate(grid, acc)

    return Tensor(out, op="bilinear_resize", _parents=(grid,), _vjp=vjp)


# ---------------------------------------------------------------------------
# graph walk


def trace(output: Tensor) -> tuple:
    """All tensors reachable from `output` through parent links, in a valid
    evaluation order (every parent precedes its consumers)."""
    order = []
    seen = set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return tuple(order)


def backward(output: Tensor) -> None:
    """Reverse sweep from a scalar output.

    Overwrites .grad on every tensor reachable from `output`; each
    gradient-requiring tensor ends up holding d(output)/d(tensor).
    """
    if output.data.size != 1:
        raise ContractError(
            f"backward needs a single-element output, got dims {output.dims}")
    order = trace(output)
    for node in order:
        node.grad = None
    output.grad = np.ones_like(output.data)
    for node in reversed(order):
        if node._vjp is not None and node.grad is not None:
            node._vjp(node.grad)
