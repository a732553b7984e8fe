"""Define-by-run reverse-mode automatic differentiation on numpy arrays.

A ``Tensor`` wraps an ndarray together with an optional gradient buffer
and a closure that scatters upstream gradients to its parents. Ops build
the graph as they execute; ``backward`` walks it once in reverse
topological order from a scalar loss. Subgraphs that do not lead to any
tensor with ``requires_grad`` are pruned at construction so constants
never hold the tape alive.

All ops are functional: ``data`` buffers are never mutated in place by
the graph machinery, only by explicit optimizer updates on leaves.
"""

from __future__ import annotations

import numbers

import numpy as np

__all__ = [
    "GraphError",
    "ShapeError",
    "Tensor",
    "backward",
    "clip",
    "concat",
    "conv2d",
    "downsample_nearest",
    "get_default_dtype",
    "matmul",
    "mean",
    "reshape",
    "set_default_dtype",
    "sigmoid",
    "silu",
    "softplus",
    "softplus_inverse",
    "stop_gradient",
    "tensor_sum",
    "upsample_nearest",
]


class ShapeError(ValueError):
    """An operand's shape violates the operation's contract."""


class GraphError(RuntimeError):
    """The autodiff graph is used outside its contract (non-scalar loss, ...)."""


_DEFAULT_DTYPE = np.float64
_ALLOWED_DTYPES = (np.float32, np.float64)


def set_default_dtype(dtype) -> None:
    """Set the dtype used for tensors built from non-float data (float32/float64)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in _ALLOWED_DTYPES:
        raise ValueError(f"default dtype must be float32 or float64, got {dtype}")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """An ndarray node in the reverse-mode graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        arr = np.asarray(data)
        if dtype is not None:
            arr = np.asarray(arr, dtype=dtype)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = np.asarray(arr, dtype=_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- introspection -----------------------------------------------------
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

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return stop_gradient(self)

    def backward(self) -> None:
        backward(self)

    def _accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise GraphError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            # copy: contributions may alias a child's grad buffer
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return (f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, "
                f"requires_grad={self.requires_grad})")

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, numbers.Number):
            return mul(self, 1.0 / other)
        raise TypeError("tensor division is only supported by a plain scalar")

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return mean(self)


def _coerce(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _topological(root: Tensor) -> list[Tensor]:
    """Parents-first ordering of every grad-requiring node reachable from root."""
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``grad`` for every reachable leaf.

    ``root`` must be a scalar (single-element) tensor that depends on at
    least one tensor with ``requires_grad``.
    """
    if root.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {root.shape}")
    if not root.requires_grad:
        raise GraphError("loss does not depend on any trainable tensor")
    order = _topological(root)
    # interior grads are per-pass scratch; only leaves accumulate across calls
    for node in order:
        if node._backward is not None:
            node.grad = None
    root._accumulate(np.ones_like(root.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- elementwise arithmetic --------------------------------------------------

def add(a, b) -> Tensor:
    a = _coerce(a, like=b if isinstance(b, Tensor) else None)
    b = _coerce(b, like=a)
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a = _coerce(a, like=b if isinstance(b, Tensor) else None)
    b = _coerce(b, like=a)
    data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a = _coerce(a, like=b if isinstance(b, Tensor) else None)
    b = _coerce(b, like=a)
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bwd)


def power(t, exponent) -> Tensor:
    """Raise to a constant real exponent."""
    if not isinstance(exponent, numbers.Number):
        raise TypeError("exponent must be a plain number")
    t = _coerce(t)
    p = float(exponent)
    data = t.data ** p

    def bwd(g):
        if t.requires_grad:
            t._accumulate(g * p * t.data ** (p - 1.0))

    return _make(data, (t,), bwd)


def _sigmoid_array(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows and underflows to an exact 0 for large |x|
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(t) -> Tensor:
    t = _coerce(t)
    s = _sigmoid_array(t.data)

    def bwd(g):
        if t.requires_grad:
            t._accumulate(g * s * (1.0 - s))

    return _make(s, (t,), bwd)


def softplus(t) -> Tensor:
    """log(1 + exp(x)), computed without overflow for large |x|."""
    t = _coerce(t)
    data = np.maximum(t.data, 0.0) + np.log1p(np.exp(-np.abs(t.data)))

    def bwd(g):
        if t.requires_grad:
            t._accumulate(g * _sigmoid_array(t.data))

    return _make(data, (t,), bwd)


def softplus_inverse(y: float) -> float:
    """Scalar x with softplus(x) == y, used to seed raw gate parameters."""
    if y <= 0:
        raise ValueError("softplus is positive, no preimage for y <= 0")
    if y > 30.0:
        return float(y)
    return float(np.log(np.expm1(y)))


def silu(t) -> Tensor:
    """x * sigmoid(x), fused into a single graph node."""
    t = _coerce(t)
    s = _sigmoid_array(t.data)
    data = t.data * s

    def bwd(g):
        if t.requires_grad:
            t._accumulate(g * (s + t.data * s * (1.0 - s)))

    return _make(data, (t,), bwd)


def clip(t, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient is zero outside the open interval."""
    if not lo < hi:
        raise ValueError(f"clip needs lo < hi, got [{lo}, {hi}]")
    t = _coerce(t)
    data = np.clip(t.data, lo, hi)

    def bwd(g):
        if t.requires_grad:
            inside = (t.data > lo) & (t.data < hi)
            t._accumulate(g * inside)

    return _make(data, (t,), bwd)


# -- reductions and reshaping ------------------------------------------------

def tensor_sum(t) -> Tensor:
    t = _coerce(t)
    data = np.asarray(t.data.sum(), dtype=t.data.dtype)

    def bwd(g):
        if t.requires_grad:
            t._accumulate(np.broadcast_to(g, t.data.shape).astype(t.data.dtype, copy=False))

    return _make(data, (t,), bwd)


def mean(t) -> Tensor:
    t = _coerce(t)
    data = np.asarray(t.data.mean(), dtype=t.data.dtype)
    inv = 1.0 / t.data.size

    def bwd(g):
        if t.requires_grad:
            t._accumulate(np.broadcast_to(g * inv, t.data.shape).astype(t.data.dtype, copy=False))

    return _make(data, (t,), bwd)


def reshape(t, shape) -> Tensor:
    t = _coerce(t)
    orig = t.data.shape
    data = t.data.reshape(shape)

    def bwd(g):
        if t.requires_grad:
            t._accumulate(g.reshape(orig))

    return _make(data, (t,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        moved = np.moveaxis(g, axis, 0)
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(np.moveaxis(moved[start:stop], 0, axis))

    return _make(data, tuple(tensors), bwd)


def stop_gradient(t) -> Tensor:
    """Same values, no tape: gradients do not flow past this node."""
    t = _coerce(t)
    return Tensor(t.data)


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, like=a)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise ShapeError(
            f"matmul supports (m,n)@(n,) and (m,n)@(n,k), got {a.shape} @ {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        if b.data.ndim == 1:
            if a.requires_grad:
                a._accumulate(np.outer(g, b.data))
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
        else:
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)

    return _make(data, (a, b), bwd)


# -- spatial ops ---------------------------------------------------------------

# Unrolled conv inputs below this size stay alive for the weight-gradient
# pass; larger ones are recomputed so peak memory stays bounded.
CONV_COLS_CACHE_BYTES = 8 << 20


def _im2col(xd: np.ndarray, kh: int, kw: int, sh: int, sw: int,
            ph: int, pw: int) -> tuple[np.ndarray, int, int]:
    if ph or pw:
        xd = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw]
    n, c, ho, wo = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    return cols, ho, wo


def _conv_input_grad(g: np.ndarray, wd: np.ndarray, xshape, sh: int, sw: int,
                     ph: int, pw: int) -> np.ndarray:
    """Gradient wrt the conv input, expressed as a correlation with the
    channel-swapped, spatially flipped kernel (a transposed convolution)."""
    n, ci, h, w = xshape
    co, _, kh, kw = wd.shape
    ho, wo = g.shape[2], g.shape[3]
    if sh > 1 or sw > 1:
        dilated = np.zeros((n, co, (ho - 1) * sh + 1, (wo - 1) * sw + 1), dtype=g.dtype)
        dilated[:, :, ::sh, ::sw] = g
    else:
        dilated = g
    wswap = np.ascontiguousarray(wd.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    cols, oh, ow = _im2col(dilated, kh, kw, 1, 1, kh - 1, kw - 1)
    out = (cols @ wswap.reshape(ci, -1).T).transpose(0, 2, 1).reshape(n, ci, oh, ow)
    if (oh, ow) == (h + 2 * ph, w + 2 * pw):
        full = out
    else:
        full = np.zeros((n, ci, h + 2 * ph, w + 2 * pw), dtype=g.dtype)
        full[:, :, :oh, :ow] = out
    return full[:, :, ph:ph + h, pw:pw + w]


def conv2d(x, weight, bias=None, stride: int = 1, pad: int | None = None) -> Tensor:
    """Cross-correlation of NCHW input with an OIHW kernel of odd extents.

    ``pad=None`` picks the padding that preserves spatial size at stride 1.
    """
    x = _coerce(x)
    weight = _coerce(weight, like=x)
    xd, wd = x.data, weight.data
    if xd.ndim != 4:
        raise ShapeError(f"conv input must be NCHW, got shape {xd.shape}")
    if wd.ndim != 4:
        raise ShapeError(f"conv kernel must be OIHW, got shape {wd.shape}")
    n, ci, h, w = xd.shape
    co, ci_w, kh, kw = wd.shape
    if ci_w != ci:
        raise ShapeError(f"kernel expects {ci_w} input channels, input has {ci}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel extents must be odd, got {kh}x{kw}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    sh = sw = int(stride)
    if pad is None:
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
    else:
        ph = pw = int(pad)
        if ph < 0:
            raise ValueError("pad must be >= 0")
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise ShapeError("kernel larger than padded input")
    if bias is not None:
        bias = _coerce(bias, like=x)
        if bias.data.shape != (co,):
            raise ShapeError(f"bias must have shape ({co},), got {bias.data.shape}")

    cols, ho, wo = _im2col(xd, kh, kw, sh, sw, ph, pw)
    out = (cols @ wd.reshape(co, -1).T).transpose(0, 2, 1).reshape(n, co, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)
    kept_cols = cols if weight.requires_grad and cols.nbytes <= CONV_COLS_CACHE_BYTES else None
    del cols

    def bwd(g):
        if weight.requires_grad:
            if kept_cols is None:
                cols2, _, _ = _im2col(xd, kh, kw, sh, sw, ph, pw)
            else:
                cols2 = kept_cols
            gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, co)
            dw = gmat.T @ cols2.reshape(n * ho * wo, ci * kh * kw)
            weight._accumulate(dw.reshape(co, ci, kh, kw))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            x._accumulate(_conv_input_grad(g, wd, xd.shape, sh, sw, ph, pw))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bwd)


def upsample_nearest(t, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError("factor must be >= 1")
    t = _coerce(t)
    if t.data.ndim < 2:
        raise ShapeError("upsample needs at least 2 trailing spatial dims")
    f = int(factor)
    data = t.data.repeat(f, axis=-2).repeat(f, axis=-1)

    def bwd(g):
        if t.requires_grad:
            lead = t.data.shape[:-2]
            h, w = t.data.shape[-2], t.data.shape[-1]
            t._accumulate(g.reshape(lead + (h, f, w, f)).sum(axis=(-3, -1)))

    return _make(data, (t,), bwd)


def downsample_nearest(t, factor: int) -> Tensor:
    """Keep the top-left sample of each factor x factor block."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    t = _coerce(t)
    if t.data.ndim < 2:
        raise ShapeError("downsample needs at least 2 trailing spatial dims")
    f = int(factor)
    h, w = t.data.shape[-2], t.data.shape[-1]
    if h % f or w % f:
        raise ShapeError(f"spatial extents ({h}, {w}) not divisible by factor {f}")
    data = t.data[..., ::f, ::f].copy()

    def bwd(g):
        if t.requires_grad:
            full = np.zeros(t.data.shape, dtype=g.dtype)
            full[..., ::f, ::f] = g
            t._accumulate(full)

    return _make(data, (t,), bwd)
