"""Reverse-mode automatic differentiation over dense numpy arrays.

The engine is a dynamic tape: every operation returns a :class:`DiffNode`
holding its value plus closures that map an upstream gradient node to the
gradient contribution of each parent.  Because those closures are themselves
written in terms of the operations below, the output of :func:`grad` can be
differentiated again (``create_graph=True``), which is what the distillation
outer loop needs to push matching-loss gradients back into synthetic pixels.

Values are plain ``numpy.ndarray`` objects ("tensors" throughout the package):
row-major, float32 or float64, immutable by convention once wrapped in a node.
Binary operations require matching dtypes and either matching shapes or a
scalar (size-1) operand; there is no general broadcasting.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

Tensor = np.ndarray

__all__ = [
    "DiffNode",
    "Tensor",
    "ShapeError",
    "GraphError",
    "constant",
    "leaf",
    "pause_recording",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scalar_mul",
    "broadcast_scalar_mul",
    "relu",
    "square",
    "sqrt",
    "tsum",
    "tmean",
    "dot",
    "l2_norm",
    "concat",
    "reshape",
    "narrow",
    "getitem_scalar",
    "stack_repeat",
    "conv2d",
    "resize_linear",
    "interpolate_bilinear",
    "downsample_area",
    "sparse_linear",
    "row_filter",
    "SparseLinearOperator",
    "grad",
]


class ShapeError(ValueError):
    """Dimension mismatch, with the offending shapes in the message."""

    def __init__(self, op: str, detail: str, *shapes: tuple):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: {detail}"
        if shapes:
            msg += " (shapes: " + ", ".join(str(tuple(s)) for s in shapes) + ")"
        super().__init__(msg)


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (e.g. non-scalar loss)."""


_node_ids = itertools.count()
_recording = True


@contextmanager
def pause_recording():
    """Run a block without building graph edges (ops return constants)."""
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


class DiffNode:
    """A tensor value embedded in the differentiation graph.

    Leaves are created directly (``DiffNode(arr, requires_grad=True)`` or via
    :func:`constant`); interior nodes are created by operations.  ``nid`` is a
    monotonically increasing generation id used for deterministic traversal.
    """

    __slots__ = ("value", "requires_grad", "_parents", "_vjps", "nid", "_cols")

    def __init__(self, value, requires_grad: bool = False, dtype=None):
        arr = np.asarray(value, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.value = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[DiffNode, ...] = ()
        self._vjps: tuple[Callable[[DiffNode], DiffNode], ...] = ()
        self.nid = next(_node_ids)
        self._cols = None  # im2col cache, keyed by (kh, kw, padding)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def size(self) -> int:
        return self.value.size

    def detach(self) -> "DiffNode":
        return DiffNode(self.value)

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return (
            f"DiffNode(shape={self.value.shape}, dtype={self.value.dtype}, "
            f"requires_grad={self.requires_grad})"
        )

    # Operator sugar; scalar operands are wrapped as constants.
    def __add__(self, other):
        return add(self, as_node(other, self.dtype))

    def __radd__(self, other):
        return add(as_node(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, as_node(other, self.dtype))

    def __rsub__(self, other):
        return sub(as_node(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, as_node(other, self.dtype))

    def __rmul__(self, other):
        return mul(as_node(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, as_node(other, self.dtype))

    def __neg__(self):
        return neg(self)


def constant(value, dtype=None) -> DiffNode:
    return DiffNode(value, requires_grad=False, dtype=dtype)


def leaf(value, dtype=None) -> DiffNode:
    return DiffNode(value, requires_grad=True, dtype=dtype)


def as_node(x, dtype=None) -> DiffNode:
    if isinstance(x, DiffNode):
        return x
    return constant(x, dtype=dtype)


def _make(value: Tensor, parents: tuple[DiffNode, ...], vjps: tuple) -> DiffNode:
    """Wrap an op result, recording edges only when they can matter."""
    out = DiffNode.__new__(DiffNode)
    out.value = value
    out.nid = next(_node_ids)
    out._cols = None
    if _recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjps = vjps
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjps = ()
    return out


def _node_cols(x: DiffNode, kh: int, kw: int, padding: int) -> Tensor:
    """im2col of a node's value, cached on interior nodes.

    Leaves are excluded: optimizers and finite-difference probes update leaf
    values in place, which would leave a stale patch matrix behind.  Interior
    node values are never mutated.
    """
    leaf_node = x.requires_grad and not x._parents
    key = (kh, kw, padding)
    if not leaf_node and x._cols is not None and key in x._cols:
        return x._cols[key]
    cols = _im2col(_pad_nchw(x.value, padding), kh, kw)
    if not leaf_node:
        if x._cols is None:
            x._cols = {}
        x._cols[key] = cols
    return cols


def _check_dtype(op: str, a: DiffNode, b: DiffNode) -> None:
    if a.value.dtype != b.value.dtype:
        raise ShapeError(op, f"dtype mismatch {a.value.dtype} vs {b.value.dtype}")


def _binary_shapes(op: str, a: DiffNode, b: DiffNode) -> tuple[bool, bool]:
    """Validate shapes; returns (a_is_scalar, b_is_scalar).

    Allowed: identical shapes, or one operand of size 1 (scalar-vs-tensor).
    """
    _check_dtype(op, a, b)
    if a.value.shape == b.value.shape:
        return False, False
    if a.value.size == 1:
        return True, False
    if b.value.size == 1:
        return False, True
    raise ShapeError(op, "operands must match or one must be scalar",
                     a.value.shape, b.value.shape)


# ---------------------------------------------------------------------------
# elementwise / reduction primitives
# ---------------------------------------------------------------------------

def add(a: DiffNode, b: DiffNode) -> DiffNode:
    a_s, b_s = _binary_shapes("add", a, b)
    vjp_a = tsum if a_s and not b_s else (lambda g: g)
    vjp_b = tsum if b_s and not a_s else (lambda g: g)
    return _make(a.value + b.value, (a, b), (vjp_a, vjp_b))


def sub(a: DiffNode, b: DiffNode) -> DiffNode:
    a_s, b_s = _binary_shapes("sub", a, b)
    vjp_a = tsum if a_s and not b_s else (lambda g: g)
    vjp_b = (lambda g: neg(tsum(g))) if b_s and not a_s else neg
    return _make(a.value - b.value, (a, b), (vjp_a, vjp_b))


def mul(a: DiffNode, b: DiffNode) -> DiffNode:
    a_s, b_s = _binary_shapes("mul", a, b)

    def vjp_a(g):
        contrib = mul(g, b)
        return tsum(contrib) if a_s and not b_s else contrib

    def vjp_b(g):
        contrib = mul(g, a)
        return tsum(contrib) if b_s and not a_s else contrib

    return _make(a.value * b.value, (a, b), (vjp_a, vjp_b))


def div(a: DiffNode, b: DiffNode) -> DiffNode:
    a_s, b_s = _binary_shapes("div", a, b)

    def vjp_a(g):
        contrib = div(g, b)
        return tsum(contrib) if a_s and not b_s else contrib

    def vjp_b(g):
        contrib = neg(div(mul(g, a), mul(b, b)))
        return tsum(contrib) if b_s and not a_s else contrib

    return _make(a.value / b.value, (a, b), (vjp_a, vjp_b))


def neg(x: DiffNode) -> DiffNode:
    return _make(-x.value, (x,), (neg,))


def scalar_mul(c: float, x: DiffNode) -> DiffNode:
    c = float(c)
    return _make(x.value * x.value.dtype.type(c), (x,),
                 (lambda g: scalar_mul(c, g),))


def broadcast_scalar_mul(s: DiffNode, x: DiffNode) -> DiffNode:
    """Scale a tensor by a learnable scalar (size-1) node."""
    if s.value.size != 1:
        raise ShapeError("broadcast_scalar_mul", "first operand must be scalar",
                         s.value.shape)
    return mul(s, x)


def relu(x: DiffNode) -> DiffNode:
    # Subgradient at 0 is 0: the mask is strict.
    mask = (x.value > 0).astype(x.value.dtype)
    return _make(x.value * mask, (x,),
                 (lambda g: mul(g, constant(mask)),))


def square(x: DiffNode) -> DiffNode:
    return _make(x.value * x.value, (x,),
                 (lambda g: scalar_mul(2.0, mul(g, x)),))


def sqrt(x: DiffNode) -> DiffNode:
    out = _make(np.sqrt(x.value), (x,), ())
    if out.requires_grad:
        out._vjps = (lambda g: scalar_mul(0.5, div(g, out)),)
    return out


def _spread(g: DiffNode, shape: tuple[int, ...]) -> DiffNode:
    """Broadcast a scalar node to ``shape`` (adjoint of tsum)."""
    val = np.broadcast_to(g.value.reshape(()), shape)
    return _make(np.ascontiguousarray(val), (g,), (tsum,))


def tsum(x: DiffNode) -> DiffNode:
    """Sum of all elements, as a 0-d node."""
    shape = x.value.shape
    return _make(np.asarray(x.value.sum(), dtype=x.value.dtype), (x,),
                 (lambda g: _spread(g, shape),))


def tmean(x: DiffNode) -> DiffNode:
    return scalar_mul(1.0 / x.value.size, tsum(x))


def dot(a: DiffNode, b: DiffNode) -> DiffNode:
    """Inner product of flattened tensors, as a 0-d node."""
    if a.value.shape != b.value.shape:
        raise ShapeError("dot", "operands must have identical shapes",
                         a.value.shape, b.value.shape)
    _check_dtype("dot", a, b)
    val = np.asarray(a.value.ravel() @ b.value.ravel(), dtype=a.value.dtype)
    return _make(val, (a, b), (lambda g: mul(g, b), lambda g: mul(g, a)))


def l2_norm(x: DiffNode) -> DiffNode:
    return sqrt(dot(x, x))


def reshape(x: DiffNode, shape: Sequence[int]) -> DiffNode:
    shape = tuple(shape)
    old = x.value.shape
    return _make(x.value.reshape(shape), (x,),
                 (lambda g: reshape(g, old),))


def narrow(x: DiffNode, axis: int, start: int, length: int) -> DiffNode:
    """Contiguous slice along one axis."""
    if not 0 <= axis < x.value.ndim:
        raise ShapeError("narrow", f"axis {axis} out of range", x.value.shape)
    idx = [slice(None)] * x.value.ndim
    idx[axis] = slice(start, start + length)
    total = x.value.shape[axis]
    return _make(np.ascontiguousarray(x.value[tuple(idx)]), (x,),
                 (lambda g: _pad_insert(g, axis, start, total),))


def _pad_insert(x: DiffNode, axis: int, start: int, total: int) -> DiffNode:
    """Adjoint of narrow: embed into a zero tensor of extent ``total``."""
    shape = list(x.value.shape)
    length = shape[axis]
    shape[axis] = total
    val = np.zeros(shape, dtype=x.value.dtype)
    idx = [slice(None)] * len(shape)
    idx[axis] = slice(start, start + length)
    val[tuple(idx)] = x.value
    return _make(val, (x,), (lambda g: narrow(g, axis, start, length),))


def concat(nodes: Sequence[DiffNode], axis: int) -> DiffNode:
    if axis not in (0, 1):
        raise ShapeError("concat", f"axis must be 0 or 1, got {axis}")
    nodes = list(nodes)
    if not nodes:
        raise ShapeError("concat", "need at least one input")
    ndim = nodes[0].value.ndim
    if axis >= ndim:
        raise ShapeError("concat", f"axis {axis} out of range", nodes[0].value.shape)
    for n in nodes[1:]:
        _check_dtype("concat", nodes[0], n)
        sa, sb = list(nodes[0].value.shape), list(n.value.shape)
        sa[axis] = sb[axis] = 0
        if sa != sb:
            raise ShapeError("concat", "non-concat extents differ",
                             nodes[0].value.shape, n.value.shape)
    val = np.concatenate([n.value for n in nodes], axis=axis)
    offsets = np.cumsum([0] + [n.value.shape[axis] for n in nodes])

    def make_vjp(i):
        start, length = int(offsets[i]), nodes[i].value.shape[axis]
        return lambda g: narrow(g, axis, start, length)

    return _make(val, tuple(nodes), tuple(make_vjp(i) for i in range(len(nodes))))


def getitem_scalar(x: DiffNode, index: int) -> DiffNode:
    """Extract element ``index`` of a 1-d node as a 0-d node."""
    if x.value.ndim != 1:
        raise ShapeError("getitem_scalar", "input must be 1-d", x.value.shape)
    n = x.value.shape[0]
    if not 0 <= index < n:
        raise ShapeError("getitem_scalar", f"index {index} out of range", x.value.shape)
    val = np.asarray(x.value[index], dtype=x.value.dtype)
    return _make(val, (x,), (lambda g: _scatter_scalar(g, index, n),))


def _scatter_scalar(g: DiffNode, index: int, n: int) -> DiffNode:
    val = np.zeros(n, dtype=g.value.dtype)
    val[index] = g.value
    return _make(val, (g,), (lambda gg: getitem_scalar(gg, index),))


def stack_repeat(x: DiffNode, n: int) -> DiffNode:
    """Stack ``n`` copies of ``x`` along a new leading axis."""
    val = np.ascontiguousarray(np.broadcast_to(x.value, (n,) + x.value.shape))
    return _make(val, (x,), (_sum0,))


def _sum0(g: DiffNode) -> DiffNode:
    n = g.value.shape[0]
    return _make(g.value.sum(axis=0), (g,), (lambda gg: stack_repeat(gg, n),))


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _im2col(xpad: Tensor, kh: int, kw: int) -> Tensor:
    """Kernel-major patch matrix [C*kh*kw, N*Ho*Wo] from a padded batch."""
    n, c, hp, wp = xpad.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    if kh == 1 and kw == 1:
        return np.ascontiguousarray(xpad.transpose(1, 0, 2, 3)).reshape(c, -1)
    cols = np.empty((c * kh * kw, n, ho, wo), dtype=xpad.dtype)
    r = 0
    for ci in range(c):
        plane = xpad[:, ci]
        for i in range(kh):
            for j in range(kw):
                cols[r] = plane[:, i:i + ho, j:j + wo]
                r += 1
    return cols.reshape(c * kh * kw, n * ho * wo)


def _pad_nchw(x: Tensor, pad: int) -> Tensor:
    if pad == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, :, pad:pad + h, pad:pad + w] = x
    return out


def _conv_shapes(op, x_shape, w_shape, padding):
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ShapeError(op, "input and weight must be 4-d", x_shape, w_shape)
    n, c, h, w = x_shape
    o, cw, kh, kw = w_shape
    if c != cw:
        raise ShapeError(op, f"channel mismatch: input has {c}, weight expects {cw}",
                         x_shape, w_shape)
    ho = h + 2 * padding - kh + 1
    wo = w + 2 * padding - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(op, "kernel larger than padded input", x_shape, w_shape)
    return n, c, h, w, o, kh, kw, ho, wo


def conv2d(x: DiffNode, weight: DiffNode, bias: DiffNode | None,
           padding: int = 0) -> DiffNode:
    """2-d cross-correlation, stride 1, symmetric zero padding.

    ``x`` is [N, C, H, W], ``weight`` [O, C, kH, kW], ``bias`` [O] or None.
    Output is [N, O, H + 2*padding - kH + 1, W + 2*padding - kW + 1].
    Differentiable in all three inputs, to second order and beyond.
    """
    n, c, h, w, o, kh, kw, ho, wo = _conv_shapes(
        "conv2d", x.value.shape, weight.value.shape, padding)
    _check_dtype("conv2d", x, weight)
    if bias is not None:
        if bias.value.shape != (o,):
            raise ShapeError("conv2d", "bias must be [out_channels]",
                             bias.value.shape, weight.value.shape)
        _check_dtype("conv2d", x, bias)

    cols = _node_cols(x, kh, kw, padding)
    out = weight.value.reshape(o, -1) @ cols
    if bias is not None:
        out += bias.value[:, None]
    out = np.ascontiguousarray(
        out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))

    x_shape = x.value.shape

    def vjp_x(g):
        return _conv_input_grad(g, weight, padding, x_shape)

    def vjp_w(g):
        return _conv_weight_grad(x, g, padding, (kh, kw))

    if bias is None:
        return _make(out, (x, weight), (vjp_x, vjp_w))
    return _make(out, (x, weight, bias), (vjp_x, vjp_w, _sum_nhw))


def _col2im(cols: Tensor, n: int, c: int, hp: int, wp: int,
            kh: int, kw: int) -> Tensor:
    """Adjoint of _im2col: scatter-add patch rows back onto the padded grid."""
    ho, wo = hp - kh + 1, wp - kw + 1
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    r = 0
    for ci in range(c):
        plane = out[:, ci]
        for i in range(kh):
            for j in range(kw):
                plane[:, i:i + ho, j:j + wo] += cols[r].reshape(n, ho, wo)
                r += 1
    return out


def _conv_input_grad(g: DiffNode, weight: DiffNode, padding: int,
                     x_shape: tuple[int, ...]) -> DiffNode:
    """Adjoint of conv2d w.r.t. its input (a transposed convolution).

    Two equivalent formulations with very different memory traffic: scatter
    from the input's patch space (col2im) or a plain convolution with the
    flipped, channel-swapped kernel working in the output's patch space.
    Pick whichever materializes the smaller patch matrix.
    """
    n, c, h, w = x_shape
    o, _, kh, kw = weight.value.shape
    _, _, ho, wo = g.value.shape
    if o <= c and kh == kw and kh - 1 - padding >= 0:
        w_fs = np.ascontiguousarray(
            weight.value[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        # gradient patch matrices are large and single-use: never cached
        cols = _im2col(_pad_nchw(g.value, kh - 1 - padding), kh, kw)
        dx = (w_fs.reshape(c, -1) @ cols).reshape(c, n, h, w).transpose(1, 0, 2, 3)
        dx = np.ascontiguousarray(dx)
    else:
        gmat = np.ascontiguousarray(g.value.transpose(1, 0, 2, 3)).reshape(o, -1)
        cols_g = weight.value.reshape(o, -1).T @ gmat
        dx = _col2im(cols_g, n, c, h + 2 * padding, w + 2 * padding, kh, kw)
        if padding:
            dx = np.ascontiguousarray(
                dx[:, :, padding:padding + h, padding:padding + w])

    def vjp_g(gg):
        return conv2d(gg, weight, None, padding)

    def vjp_w(gg):
        return _conv_weight_grad(gg, g, padding, (kh, kw))

    return _make(dx, (g, weight), (vjp_g, vjp_w))


def _conv_weight_grad(x: DiffNode, g: DiffNode, padding: int,
                      kernel: tuple[int, int]) -> DiffNode:
    """Adjoint of conv2d w.r.t. its weight (input-with-output correlation)."""
    kh, kw = kernel
    n, c, h, w = x.value.shape
    _, o, ho, wo = g.value.shape
    cols = _node_cols(x, kh, kw, padding)
    gmat = np.ascontiguousarray(g.value.transpose(1, 0, 2, 3)).reshape(o, -1)
    dw = (gmat @ cols.T).reshape(o, c, kh, kw)

    x_shape = x.value.shape

    def vjp_x(gg):
        return _conv_input_grad(g, gg, padding, x_shape)

    def vjp_g(gg):
        return conv2d(x, gg, None, padding)

    return _make(dw, (x, g), (vjp_x, vjp_g))


def _sum_nhw(g: DiffNode) -> DiffNode:
    """Reduce [N, O, H, W] to per-channel sums [O] (bias adjoint)."""
    shape = g.value.shape
    val = g.value.sum(axis=(0, 2, 3))
    return _make(val, (g,), (lambda gg: _spread_nhw(gg, shape),))


def _spread_nhw(b: DiffNode, shape: tuple[int, ...]) -> DiffNode:
    val = np.ascontiguousarray(
        np.broadcast_to(b.value[None, :, None, None], shape))
    return _make(val, (b,), (_sum_nhw,))


# ---------------------------------------------------------------------------
# separable linear resampling (bilinear / area)
# ---------------------------------------------------------------------------

def resize_linear(x: DiffNode, rows: Tensor, cols: Tensor) -> DiffNode:
    """Apply row/column resampling matrices over the last two axes.

    ``rows`` is [out_h, in_h], ``cols`` is [out_w, in_w]; the op computes
    ``rows @ x @ cols.T`` for every leading slice and is exactly linear, so
    its adjoint is the same op with transposed matrices.
    """
    if x.value.shape[-2] != rows.shape[1] or x.value.shape[-1] != cols.shape[1]:
        raise ShapeError("resize_linear", "matrix extents do not match input",
                         x.value.shape, rows.shape, cols.shape)
    r = rows.astype(x.value.dtype, copy=False)
    c = cols.astype(x.value.dtype, copy=False)
    val = np.einsum("ab,...bc,dc->...ad", r, x.value, c, optimize=True)
    rt, ct = np.ascontiguousarray(r.T), np.ascontiguousarray(c.T)
    return _make(np.ascontiguousarray(val), (x,),
                 (lambda g: resize_linear(g, rt, ct),))


def _bilinear_matrix(n_out: int, n_in: int) -> Tensor:
    """Half-pixel-center bilinear interpolation matrix with edge clamping."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


def _area_matrix(n_in: int, factor: int) -> Tensor:
    if n_in % factor != 0:
        raise ShapeError("downsample_area",
                         f"factor {factor} does not divide extent {n_in}")
    n_out = n_in // factor
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        m[i, i * factor:(i + 1) * factor] = 1.0 / factor
    return m


def interpolate_bilinear(x: DiffNode, out_h: int, out_w: int) -> DiffNode:
    """Bilinear resample of [..., h, w] using half-pixel source centers."""
    return resize_linear(x, _bilinear_matrix(out_h, x.value.shape[-2]),
                         _bilinear_matrix(out_w, x.value.shape[-1]))


def downsample_area(x: DiffNode, factor: int) -> DiffNode:
    """Average non-overlapping factor-by-factor blocks of [..., h, w]."""
    return resize_linear(x, _area_matrix(x.value.shape[-2], factor),
                         _area_matrix(x.value.shape[-1], factor))


# ---------------------------------------------------------------------------
# general sparse linear maps and per-row spectral filtering (CT geometry)
# ---------------------------------------------------------------------------

class SparseLinearOperator:
    """A fixed sparse matrix between two fixed tensor shapes.

    Used for ray-integration and back-projection geometry; the adjoint shares
    storage so transpose round trips are exact.
    """

    def __init__(self, matrix, in_shape: tuple[int, ...],
                 out_shape: tuple[int, ...], _adjoint=None):
        import scipy.sparse as sp

        self.matrix = sp.csr_matrix(matrix)
        self.in_shape = tuple(in_shape)
        self.out_shape = tuple(out_shape)
        if _adjoint is None:
            _adjoint = SparseLinearOperator(
                self.matrix.T.tocsr(), out_shape, in_shape, _adjoint=self)
        self.adjoint = _adjoint

    def apply(self, arr: Tensor) -> Tensor:
        if arr.shape != self.in_shape:
            raise ShapeError("sparse_linear", "input shape mismatch",
                             arr.shape, self.in_shape)
        out = self.matrix @ arr.ravel().astype(np.float64, copy=False)
        return out.reshape(self.out_shape).astype(arr.dtype, copy=False)


def sparse_linear(x: DiffNode, op: SparseLinearOperator) -> DiffNode:
    val = op.apply(x.value)
    return _make(val, (x,), (lambda g: sparse_linear(g, op.adjoint),))


def row_filter(x: DiffNode, response: Tensor) -> DiffNode:
    """Multiply each row's rfft by a real response (self-adjoint circulant)."""
    n = x.value.shape[-1]
    if response.shape != (n // 2 + 1,):
        raise ShapeError("row_filter", "response length must be n//2+1",
                         x.value.shape, response.shape)
    spec = np.fft.rfft(x.value, axis=-1)
    val = np.fft.irfft(spec * response, n=n, axis=-1).astype(x.value.dtype)
    return _make(val, (x,), (lambda g: row_filter(g, response),))


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def _toposort(root: DiffNode) -> list[DiffNode]:
    """Post-order over the requires_grad subgraph, deterministic by edges."""
    order: list[DiffNode] = []
    visited: set[int] = set()
    stack: list[tuple[DiffNode, int]] = [(root, 0)]
    visited.add(root.nid)
    while stack:
        node, pi = stack[-1]
        parents = node._parents
        advanced = False
        while pi < len(parents):
            p = parents[pi]
            pi += 1
            if p.requires_grad and p.nid not in visited:
                visited.add(p.nid)
                stack[-1] = (node, pi)
                stack.append((p, 0))
                advanced = True
                break
        if not advanced:
            stack.pop()
            order.append(node)
    return order


def grad(loss: DiffNode, wrt: Iterable[DiffNode],
         create_graph: bool = False) -> list[DiffNode]:
    """Gradients of a scalar node with respect to each node in ``wrt``.

    Unreached ``wrt`` entries get zero tensors.  With ``create_graph`` the
    results stay in the graph and can be differentiated again; otherwise they
    are constants.
    """
    wrt = list(wrt)
    if loss.value.size != 1:
        raise GraphError(f"grad requires a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return [constant(np.zeros_like(w.value)) for w in wrt]

    order = _toposort(loss)
    grads: dict[int, DiffNode] = {
        loss.nid: constant(np.ones((), dtype=loss.value.dtype))
    }
    wanted = {w.nid for w in wrt}
    results: dict[int, DiffNode] = {}

    def run():
        for node in reversed(order):
            g = grads.pop(node.nid, None)
            if g is None:
                continue
            if node.nid in wanted and node.nid not in results:
                results[node.nid] = g
            for parent, vjp in zip(node._parents, node._vjps):
                if not parent.requires_grad:
                    continue
                contrib = vjp(g)
                prev = grads.get(parent.nid)
                grads[parent.nid] = contrib if prev is None else add(prev, contrib)

    if create_graph:
        run()
    else:
        with pause_recording():
            run()

    out = []
    for w in wrt:
        g = results.get(w.nid)
        if g is None:
            g = constant(np.zeros_like(w.value))
        elif g.value.shape != w.value.shape:
            # scalar seeds propagate as 0-d; restore the leaf's declared shape
            g = reshape(g, w.value.shape)
        out.append(g)
    return out
