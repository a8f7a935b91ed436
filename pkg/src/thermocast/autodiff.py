"""Reverse-mode automatic differentiation on an explicit tape.

Dense float64 numpy arrays are the only value type. Each operation records a
node on a Tape; backward() walks the node list once in reverse creation
order, which is a valid topological order because operands always exist
before their results. There is no broadcasting beyond scalar-with-tensor;
shape mismatches raise immediately instead of deferring to numpy rules.

Raw numpy arrays and python numbers may be used as constant operands; they
participate in the forward value but receive no gradient.
"""

import numpy as np

from .errors import NonFiniteError, ShapeMismatchError, TapeError, ValidationError


class DivisionByZeroError(ValidationError):
    def __init__(self):
        super().__init__("elementwise.div", "divisor contains zeros")


class Tensor:
    """Handle to one tape node: immutable value plus a gradient slot."""

    __slots__ = ("data", "grad", "node_id", "tape")

    def __init__(self, data, node_id, tape):
        self.data = data
        self.grad = None
        self.node_id = node_id
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def backward(self):
        self.tape.backward(self)

    # arithmetic sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub_from(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, node={self.node_id})"


class _Node:
    __slots__ = ("parents", "backward_fn")

    def __init__(self, parents, backward_fn):
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed operations; one backward pass per tape."""

    def __init__(self):
        self._nodes = []
        self._tensors = []
        self._consumed = False

    def __len__(self):
        return len(self._nodes)

    def reset(self):
        self._nodes.clear()
        self._tensors.clear()
        self._consumed = False

    def leaf(self, data):
        """Register an input/parameter array as a differentiable leaf."""
        arr = np.asarray(data, dtype=np.float64)
        return self._record(arr, (), None)

    def _record(self, value, parents, backward_fn):
        if self._consumed:
            raise TapeError("tape already consumed by backward(); call reset() first")
        node_id = len(self._nodes)
        self._nodes.append(_Node(parents, backward_fn))
        t = Tensor(value, node_id, self)
        self._tensors.append(t)
        return t

    def backward(self, loss):
        """Accumulate d(loss)/d(node) for every ancestor of loss, exactly once per node."""
        if self._consumed:
            raise TapeError("tape already consumed by backward(); call reset() first")
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise TapeError("loss tensor does not belong to this tape")
        if loss.data.shape != ():
            raise TapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        self._consumed = True

        grads = [None] * len(self._nodes)
        grads[loss.node_id] = np.ones((), dtype=np.float64)
        for nid in range(loss.node_id, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self._nodes[nid]
            self._tensors[nid].grad = g
            if node.backward_fn is None:
                continue
            parent_grads = node.backward_fn(g)
            for pid, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                if grads[pid] is None:
                    grads[pid] = pg
                else:
                    grads[pid] = grads[pid] + pg
            grads[nid] = None  # release as soon as propagated


def _as_operand(x):
    """Classify an operand: (tensor, const_array, is_scalar)."""
    if isinstance(x, Tensor):
        return x, None, x.data.shape == ()
    arr = np.asarray(x, dtype=np.float64)
    return None, arr, arr.shape == ()


def _binary_shapes(what, a, b):
    at, aa, a_scalar = _as_operand(a)
    bt, ba, b_scalar = _as_operand(b)
    if at is None and bt is None:
        raise TapeError(f"{what}: at least one operand must be a Tensor")
    sa = at.data.shape if at is not None else aa.shape
    sb = bt.data.shape if bt is not None else ba.shape
    if sa != sb and not a_scalar and not b_scalar:
        raise ShapeMismatchError(what, sa, sb)
    tape = at.tape if at is not None else bt.tape
    if at is not None and bt is not None and at.tape is not bt.tape:
        raise TapeError(f"{what}: operands recorded on different tapes")
    return at, aa, bt, ba, tape


def _reduce_to(grad, shape):
    """Collapse a gradient onto a scalar operand's shape."""
    if shape == grad.shape:
        return grad
    return np.sum(grad).reshape(shape)


def add(a, b):
    at, aa, bt, ba, tape = _binary_shapes("add", a, b)
    av = at.data if at is not None else aa
    bv = bt.data if bt is not None else ba
    out = av + bv

    parents, grads_of = [], []
    if at is not None:
        parents.append(at.node_id)
        grads_of.append(("a", at.data.shape))
    if bt is not None:
        parents.append(bt.node_id)
        grads_of.append(("b", bt.data.shape))

    def backward_fn(g):
        return tuple(_reduce_to(g, shp) for _, shp in grads_of)

    return tape._record(out, tuple(parents), backward_fn)


def sub(a, b):
    at, aa, bt, ba, tape = _binary_shapes("sub", a, b)
    av = at.data if at is not None else aa
    bv = bt.data if bt is not None else ba
    out = av - bv

    parents, signs = [], []
    if at is not None:
        parents.append(at.node_id)
        signs.append((1.0, at.data.shape))
    if bt is not None:
        parents.append(bt.node_id)
        signs.append((-1.0, bt.data.shape))

    def backward_fn(g):
        return tuple(_reduce_to(s * g, shp) for s, shp in signs)

    return tape._record(out, tuple(parents), backward_fn)


def sub_from(a_const, b):
    """a_const - b where a_const is a number or array."""
    return sub(a_const, b)


def mul(a, b):
    at, aa, bt, ba, tape = _binary_shapes("mul", a, b)
    av = at.data if at is not None else aa
    bv = bt.data if bt is not None else ba
    out = av * bv

    parents = []
    if at is not None:
        parents.append(at.node_id)
    if bt is not None:
        parents.append(bt.node_id)

    def backward_fn(g):
        out_grads = []
        if at is not None:
            out_grads.append(_reduce_to(g * bv, at.data.shape))
        if bt is not None:
            out_grads.append(_reduce_to(g * av, bt.data.shape))
        return tuple(out_grads)

    return tape._record(out, tuple(parents), backward_fn)


def div(a, b):
    at, aa, bt, ba, tape = _binary_shapes("div", a, b)
    av = at.data if at is not None else aa
    bv = bt.data if bt is not None else ba
    if np.any(bv == 0.0):
        raise DivisionByZeroError()
    out = av / bv

    parents = []
    if at is not None:
        parents.append(at.node_id)
    if bt is not None:
        parents.append(bt.node_id)

    def backward_fn(g):
        out_grads = []
        if at is not None:
            out_grads.append(_reduce_to(g / bv, at.data.shape))
        if bt is not None:
            out_grads.append(_reduce_to(-g * av / (bv * bv), bt.data.shape))
        return tuple(out_grads)

    return tape._record(out, tuple(parents), backward_fn)


def square(x):
    xv = x.data

    def backward_fn(g):
        return (2.0 * xv * g,)

    return x.tape._record(xv * xv, (x.node_id,), backward_fn)


def absval(x):
    xv = x.data

    def backward_fn(g):
        return (np.sign(xv) * g,)

    return x.tape._record(np.abs(xv), (x.node_id,), backward_fn)


def scale(x, c):
    c = float(c)

    def backward_fn(g):
        return (c * g,)

    return x.tape._record(c * x.data, (x.node_id,), backward_fn)


def power4(x):
    xv = x.data
    sq = xv * xv

    def backward_fn(g):
        return (4.0 * sq * xv * g,)

    return x.tape._record(sq * sq, (x.node_id,), backward_fn)


def sigmoid(x):
    xv = x.data
    out = np.empty_like(xv)
    pos = xv >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    ex = np.exp(xv[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward_fn(g):
        return (out * (1.0 - out) * g,)

    return x.tape._record(out, (x.node_id,), backward_fn)


def tanh(x):
    out = np.tanh(x.data)

    def backward_fn(g):
        return ((1.0 - out * out) * g,)

    return x.tape._record(out, (x.node_id,), backward_fn)


_ELEMENTWISE = {}
_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh}


def elementwise(op_kind, a, b=None):
    """Dispatch by name; the direct functions are the primary API."""
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValidationError("op_kind", f"unknown elementwise op {op_kind!r}") from None
    if op_kind in ("add", "sub", "mul", "div", "scale"):
        return fn(a, b)
    if b is not None:
        raise ValidationError("op_kind", f"{op_kind} is unary")
    return fn(a)


def activation(kind, x):
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValidationError("kind", f"unknown activation {kind!r}") from None


_ELEMENTWISE.update(
    add=add, sub=sub, mul=mul, div=div, square=square, abs=absval, scale=scale, power4=power4
)


def reduce_sum(x):
    if x.size == 0:
        raise ValidationError("reduce", "cannot reduce an empty tensor")
    shape = x.data.shape

    def backward_fn(g):
        return (np.broadcast_to(g, shape).copy(),)

    return x.tape._record(np.sum(x.data), (x.node_id,), backward_fn)


def reduce_mean(x):
    if x.size == 0:
        raise ValidationError("reduce", "cannot reduce an empty tensor")
    shape = x.data.shape
    inv_n = 1.0 / x.size

    def backward_fn(g):
        return (np.broadcast_to(g * inv_n, shape).copy(),)

    return x.tape._record(np.mean(x.data), (x.node_id,), backward_fn)


def reduce(kind, x):
    if kind == "sum":
        return reduce_sum(x)
    if kind == "mean":
        return reduce_mean(x)
    raise ValidationError("kind", f"unknown reduction {kind!r}")


def concat(tensors, axis):
    """Join operands along an axis. Raw arrays are allowed as constants and
    receive no gradient; at least one operand must be a Tensor."""
    items = [_as_operand(t) for t in tensors]
    if not items:
        raise ValidationError("concat", "need at least one tensor")
    tape = None
    for t, _, _ in items:
        if t is None:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise TapeError("concat: operands recorded on different tapes")
    if tape is None:
        raise TapeError("concat: at least one operand must be a Tensor")
    arrays = [t.data if t is not None else a for t, a, _ in items]
    ref = arrays[0].shape
    for a in arrays[1:]:
        if a.ndim != len(ref):
            raise ShapeMismatchError("concat", ref, a.shape)
        for ax in range(a.ndim):
            if ax != axis and a.shape[ax] != ref[ax]:
                raise ShapeMismatchError("concat", ref, a.shape)
    out = np.concatenate(arrays, axis=axis)
    splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
    keep = [i for i, (t, _, _) in enumerate(items) if t is not None]

    def backward_fn(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(np.ascontiguousarray(pieces[i]) for i in keep)

    return tape._record(out, tuple(items[i][0].node_id for i in keep), backward_fn)


def concat_channels(a, b):
    """Join two [B, C, H, W] operands along the channel axis."""
    sa = a.data.shape if isinstance(a, Tensor) else np.shape(a)
    sb = b.data.shape if isinstance(b, Tensor) else np.shape(b)
    if len(sa) != 4 or len(sb) != 4:
        raise ValidationError("concat_channels", "expects 4-d [batch, channel, h, w] tensors")
    if sa[0] != sb[0] or sa[2:] != sb[2:]:
        raise ShapeMismatchError("concat_channels", sa, sb)
    return concat([a, b], axis=1)


def narrow(x, axis, start, length):
    """Contiguous slice along one axis."""
    n = x.data.shape[axis]
    if start < 0 or length < 1 or start + length > n:
        raise ValidationError("narrow", f"slice [{start}:{start + length}] outside axis of size {n}")
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    shape = x.data.shape

    def backward_fn(g):
        full = np.zeros(shape, dtype=np.float64)
        full[index] = g
        return (full,)

    return x.tape._record(np.ascontiguousarray(x.data[index]), (x.node_id,), backward_fn)


def reshape(x, shape):
    """View the same elements under a new shape (row-major order)."""
    old = x.data.shape
    try:
        out = np.reshape(x.data, shape)
    except ValueError:
        raise ShapeMismatchError("reshape", old, tuple(np.atleast_1d(shape))) from None

    def backward_fn(g):
        return (np.reshape(g, old).copy(),)

    return x.tape._record(out.copy(), (x.node_id,), backward_fn)


def shift2d(x, dr, dc):
    """out[..., i, j] = x[..., i+dr, j+dc], zero where the source is out of range."""
    xv = x.data
    if xv.ndim < 2:
        raise ValidationError("shift2d", "needs at least 2 dimensions")
    H, W = xv.shape[-2], xv.shape[-1]
    out = np.zeros_like(xv)
    rs_dst = slice(max(-dr, 0), H - max(dr, 0))
    cs_dst = slice(max(-dc, 0), W - max(dc, 0))
    rs_src = slice(max(dr, 0), H - max(-dr, 0))
    cs_src = slice(max(dc, 0), W - max(-dc, 0))
    out[..., rs_dst, cs_dst] = xv[..., rs_src, cs_src]

    def backward_fn(g):
        gx = np.zeros_like(g)
        gx[..., rs_src, cs_src] = g[..., rs_dst, cs_dst]
        return (gx,)

    return x.tape._record(out, (x.node_id,), backward_fn)


# ---------------------------------------------------------------------------
# 2-d convolution (cross-correlation), stride 1, zero-padded "same" output


def _im2col(xp, kh, kw):
    """[B, C, Hp, Wp] padded input -> [B*Ho*Wo, C*kh*kw] patch matrix."""
    B, C, Hp, Wp = xp.shape
    Ho, Wo = Hp - kh + 1, Wp - kw + 1
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (B, Ho, Wo, C, kh, kw), (s0, s2, s3, s1, s2, s3)
    )
    return win.reshape(B * Ho * Wo, C * kh * kw)


def _corr_same(x, kernel, bias=None):
    """Plain-value cross-correlation used by forward and by the dx backward."""
    B, C, H, W = x.shape
    co, ci, kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((B, C, H + 2 * ph, W + 2 * pw), dtype=np.float64)
    xp[:, :, ph:H + ph, pw:W + pw] = x
    cols = _im2col(xp, kh, kw)
    out = cols @ kernel.reshape(co, ci * kh * kw).T
    if bias is not None:
        out += bias
    return out.reshape(B, H, W, co).transpose(0, 3, 1, 2).copy(), cols


def conv2d(x, kernel, bias=None):
    """Stride-1 same-padding cross-correlation.

    x: [B, Cin, H, W]; kernel: [Cout, Cin, kh, kw] with odd kh, kw;
    bias: [Cout] or None. Any of the three may be a Tensor or a constant array.
    """
    xt, xa, _ = _as_operand(x)
    kt, ka, _ = _as_operand(kernel)
    bt, ba = None, None
    if bias is not None:
        bt, ba, _ = _as_operand(bias)
    tape = None
    for t in (xt, kt, bt):
        if t is not None:
            tape = t.tape
            break
    if tape is None:
        raise TapeError("conv2d: at least one operand must be a Tensor")

    xv = xt.data if xt is not None else xa
    kv = kt.data if kt is not None else ka
    bv = None
    if bias is not None:
        bv = bt.data if bt is not None else ba

    if xv.ndim != 4:
        raise ValidationError("conv2d", f"input must be [batch, channel, h, w], got {xv.shape}")
    if kv.ndim != 4:
        raise ValidationError("conv2d", f"kernel must be [out, in, kh, kw], got {kv.shape}")
    co, ci, kh, kw = kv.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValidationError("conv2d", f"kernel size must be odd, got {kh}x{kw}")
    if xv.shape[1] != ci:
        raise ShapeMismatchError("conv2d channels", xv.shape, kv.shape)
    if bv is not None and bv.shape != (co,):
        raise ShapeMismatchError("conv2d bias", bv.shape, (co,))

    out, cols = _corr_same(xv, kv, bv)
    B, _, H, W = xv.shape

    parents = []
    if xt is not None:
        parents.append(xt.node_id)
    if kt is not None:
        parents.append(kt.node_id)
    if bt is not None:
        parents.append(bt.node_id)

    def backward_fn(g):
        out_grads = []
        g_mat = None
        if xt is not None:
            flipped = kv[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            dx, _ = _corr_same(np.ascontiguousarray(g), np.ascontiguousarray(flipped))
            out_grads.append(dx)
        if kt is not None:
            g_mat = g.transpose(0, 2, 3, 1).reshape(B * H * W, co)
            dk = (g_mat.T @ cols).reshape(kv.shape)
            out_grads.append(dk)
        if bt is not None:
            out_grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(out_grads)

    return tape._record(out, tuple(parents), backward_fn)


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(f, x, eps=1e-5, rng=None, max_coords=10_000):
    """Max relative error between tape gradients of f and central differences.

    f maps a leaf Tensor to a scalar Tensor and must be pure (re-entrant: it
    is evaluated many times on fresh tapes). Above max_coords elements the
    finite-difference sweep samples coordinates instead of visiting all.
    """
    x = np.asarray(x, dtype=np.float64)

    def run(values):
        tape = Tape()
        out = f(tape.leaf(values))
        if out.data.shape != ():
            raise TapeError("grad_check requires f to return a scalar")
        if not np.isfinite(out.data):
            raise NonFiniteError("grad_check", "f returned a non-finite value")
        return tape, out

    tape, out = run(x)
    tape.backward(out)
    analytic = tape._tensors[0].grad
    tape.reset()  # graphs are cyclic; free each probe as it finishes
    if analytic is None:
        analytic = np.zeros_like(x)
    if not np.all(np.isfinite(analytic)):
        raise NonFiniteError("grad_check", "analytic gradient is non-finite")

    flat = x.reshape(-1)
    n = flat.size
    if n <= max_coords:
        coords = np.arange(n)
    else:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(n, size=max_coords, replace=False)

    a_flat = analytic.reshape(-1)
    worst = 0.0
    for idx in coords:
        bump = flat.copy()
        bump[idx] += eps
        t_hi, hi = run(bump.reshape(x.shape))
        hi_val = float(hi.data)
        t_hi.reset()
        bump[idx] -= 2 * eps
        t_lo, lo = run(bump.reshape(x.shape))
        lo_val = float(lo.data)
        t_lo.reset()
        if not (np.isfinite(hi_val) and np.isfinite(lo_val)):
            raise NonFiniteError("grad_check", f"non-finite at coordinate {idx}")
        numeric = (hi_val - lo_val) / (2 * eps)
        denom = max(abs(a_flat[idx]), abs(numeric), 1e-8)
        worst = max(worst, abs(a_flat[idx] - numeric) / denom)
    return worst
