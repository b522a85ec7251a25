"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records itself on a global tape when any input requires a
gradient; ``backward(loss)`` replays the tape once in reverse and accumulates
gradients into the leaf tensors. The tape is a Wengert list: ops are appended
in execution order, so it is topologically sorted by construction.

Design constraints: float64 only, no broadcasting beyond bias-style adds,
gelu uses the tanh approximation (its derivative matches), layer_norm epsilon
is 1e-5 unless overridden.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

GELU_C = float(np.sqrt(2.0 / np.pi))
GELU_A = 0.044715


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class NotFiniteError(ValueError):
    """Raised when an op receives NaN or Inf input."""


class Tensor:
    """A float64 n-d array, optionally tracked for reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_finite_ok")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray promotes 0-d to 1-d, so guard scalars
        self.data = arr if arr.ndim == 0 or arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._finite_ok = False  # set once the finiteness check has run

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64))


class _TapeEntry:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered op records; inputs of every entry precede it."""

    def __init__(self):
        self.entries: list[_TapeEntry] = []

    def append(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
        self.entries.append(_TapeEntry(out, inputs, backward_fn))

    def clear(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)


_tape = Tape()
_grad_enabled = True


def active_tape() -> Tape:
    return _tape


def reset_tape() -> None:
    _tape.clear()


@contextmanager
def no_grad():
    """Disable tape recording inside the block (forward evals, benchmarks)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _tape.append(out, inputs, backward_fn)
    return out


def _require_finite(op: str, *tensors: Tensor) -> None:
    # each tensor is verified at most once (ops never mutate data in place);
    # NaN/Inf propagate through the sum, which avoids a bool temporary
    for t in tensors:
        if t._finite_ok:
            continue
        if not np.isfinite(np.sum(t.data)):
            raise NotFiniteError(f"{op}: non-finite values in input of shape {t.data.shape}")
        t._finite_ok = True


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf's ``.grad``.

    Consumes and clears the active tape. Gradients add across fan-out and
    across repeated backward calls (callers zero grads between optimizer
    steps).
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.data.shape}")
    entries = _tape.entries
    produced = {id(e.out) for e in entries}
    if id(loss) not in produced:
        raise ValueError("backward: loss is detached from the tape (empty tape path)")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    try:
        for entry in reversed(entries):
            g = grads.pop(id(entry.out), None)
            if g is None:
                continue
            input_grads = entry.backward_fn(g)
            for inp, gi in zip(entry.inputs, input_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if id(inp) in produced:
                    acc = grads.get(id(inp))
                    grads[id(inp)] = gi if acc is None else acc + gi
                else:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
    finally:
        _tape.clear()


# ---------------------------------------------------------------------------
# elementwise and arithmetic ops
# ---------------------------------------------------------------------------


def _binary_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    _require_finite(op, a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_same_shape("add", a, b)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_same_shape("sub", a, b)
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_same_shape("mul", a, b)
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    _require_finite("scale", a)
    c = float(c)
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_finite("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        return (g @ b.data.T, a.data.T @ g)

    return _record(out, (a, b), bwd)


def transpose2d(a: Tensor) -> Tensor:
    _require_finite("transpose2d", a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose2d: expects a 2-d tensor, got shape {a.data.shape}")
    out = Tensor(a.data.T)
    return _record(out, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    _require_finite("reshape", a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise ShapeError(f"reshape: cannot reshape {a.data.shape} to {shape}")
    old = a.data.shape
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    for t in tensors:
        _require_finite("concat", t)
    ref = tensors[0].data.shape
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat: shape mismatch {ref} vs {s} on axis {axis}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        pieces = []
        for i in range(len(sizes)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _record(out, tuple(tensors), bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    _require_finite("slice_cols", a)
    if a.data.ndim != 2 or not (0 <= start < stop <= a.data.shape[1]):
        raise ShapeError(f"slice_cols: bad slice [{start}:{stop}] for shape {a.data.shape}")
    out = Tensor(a.data[:, start:stop])
    full = a.data.shape

    def bwd(g):
        gi = np.zeros(full, dtype=np.float64)
        gi[:, start:stop] = g
        return (gi,)

    return _record(out, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    _require_finite("relu", a)
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0
    return _record(out, (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    _require_finite("gelu", a)
    x = a.data
    u = GELU_C * (x + GELU_A * x**3)
    th = np.tanh(u)
    out = Tensor(0.5 * x * (1.0 + th))

    def bwd(g):
        du = GELU_C * (1.0 + 3.0 * GELU_A * x**2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * du),)

    return _record(out, (a,), bwd)


def softmax(a: Tensor, axis: int) -> Tensor:
    _require_finite("softmax", a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _record(out, (a,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-feature gain and bias."""
    _require_finite("layer_norm", x, gain, bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias shapes {gain.data.shape}/{bias.data.shape} do not match feature dim {d}"
        )
    mu = np.mean(x.data, axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def bwd(g):
        red = tuple(range(g.ndim - 1))
        g_gain = np.sum(g * xhat, axis=red)
        g_bias = np.sum(g, axis=red)
        dxhat = g * gain.data
        gx = inv * (dxhat - np.mean(dxhat, axis=-1, keepdims=True) - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
        return (gx, g_gain, g_bias)

    return _record(out, (x, gain, bias), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with the bias row-broadcast (the one permitted broadcast)."""
    _require_finite("linear", x, w, b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.data.shape} and {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"linear: bias shape {b.data.shape} does not match output dim {w.data.shape[1]}")
    out = Tensor(x.data @ w.data + b.data)

    def bwd(g):
        return (g @ w.data.T, x.data.T @ g, g.sum(axis=0))

    return _record(out, (x, w, b), bwd)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    _require_finite("sum_all", a)
    out = Tensor(np.sum(a.data))
    shape = a.data.shape
    return _record(out, (a,), lambda g: (np.full(shape, g, dtype=np.float64),))


def mean_all(a: Tensor) -> Tensor:
    if a.data.size == 0:
        raise ShapeError("mean_all: empty tensor")
    return scale(sum_all(a), 1.0 / a.data.size)


def sum_over_axis(a: Tensor, axis: int) -> Tensor:
    _require_finite("sum_over_axis", a)
    out = Tensor(np.sum(a.data, axis=axis))
    n = a.data.shape[axis]
    shape = a.data.shape

    def bwd(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record(out, (a,), bwd)


def _extreme_over_axis(op: str, a: Tensor, axis: int, use_max: bool) -> Tensor:
    _require_finite(op, a)
    if a.data.shape[axis] == 0:
        raise ShapeError(f"{op}: empty axis {axis} in shape {a.data.shape}")
    arg = np.argmax(a.data, axis=axis) if use_max else np.argmin(a.data, axis=axis)
    out_data = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)
    out = Tensor(out_data)
    shape = a.data.shape

    def bwd(g):
        gi = np.zeros(shape, dtype=np.float64)
        np.put_along_axis(gi, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (gi,)

    return _record(out, (a,), bwd)


def max_over_axis(a: Tensor, axis: int) -> Tensor:
    """Max reduction; the subgradient routes to the first argmax."""
    return _extreme_over_axis("max_over_axis", a, axis, use_max=True)


def min_over_axis(a: Tensor, axis: int) -> Tensor:
    return _extreme_over_axis("min_over_axis", a, axis, use_max=False)


# ---------------------------------------------------------------------------
# row gather / scatter
# ---------------------------------------------------------------------------


def gather_rows(a: Tensor, indices) -> Tensor:
    _require_finite("gather_rows", a)
    idx = np.asarray(indices, dtype=np.int64)
    if a.data.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"gather_rows: expects 2-d tensor and 1-d indices, got {a.data.shape} and {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.data.shape[0]} rows")
    out = Tensor(a.data[idx])
    n = a.data.shape[0]

    def bwd(g):
        gi = np.zeros((n, a.data.shape[1]), dtype=np.float64)
        np.add.at(gi, idx, g)
        return (gi,)

    return _record(out, (a,), bwd)


def scatter_rows_add(rows: Tensor, indices, num_rows: int) -> Tensor:
    """Add ``rows`` into a zero (num_rows, C) tensor at ``indices``.

    Duplicate indices accumulate; with unique indices, gather_rows at the
    same indices is the identity on the scattered rows.
    """
    _require_finite("scatter_rows_add", rows)
    idx = np.asarray(indices, dtype=np.int64)
    if rows.data.ndim != 2 or idx.ndim != 1 or idx.shape[0] != rows.data.shape[0]:
        raise ShapeError(f"scatter_rows_add: rows {rows.data.shape} vs indices {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= num_rows):
        raise ShapeError(f"scatter_rows_add: index out of range for {num_rows} rows")
    dest = np.zeros((num_rows, rows.data.shape[1]), dtype=np.float64)
    np.add.at(dest, idx, rows.data)
    out = Tensor(dest)
    return _record(out, (rows,), lambda g: (g[idx],))


def segment_max_rows(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Per-segment elementwise max over rows; every segment must be nonempty."""
    _require_finite("segment_max_rows", x)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if x.data.ndim != 2 or seg.shape != (x.data.shape[0],):
        raise ShapeError(f"segment_max_rows: rows {x.data.shape} vs segment ids {seg.shape}")
    c = x.data.shape[1]
    order = np.argsort(seg, kind="stable")
    sorted_seg = seg[order]
    bounds = np.searchsorted(sorted_seg, np.arange(num_segments + 1))
    if np.any(np.diff(bounds) == 0):
        raise ShapeError("segment_max_rows: empty segment")
    out_data = np.empty((num_segments, c), dtype=np.float64)
    arg_rows = np.empty((num_segments, c), dtype=np.int64)
    for s in range(num_segments):
        block = x.data[order[bounds[s]:bounds[s + 1]]]
        am = np.argmax(block, axis=0)
        out_data[s] = block[am, np.arange(c)]
        arg_rows[s] = order[bounds[s] + am]
    out = Tensor(out_data)
    n = x.data.shape[0]

    def bwd(g):
        gi = np.zeros((n, c), dtype=np.float64)
        cols = np.broadcast_to(np.arange(c), (num_segments, c))
        np.add.at(gi, (arg_rows.ravel(), cols.ravel()), g.ravel())
        return (gi,)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# convolutions (channels-first 2-d)
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    c, h, w = x.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    xp = np.zeros((c, hp, wp), dtype=np.float64)
    xp[:, pad:pad + h, pad:pad + w] = x
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = np.empty((c, kh, kw, ho, wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i:i + ho * stride:stride, j:j + wo * stride:stride]
    return cols.reshape(c * kh * kw, ho * wo), ho, wo


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    xp = np.zeros((c, hp, wp), dtype=np.float64)
    cols = cols.reshape(c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + ho * stride:stride, j:j + wo * stride:stride] += cols[:, i, j]
    return xp[:, pad:pad + h, pad:pad + w]


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution, input (C_in, H, W), kernel (C_out, C_in, kh, kw)."""
    _require_finite("conv2d", x, kernel)
    if x.data.ndim != 3 or kernel.data.ndim != 4 or kernel.data.shape[1] != x.data.shape[0]:
        raise ShapeError(f"conv2d: input {x.data.shape} incompatible with kernel {kernel.data.shape}")
    cout, cin, kh, kw = kernel.data.shape
    if x.data.shape[1] + 2 * padding < kh or x.data.shape[2] + 2 * padding < kw:
        raise ShapeError(f"conv2d: input {x.data.shape} smaller than kernel {kernel.data.shape} with padding {padding}")
    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    wmat = kernel.data.reshape(cout, cin * kh * kw)
    out = Tensor((wmat @ cols).reshape(cout, ho, wo))
    x_shape = x.data.shape

    def bwd(g):
        gmat = g.reshape(cout, ho * wo)
        g_kernel = (gmat @ cols.T).reshape(cout, cin, kh, kw)
        g_x = _col2im(wmat.T @ gmat, x_shape, kh, kw, stride, padding, ho, wo)
        return (g_x, g_kernel)

    return _record(out, (x, kernel), bwd)


def conv_transpose2d(x: Tensor, kernel: Tensor, stride: int, padding: int = 0) -> Tensor:
    """Adjoint of conv2d: input (C_in, H, W), kernel (C_in, C_out, kh, kw).

    Output spatial extent is (H - 1) * stride - 2 * padding + kh.
    """
    _require_finite("conv_transpose2d", x, kernel)
    if x.data.ndim != 3 or kernel.data.ndim != 4 or kernel.data.shape[0] != x.data.shape[0]:
        raise ShapeError(f"conv_transpose2d: input {x.data.shape} incompatible with kernel {kernel.data.shape}")
    cin, cout, kh, kw = kernel.data.shape
    _, h, w = x.data.shape
    hout = (h - 1) * stride - 2 * padding + kh
    wout = (w - 1) * stride - 2 * padding + kw
    if hout <= 0 or wout <= 0:
        raise ShapeError(f"conv_transpose2d: non-positive output extent for input {x.data.shape}")
    kmat = kernel.data.reshape(cin, cout * kh * kw)
    xmat = x.data.reshape(cin, h * w)
    out_data = _col2im(kmat.T @ xmat, (cout, hout, wout), kh, kw, stride, padding, h, w)
    out = Tensor(out_data)

    def bwd(g):
        gcols, gho, gwo = _im2col(g, kh, kw, stride, padding)
        g_x = (kmat @ gcols).reshape(cin, h, w)
        g_kernel = (xmat @ gcols.T).reshape(cin, cout, kh, kw)
        return (g_x, g_kernel)

    return _record(out, (x, kernel), bwd)


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias to a (C, H, W) map."""
    _require_finite("add_channel_bias", x, b)
    if x.data.ndim != 3 or b.data.shape != (x.data.shape[0],):
        raise ShapeError(f"add_channel_bias: map {x.data.shape} vs bias {b.data.shape}")
    out = Tensor(x.data + b.data[:, None, None])
    return _record(out, (x, b), lambda g: (g, g.sum(axis=(1, 2))))


# ---------------------------------------------------------------------------
# fused multi-head window attention
# ---------------------------------------------------------------------------


def window_attention(q: Tensor, k: Tensor, v: Tensor, num_heads: int) -> Tensor:
    """Multi-head scaled dot-product attention over one token group.

    Inputs are (n, d) with d divisible by num_heads; output is (n, d) of
    concatenated per-head softmax(q k^T / sqrt(d_h)) v. Projections live
    outside this op.
    """
    _require_finite("window_attention", q, k, v)
    if q.data.shape != k.data.shape or q.data.shape != v.data.shape or q.data.ndim != 2:
        raise ShapeError(f"window_attention: q/k/v shapes {q.data.shape}/{k.data.shape}/{v.data.shape} must match")
    n, d = q.data.shape
    if d % num_heads != 0:
        raise ShapeError(f"window_attention: dim {d} not divisible by {num_heads} heads")
    dh = d // num_heads
    inv = 1.0 / np.sqrt(dh)
    qh = q.data.reshape(n, num_heads, dh).transpose(1, 0, 2)
    kh = k.data.reshape(n, num_heads, dh).transpose(1, 0, 2)
    vh = v.data.reshape(n, num_heads, dh).transpose(1, 0, 2)
    scores = np.einsum("hid,hjd->hij", qh, kh) * inv
    scores -= scores.max(axis=2, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=2, keepdims=True)
    out_h = np.einsum("hij,hjd->hid", attn, vh)
    out = Tensor(out_h.transpose(1, 0, 2).reshape(n, d))

    def bwd(g):
        gh = g.reshape(n, num_heads, dh).transpose(1, 0, 2)
        g_attn = np.einsum("hid,hjd->hij", gh, vh)
        g_v = np.einsum("hij,hid->hjd", attn, gh)
        dot = np.sum(g_attn * attn, axis=2, keepdims=True)
        g_scores = (g_attn - dot) * attn * inv
        g_q = np.einsum("hij,hjd->hid", g_scores, kh)
        g_k = np.einsum("hij,hid->hjd", g_scores, qh)
        back = lambda a: a.transpose(1, 0, 2).reshape(n, d)
        return (back(g_q), back(g_k), back(g_v))

    return _record(out, (q, k, v), bwd)


# ---------------------------------------------------------------------------
# parameter init
# ---------------------------------------------------------------------------


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    """Weight init: uniform in +-1/sqrt(fan_in), requires_grad on."""
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return param(rng.uniform(-bound, bound, size=shape))


def zeros_param(shape) -> Tensor:
    return param(np.zeros(shape, dtype=np.float64))


def ones_param(shape) -> Tensor:
    return param(np.ones(shape, dtype=np.float64))
