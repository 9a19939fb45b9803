"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps an immutable-by-convention float64 array. While a
:class:`Tape` is active (``with Tape() as tape:``), every op appends a record
holding the participating tensors and a backward closure; ``tape.gradients``
replays the records once in reverse to accumulate exact gradients. With no
active tape the same functions are plain numpy computations, so inference
code reuses the identical forward path.

Conventions: convolutions are same-size cross-correlation (no kernel flip)
with zero padding and odd kernel extents; softmax acts on the last axis.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, ContractError, NumericError, ShapeError


class Tensor:
    """Immutable dense float64 array value."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor holds NaN or Inf")
        self.data = arr

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Ordered log of op records; replayed once, in reverse, by backward.

    Single-owner: a tape must not be shared across threads. Records keep
    references to their tensors, so object identity is stable for the
    tape's lifetime.
    """

    def __init__(self):
        # (output, inputs, backward) where backward(g) returns one gradient
        # array (or None) per input.
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._cache_key = None
        self._cache_grads: dict[int, np.ndarray] | None = None

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPES.pop()

    def __len__(self) -> int:
        return len(self._records)

    def gradients(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Map ``id(tensor) -> d loss / d tensor`` for every recorded tensor."""
        if loss.size != 1:
            raise ContractError("loss must be a scalar tensor")
        if self._cache_key == id(loss) and self._cache_grads is not None:
            return self._cache_grads
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, backward in reversed(self._records):
            g = grads.get(id(out))
            if g is None:
                continue
            in_grads = backward(g)
            for t, ig in zip(inputs, in_grads):
                if ig is None:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = ig if acc is None else acc + ig
        self._cache_key = id(loss)
        self._cache_grads = grads
        return grads


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    if _ACTIVE_TAPES:
        _ACTIVE_TAPES[-1]._records.append((out, inputs, backward))
    return out


def grad(tape: Tape, loss: Tensor, params) -> dict[str, Tensor]:
    """Gradients of ``loss`` for every entry of a ParamStore-like mapping.

    Parameters that do not reach the loss get zero gradients.
    """
    gs = tape.gradients(loss)
    out = {}
    for name, t in params.items():
        g = gs.get(id(t))
        out[name] = Tensor(g) if g is not None else Tensor(np.zeros_like(t.data))
    return out


# ---------------------------------------------------------------------------
# elementwise and scalar ops


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), lambda g: (g * b.data, g * a.data))


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data + c)
    return _record(out, (a,), lambda g: (g,))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return mul_scalar(a, -1.0)


def add_b(a: Tensor, s: Tensor) -> Tensor:
    """Add a scalar (0-d or 1-element) tensor, broadcast over ``a``."""
    out = Tensor(a.data + s.data.reshape(()))
    return _record(out, (a, s), lambda g: (g, np.sum(g).reshape(s.shape)))


def mul_b(a: Tensor, s: Tensor) -> Tensor:
    sv = s.data.reshape(())
    out = Tensor(a.data * sv)
    return _record(out, (a, s), lambda g: (g * sv, np.sum(g * a.data).reshape(s.shape)))


def div_b(a: Tensor, s: Tensor) -> Tensor:
    """Divide by a scalar tensor; the denominator must be nonzero."""
    sv = float(s.data.reshape(()))
    if sv == 0.0:
        raise NumericError("division by zero scalar")
    out = Tensor(a.data / sv)
    return _record(
        out,
        (a, s),
        lambda g: (g / sv, np.sum(g * a.data * (-1.0 / sv**2)).reshape(s.shape)),
    )


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0
    return _record(out, (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * (1.0 - y * y),))


def log_clamped(a: Tensor, floor: float = 1e-12) -> Tensor:
    """log(max(x, floor)); gradient is zero where the clamp is active."""
    clamped = np.maximum(a.data, floor)
    out = Tensor(np.log(clamped))
    mask = a.data >= floor
    return _record(out, (a,), lambda g: (g * mask / clamped,))


# ---------------------------------------------------------------------------
# reductions, shaping


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.sum(a.data))
    return _record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    out = Tensor(np.mean(a.data))
    return _record(out, (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims))

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _record(out, (a,), backward)


def mean_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    n = a.shape[axis]
    out = Tensor(np.mean(a.data, axis=axis, keepdims=keepdims))

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, a.shape).copy(),)

    return _record(out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    inv = tuple(np.argsort(axes))
    out = Tensor(np.transpose(a.data, axes))
    return _record(out, (a,), lambda g: (np.transpose(g, inv),))


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    out = Tensor(np.stack([t.data for t in tensors]))

    def backward(g):
        return tuple(g[i] for i in range(len(tensors)))

    return _record(out, tuple(tensors), backward)


def patch_row(a: Tensor, row: int, start: int, length: int) -> Tensor:
    """One row of a 2-D tensor restricted to [start, start+length)."""
    if a.data.ndim != 2:
        raise ShapeError("patch_row expects a 2-D tensor")
    if not (0 <= row < a.shape[0]) or start < 0 or start + length > a.shape[1]:
        raise ContractError("patch outside tensor bounds")
    out = Tensor(a.data[row, start : start + length].copy())

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[row, start : start + length] = g
        return (ga,)

    return _record(out, (a,), backward)


def pairwise_sqdist(a: Tensor, b: Tensor) -> Tensor:
    """Squared euclidean distances between rows: out[i, j] = ||a_i - b_j||^2."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_sqdist: {a.shape} vs {b.shape}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    out = Tensor(np.einsum("ijk,ijk->ij", diff, diff))

    def backward(g):
        ga = 2.0 * np.einsum("ij,ijk->ik", g, diff)
        gb = -2.0 * np.einsum("ij,ijk->jk", g, diff)
        return (ga, gb)

    return _record(out, (a, b), backward)


def gather_col(a: Tensor, col: int) -> Tensor:
    """Column ``col`` of a 2-D tensor, shape (rows,)."""
    if a.data.ndim != 2:
        raise ShapeError("gather_col expects a 2-D tensor")
    if not (0 <= col < a.shape[1]):
        raise ContractError(f"column {col} outside 0..{a.shape[1] - 1}")
    out = Tensor(a.data[:, col].copy())

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[:, col] = g
        return (ga,)

    return _record(out, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy stacking semantics on leading axes."""
    try:
        y = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}") from exc
    out = Tensor(y)

    def _reduce_to(g, shape):
        if g.shape == shape:
            return g
        extra = g.ndim - len(shape)
        if extra:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return g

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_reduce_to(ga, a.data.shape), _reduce_to(gb, b.data.shape))

    return _record(out, (a, b), backward)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x (B, I), w (I, O), b (O)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError("dense expects x (B,I), w (I,O), b (O)")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(f"dense: x {x.shape}, w {w.shape}, b {b.shape} do not conform")
    out = Tensor(x.data @ w.data + b.data)

    def backward(g):
        return (g @ w.data.T, x.data.T @ g, g.sum(axis=0))

    return _record(out, (x, w, b), backward)


def softmax(a: Tensor) -> Tensor:
    """Row-stable softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def backward(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), backward)


# ---------------------------------------------------------------------------
# convolution, pooling


def _check_conv_args(x: Tensor, k: Tensor, ndim: int, name: str) -> None:
    if x.data.ndim != ndim or k.data.ndim != ndim:
        raise ShapeError(f"{name}: expected {ndim}-D input and kernel")
    if x.shape[1] != k.shape[1]:
        raise ShapeError(f"{name}: channel mismatch {x.shape} vs {k.shape}")
    for extent in k.shape[2:]:
        if extent % 2 == 0:
            raise ConfigError(f"{name}: kernel extents must be odd, got {k.shape}")


def conv1d(x: Tensor, k: Tensor) -> Tensor:
    """(B, C, L) * (O, C, K) -> (B, O, L), zero 'same' padding."""
    _check_conv_args(x, k, 3, "conv1d")
    out = Tensor(_kernels.conv1d_fwd(x.data, k.data))

    def backward(g):
        # d/dx is a correlation of g with the kernel flipped in K, O<->C.
        kt = np.ascontiguousarray(k.data[:, :, ::-1].transpose(1, 0, 2))
        gx = _kernels.conv1d_fwd(np.ascontiguousarray(g), kt)
        gk = _kernels.conv1d_grad_k(x.data, np.ascontiguousarray(g), k.shape)
        return (gx, gk)

    return _record(out, (x, k), backward)


def conv2d(x: Tensor, k: Tensor) -> Tensor:
    """(B, C, H, W) * (O, C, Kh, Kw) -> (B, O, H, W), zero 'same' padding."""
    _check_conv_args(x, k, 4, "conv2d")
    out = Tensor(_kernels.conv2d_fwd(x.data, k.data))

    def backward(g):
        kt = np.ascontiguousarray(k.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx = _kernels.conv2d_fwd(np.ascontiguousarray(g), kt)
        gk = _kernels.conv2d_grad_k(x.data, np.ascontiguousarray(g), k.shape)
        return (gx, gk)

    return _record(out, (x, k), backward)


def bias_channels(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias (C,) to (B, C, ...spatial)."""
    if b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"bias_channels: x {x.shape}, b {b.shape}")
    bshape = (1, b.shape[0]) + (1,) * (x.data.ndim - 2)
    out = Tensor(x.data + b.data.reshape(bshape))
    axes = (0,) + tuple(range(2, x.data.ndim))

    def backward(g):
        return (g, g.sum(axis=axes))

    return _record(out, (x, b), backward)


def max_pool1d(x: Tensor, factor: int = 2) -> Tensor:
    """(B, C, L) -> (B, C, L // factor); a trailing remainder is dropped."""
    b_, c_, l_ = x.shape
    lo = l_ // factor
    v = x.data[:, :, : lo * factor].reshape(b_, c_, lo, factor)
    idx = v.argmax(axis=3)
    out = Tensor(v.max(axis=3))

    def backward(g):
        gx = np.zeros_like(x.data)
        gv = gx[:, :, : lo * factor].reshape(b_, c_, lo, factor)
        np.put_along_axis(gv, idx[..., None], g[..., None], axis=3)
        return (gx,)

    return _record(out, (x,), backward)


def avg_pool_rows(x: Tensor, factor: int) -> Tensor:
    """Mean-pool the H axis of (B, C, H, W) by an exact factor."""
    b_, c_, h_, w_ = x.shape
    if h_ % factor:
        raise ShapeError(f"avg_pool_rows: {h_} rows not divisible by {factor}")
    out = Tensor(x.data.reshape(b_, c_, h_ // factor, factor, w_).mean(axis=3))

    def backward(g):
        gx = np.repeat(g / factor, factor, axis=2)
        return (gx,)

    return _record(out, (x,), backward)


# ---------------------------------------------------------------------------
# normalization


def zscore_last(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Zero-mean unit-variance along the last axis (variance floor eps)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    d = x.data - mu
    var = (d * d).mean(axis=-1, keepdims=True)
    s = np.sqrt(var + eps)
    y = d / s
    out = Tensor(y)

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return ((g - gm - y * gy) / s,)

    return _record(out, (x,), backward)


def affine_last(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """x * gain + bias with gain and bias shaped (D,) over the last axis."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("affine_last: gain/bias must match last axis")
    out = Tensor(x.data * gain.data + bias.data)
    lead = tuple(range(x.data.ndim - 1))

    def backward(g):
        return (g * gain.data, (g * x.data).sum(axis=lead), g.sum(axis=lead))

    return _record(out, (x, gain, bias), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return affine_last(zscore_last(x), gain, bias)


# ---------------------------------------------------------------------------
# attention


def attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, heads: int) -> Tensor:
    """Scaled dot-product multi-head self-attention over (B, L, D).

    Softmax runs over the key axis. No output projection; the caller adds
    any residual connection.
    """
    if x.data.ndim != 3:
        raise ShapeError("attention expects x (B, L, D)")
    b_, l_, d_ = x.shape
    if d_ % heads:
        raise ConfigError(f"model width {d_} not divisible by {heads} heads")
    for w in (wq, wk, wv):
        if w.shape != (d_, d_):
            raise ShapeError(f"attention projection must be ({d_}, {d_})")
    dh = d_ // heads

    def split(t: Tensor) -> Tensor:
        return permute(reshape(t, (b_, l_, heads, dh)), (0, 2, 1, 3))

    q = split(matmul(x, wq))
    k = split(matmul(x, wk))
    v = split(matmul(x, wv))
    scores = mul_scalar(matmul(q, permute(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    weights = softmax(scores)
    ctx = matmul(weights, v)
    return reshape(permute(ctx, (0, 2, 1, 3)), (b_, l_, d_))


# ---------------------------------------------------------------------------
# signal ops


def bandpass_time(x: Tensor, fs: float, lo: float, hi: float) -> Tensor:
    """Zero out spectral content outside [lo, hi] Hz of a 1-D signal.

    The operator is a symmetric linear map, so the backward pass applies
    the same filter to the incoming gradient.
    """
    if x.data.ndim != 1:
        raise ShapeError("bandpass_time expects a 1-D signal")
    if not (0.0 < lo < hi < fs / 2.0):
        raise ConfigError(f"band ({lo}, {hi}) outside (0, fs/2) for fs={fs}")
    n = x.shape[0]
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    mask = (freqs >= lo) & (freqs <= hi)

    def apply(v: np.ndarray) -> np.ndarray:
        return np.fft.irfft(np.fft.rfft(v) * mask, n=n)

    out = Tensor(apply(x.data))
    return _record(out, (x,), lambda g: (apply(g),))


def extract_segments(x: Tensor, bounds: Sequence[tuple[int, int]], out_len: int = 90) -> Tensor:
    """Cut [start, end] spans of a 1-D signal and linearly resample each.

    Each span includes both endpoints; output shape is (len(bounds), out_len).
    """
    if x.data.ndim != 1:
        raise ShapeError("extract_segments expects a 1-D signal")
    n = x.shape[0]
    rows = []
    i0s, fracs = [], []
    for start, end in bounds:
        if not (0 <= start < end < n):
            raise ContractError(f"segment bounds ({start}, {end}) outside signal")
        pos = np.linspace(start, end, out_len)
        i0 = np.minimum(pos.astype(np.int64), n - 2)
        frac = pos - i0
        rows.append(x.data[i0] * (1.0 - frac) + x.data[i0 + 1] * frac)
        i0s.append(i0)
        fracs.append(frac)
    out = Tensor(np.stack(rows))

    def backward(g):
        gx = np.zeros_like(x.data)
        for r, (i0, frac) in enumerate(zip(i0s, fracs)):
            np.add.at(gx, i0, g[r] * (1.0 - frac))
            np.add.at(gx, i0 + 1, g[r] * frac)
        return (gx,)

    return _record(out, (x,), backward)
