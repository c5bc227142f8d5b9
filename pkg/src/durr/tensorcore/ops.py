"""Differentiable ops used by the restoration and policy units.

Images use the batch x channels x height x width shape convention. Convolution
outputs are channels-last in memory (NCHW-shaped transposed views), which keeps
every GEMM pixel-major; elementwise ops preserve that memory order. Input
gradients are computed as correlations with the flipped kernel, so no
scatter-add is needed anywhere.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor, TensorError, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return record(
        out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))
    )


def square(a: Tensor) -> Tensor:
    return record(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return record(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return record(t, (a,), lambda g: (g * (1.0 - t * t),))


def sum_all(a: Tensor) -> Tensor:
    return record(np.sum(a.data).reshape(()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return record(
        np.mean(a.data).reshape(()).astype(a.dtype),
        (a,),
        lambda g: (np.full(a.shape, g / n, dtype=a.dtype),),
    )


def mse(a: Tensor, b) -> Tensor:
    """Mean squared error over all elements."""
    return mean_all(square(sub(a, b)))


# ---------------------------------------------------------------- structure

def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return parts

    return record(out, tensors, bw)


def take(a: Tensor, lo: int, hi: int, axis: int = 1) -> Tensor:
    """Slice ``[lo:hi]`` along ``axis``."""
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(lo, hi)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return record(a.data[idx], (a,), bw)


# ---------------------------------------------------------------- activations

def activation(x: Tensor, kind: str = "relu", slope: Tensor | None = None) -> Tensor:
    """``max(x, 0) + slope * min(x, 0)`` with one slope per channel (axis 1)."""
    if kind == "relu":
        if slope is not None:
            raise TensorError("relu takes no slope; use kind='prelu'")
        mask = x.data > 0
        return record(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))
    if kind != "prelu":
        raise TensorError(f"unknown activation {kind!r}")
    if slope is None:
        raise TensorError("prelu needs a slope tensor")
    if x.ndim < 2 or slope.data.size != x.shape[1]:
        raise TensorError(f"prelu slope has {slope.data.size} values for {x.shape[1] if x.ndim > 1 else '?'} channels")
    bshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    a = slope.data.reshape(bshape)
    neg = np.minimum(x.data, 0)
    out = np.maximum(x.data, 0) + a * neg
    mask = x.data > 0

    def bw(g):
        gx = np.where(mask, g, g * a)
        ga = (g * neg).sum(axis=tuple(i for i in range(x.ndim) if i != 1)).reshape(slope.shape)
        return gx, ga

    return record(out, (x, slope), bw)


# ---------------------------------------------------------------- pooling / dense

def pool_gap(x: Tensor) -> Tensor:
    """Global average pooling: (N, C, H, W) -> (N, C)."""
    if x.ndim != 4:
        raise TensorError(f"pool_gap expects rank 4, got shape {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def bw(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).astype(x.dtype),)

    return record(out, (x,), bw)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with weight of shape (out, in)."""
    if x.ndim != 2 or weight.ndim != 2:
        raise TensorError(f"dense expects rank-2 input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise TensorError(f"dense: input width {x.shape[1]} != weight in-dim {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise TensorError(f"dense: bias shape {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T + bias.data
    return record(out, (x, weight, bias), lambda g: (g @ weight.data, g.T @ x.data, g.sum(axis=0)))


def lstm_step(x: Tensor, h: Tensor, c: Tensor, weight: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM cell update.

    ``weight`` is (4*hidden, in + hidden) with gate blocks ordered input,
    forget, candidate, output; ``bias`` is (4*hidden,).
    """
    hidden = h.shape[1]
    if weight.shape != (4 * hidden, x.shape[1] + hidden) or c.shape != h.shape:
        raise TensorError(
            f"lstm width mismatch: x {x.shape}, h {h.shape}, c {c.shape}, weight {weight.shape}"
        )
    z = dense(concat([x, h], axis=1), weight, bias)
    i = sigmoid(take(z, 0, hidden))
    f = sigmoid(take(z, hidden, 2 * hidden))
    g = tanh(take(z, 2 * hidden, 3 * hidden))
    o = sigmoid(take(z, 3 * hidden, 4 * hidden))
    c_next = add(mul(f, c), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return h_next, c_next


# ---------------------------------------------------------------- convolution

def conv_out_size(size: int, k: int, stride: int, dilation: int, padding: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _nhwc(x: np.ndarray) -> np.ndarray:
    """Channels-last copy of an NCHW array (free when the memory already is channels-last)."""
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def _gather(xp: np.ndarray, k: int, stride: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    """Patch matrix (N*ho*wo, k*k*C) from a padded channels-last array."""
    xp = np.ascontiguousarray(xp)
    n, hp, wp, c = xp.shape
    # strides from the shape: numpy may report arbitrary strides on length-1 axes
    sc = xp.itemsize
    sw, sh, sn = c * sc, wp * c * sc, hp * wp * c * sc
    if dilation == 1:
        # kernel columns and channels form one contiguous run
        view = as_strided(xp, (n, ho, wo, k, k * c), (sn, sh * stride, sw * stride, sh, sc), writeable=False)
    else:
        view = as_strided(xp, (n, ho, wo, k, k, c),
                          (sn, sh * stride, sw * stride, sh * dilation, sw * dilation, sc), writeable=False)
    return view.reshape(n * ho * wo, k * k * c)


def _backproject(g: np.ndarray, w2: np.ndarray, k: int, stride: int, dilation: int, padded_hw) -> np.ndarray:
    """Input-side adjoint of a convolution, for a channels-last ``g`` of shape (N, ho, wo, O).

    ``w2`` is the weight as an (O, k*k*C) matrix. The adjoint is itself a
    correlation: upsample ``g`` by ``stride`` with zeros, pad by the dilated
    kernel extent and apply the spatially flipped kernel with channels swapped.
    Returns the gradient w.r.t. the padded input, shape (N, hp, wp, C).
    """
    n, ho, wo, o = g.shape
    hp, wp = padded_hw
    c = w2.shape[1] // (k * k)
    ext = dilation * (k - 1)
    if stride > 1:
        up = np.zeros((n, stride * (ho - 1) + 1, stride * (wo - 1) + 1, o), dtype=g.dtype)
        up[:, ::stride, ::stride, :] = g
        g = up
    gp = np.pad(g, ((0, 0), (ext, ext), (ext, ext), (0, 0)))
    hu, wu = g.shape[1] + ext, g.shape[2] + ext
    flipped = w2.reshape(o, k, k, c)[:, ::-1, ::-1, :].transpose(1, 2, 0, 3).reshape(k * k * o, c)
    out = (_gather(gp, k, 1, dilation, hu, wu) @ flipped).reshape(n, hu, wu, c)
    if (hu, wu) != (hp, wp):
        # trailing rows/cols the forward pass never read
        out = np.pad(out, ((0, 0), (0, hp - hu), (0, wp - wu), (0, 0)))
    return out


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    """Zero-pad the two spatial axes of a channels-last array."""
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))


def _unpad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return x[:, p:-p, p:-p, :]


def _as_nchw(y: np.ndarray) -> np.ndarray:
    """NCHW-shaped view of channels-last memory."""
    return y.transpose(0, 3, 1, 2)


def _check_conv(x: Tensor, weight: Tensor, bias: Tensor | None, in_axis: int, out_axis: int, what: str):
    if x.ndim != 4:
        raise TensorError(f"{what}: input must be rank 4 (N, C, H, W), got shape {x.shape}")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise TensorError(f"{what}: weight must be (.., .., k, k), got shape {weight.shape}")
    if x.shape[1] != weight.shape[in_axis]:
        raise TensorError(
            f"{what}: input channels {x.shape[1]} != weight dim {in_axis} ({weight.shape[in_axis]})"
        )
    if bias is not None and bias.shape != (weight.shape[out_axis],):
        raise TensorError(f"{what}: bias shape {bias.shape} != ({weight.shape[out_axis]},)")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, dilation: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding; weight is (out, in, k, k)."""
    _check_conv(x, weight, bias, 1, 0, "conv2d")
    n, c, h, w = x.shape
    o, _, k, _ = weight.shape
    ho = conv_out_size(h, k, stride, dilation, padding)
    wo = conv_out_size(w, k, stride, dilation, padding)
    if ho < 1 or wo < 1:
        raise TensorError(f"conv2d: input {h}x{w} too small for k={k}, dilation={dilation}, padding={padding}")
    xp = _pad(_nhwc(x.data), padding)
    w2 = weight.data.transpose(0, 2, 3, 1).reshape(o, -1)
    cols = _gather(xp, k, stride, dilation, ho, wo)
    y = cols @ w2.T
    if bias is not None:
        y += bias.data
    out = _as_nchw(y.reshape(n, ho, wo, o))

    def bw(g):
        g2 = _nhwc(g).reshape(-1, o)
        gx = _as_nchw(_unpad(_backproject(g2.reshape(n, ho, wo, o), w2, k, stride, dilation, xp.shape[1:3]),
                             padding))
        gw = (cols.T @ g2).T
        gw = gw.reshape(o, k, k, c).transpose(0, 3, 1, 2)
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record(out, parents, bw)


def conv_transpose_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + k


def conv2d_transpose(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2,
                     padding: int = 0) -> Tensor:
    """Transposed convolution (adjoint of :func:`conv2d`); weight is (in, out, k, k)."""
    _check_conv(x, weight, bias, 0, 1, "conv2d_transpose")
    n, cin, h, w = x.shape
    _, cout, k, _ = weight.shape
    ho = conv_transpose_out_size(h, k, stride, padding)
    wo = conv_transpose_out_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise TensorError(f"conv2d_transpose: output would be {ho}x{wo}")
    w2 = weight.data.transpose(0, 2, 3, 1).reshape(cin, -1)
    xh = _nhwc(x.data)
    x2 = xh.reshape(-1, cin)
    full = _backproject(xh, w2, k, stride, 1, (ho + 2 * padding, wo + 2 * padding))
    out = np.ascontiguousarray(_unpad(full, padding))
    if bias is not None:
        out += bias.data

    def bw(g):
        cols = _gather(_pad(_nhwc(g), padding), k, stride, 1, h, w)
        gx = _as_nchw((cols @ w2.T).reshape(n, h, w, cin))
        gw = (x2.T @ cols).reshape(cin, k, k, cout).transpose(0, 3, 1, 2)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record(_as_nchw(out), parents, bw)
