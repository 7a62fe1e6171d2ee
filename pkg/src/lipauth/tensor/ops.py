"""Differentiable forward operations.

Every function takes and returns :class:`Tensor`. When a tape is active and
an input requires gradients, the op is recorded together with a closure that
maps the upstream gradient to one gradient per input (``None`` where an input
does not need one). Layout is row-major ``[N,] T, H, W, C``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import DimensionError, UsageError
from .tensor import Tensor, record

_AXES = ("T", "H", "W")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, a.dtype if isinstance(a, Tensor) else None)
    out = a.data + b.data
    return record("add", (a, b), out,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, a.dtype if isinstance(a, Tensor) else None)
    out = a.data - b.data
    return record("sub", (a, b), out,
                  lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, a.dtype if isinstance(a, Tensor) else None)
    out = a.data * b.data
    return record("mul", (a, b), out,
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return record("scale", (x,), x.data * c, lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # np.maximum (unlike a masked select) lets NaN through, so divergence stays visible
    return record("relu", (x,), np.maximum(x.data, x.dtype.type(0)),
                  lambda g: (g * mask,))


def reduce_sum(x: Tensor) -> Tensor:
    return record("sum", (x,), np.asarray(x.data.sum(), dtype=x.dtype),
                  lambda g: (np.broadcast_to(g, x.shape).copy(),))


def reduce_mean(x: Tensor) -> Tensor:
    n = x.size
    return record("mean", (x,), np.asarray(x.data.mean(), dtype=x.dtype),
                  lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


# -- structural ------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return record("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return record("concat", tensors, out, bw)


def temporal_subsample(x: Tensor, step: int, offset: int = 0) -> Tensor:
    """Keep every ``step``-th frame (axis -4 of ``[N,] T, H, W, C``)."""
    if step < 1:
        raise UsageError("temporal step must be >= 1")
    idx = (slice(None),) * (x.ndim - 4) + (slice(offset, None, step),)
    out = x.data[idx].copy()

    def bw(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return record("temporal_subsample", (x,), out, bw)


def take(x: Tensor, index) -> Tensor:
    """Gather rows ``x[index]`` along axis 0."""
    index = np.asarray(index, dtype=np.intp)
    out = x.data[index]

    def bw(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return record("take", (x,), out, bw)


# -- network layers -------------------------------------------------------

def _triple(v) -> tuple:
    if np.isscalar(v):
        return (int(v),) * 3
    v = tuple(int(i) for i in v)
    if len(v) != 3:
        raise UsageError(f"expected 3 values, got {v}")
    return v


def conv_output_shape(in_dims, kernel, stride, padding) -> tuple:
    """floor((n + 2p - k) / s) + 1 per spatial-temporal axis."""
    out = []
    for axis, n, k, s, p in zip(_AXES, in_dims, kernel, stride, padding):
        if s < 1:
            raise DimensionError(f"stride on axis {axis} must be >= 1, got {s}")
        if p < 0:
            raise DimensionError(f"padding on axis {axis} must be >= 0, got {p}")
        if k > n + 2 * p:
            raise DimensionError(
                f"kernel size {k} exceeds padded input size {n + 2 * p} on axis {axis}")
        out.append((n + 2 * p - k) // s + 1)
    return tuple(out)


def _windows(xp: np.ndarray, kernel, stride, out_dims) -> np.ndarray:
    n, _, _, _, c = xp.shape
    s_n, s_t, s_h, s_w, s_c = xp.strides
    return as_strided(
        xp,
        shape=(n, *out_dims, *kernel, c),
        strides=(s_n, s_t * stride[0], s_h * stride[1], s_w * stride[2], s_t, s_h, s_w, s_c),
        writeable=False,
    )


def conv3d(x: Tensor, kernel: Tensor, stride=(1, 1, 1), padding=(0, 0, 0)) -> Tensor:
    """3-D convolution (cross-correlation), no bias.

    ``x`` is ``[T, H, W, Cin]`` or ``[N, T, H, W, Cin]``; ``kernel`` is
    ``[kT, kH, kW, Cin, Cout]``.
    """
    stride, padding = _triple(stride), _triple(padding)
    if kernel.ndim != 5:
        raise DimensionError(f"kernel must be 5-D [kT,kH,kW,Cin,Cout], got shape {kernel.shape}")
    batched = x.ndim == 5
    if x.ndim not in (4, 5):
        raise DimensionError(f"input must be [T,H,W,C] or [N,T,H,W,C], got shape {x.shape}")
    xd = x.data if batched else x.data[None]
    ksize = kernel.shape[:3]
    cin, cout = kernel.shape[3], kernel.shape[4]
    if xd.shape[-1] != cin:
        raise DimensionError(
            f"channel axis C mismatch: input has {xd.shape[-1]}, kernel expects {cin}")
    out_dims = conv_output_shape(xd.shape[1:4], ksize, stride, padding)

    pt, ph, pw = padding
    xp = xd
    if any(padding):
        xp = np.pad(xd, ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)))
    k = int(np.prod(ksize)) * cin
    cols = _windows(xp, ksize, stride, out_dims).reshape(-1, k)
    w2 = kernel.data.reshape(k, cout)
    out = (cols @ w2).reshape((xd.shape[0], *out_dims, cout))
    if not batched:
        out = out[0]

    def bw(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2.T).reshape((xd.shape[0], *out_dims, *ksize, cin))
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            (to, ho, wo), (st, sh, sw) = out_dims, stride
            for i in range(ksize[0]):
                for j in range(ksize[1]):
                    for l in range(ksize[2]):
                        gxp[:, i:i + st * to:st, j:j + sh * ho:sh, l:l + sw * wo:sw] += \
                            gcols[:, :, :, :, i, j, l]
            gx = gxp[:, pt:pt + xd.shape[1], ph:ph + xd.shape[2], pw:pw + xd.shape[3]]
            gx = gx if batched else gx[0]
        return gx, gw

    return record("conv3d", (x, kernel), out, bw)


def channel_affine(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """y[..., c] = scale[c] * x[..., c] + shift[c]."""
    c = x.shape[-1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise DimensionError(
            f"channel axis mismatch: input has {c} channels, "
            f"scale {scale.shape}, shift {shift.shape}")
    out = x.data * scale.data + shift.data
    red = tuple(range(x.ndim - 1))

    def bw(g):
        return (g * scale.data if x.requires_grad else None,
                (g * x.data).sum(axis=red),
                g.sum(axis=red))

    return record("channel_affine", (x, scale, shift), out, bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over T, H, W: ``[N,]T,H,W,C -> [N,]C``."""
    if x.ndim not in (4, 5):
        raise DimensionError(f"expected [T,H,W,C] or [N,T,H,W,C], got shape {x.shape}")
    axes = (-4, -3, -2)
    count = x.shape[-4] * x.shape[-3] * x.shape[-2]
    out = x.data.mean(axis=axes)

    def bw(g):
        g = np.expand_dims(g, axis=axes) / x.dtype.type(count)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record("global_avg_pool", (x,), out, bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """y = x W + b for ``x`` of shape ``[Din]`` or ``[N, Din]``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"inner dimension mismatch: input {x.shape} vs weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"bias shape {bias.shape} != ({weight.shape[1]},)")
    out = x.data @ weight.data + bias.data

    def bw(g):
        x2 = x.data.reshape(-1, weight.shape[0])
        g2 = g.reshape(-1, weight.shape[1])
        return (g @ weight.data.T if x.requires_grad else None, x2.T @ g2, g2.sum(axis=0))

    return record("linear", (x, weight, bias), out, bw)


# -- embeddings and distances -----------------------------------------------

def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row (last axis) to unit L2 norm."""
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    norm = np.maximum(norm, x.dtype.type(eps))
    y = x.data / norm

    def bw(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return record("l2_normalize", (x,), y, bw)


def rowdot(a: Tensor, b: Tensor) -> Tensor:
    """Dot product along the last axis."""
    if a.shape != b.shape:
        raise DimensionError(f"rowdot shapes differ: {a.shape} vs {b.shape}")
    out = (a.data * b.data).sum(axis=-1)

    def bw(g):
        g = g[..., None]
        return g * b.data, g * a.data

    return record("rowdot", (a, b), out, bw)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    for t in (a, b):
        if np.any((t.data * t.data).sum(axis=-1) == 0):
            raise UsageError("cosine of a zero vector is undefined")
    return rowdot(l2_normalize(a), l2_normalize(b))


def cosine_distance(a: Tensor, b: Tensor) -> Tensor:
    """1 - cos(a, b), in [0, 2]."""
    sim = cosine_similarity(a, b)
    return record("one_minus", (sim,), 1 - sim.data, lambda g: (-g,))
