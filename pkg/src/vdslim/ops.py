"""Differentiable operations over ``Tensor``.

The op set is deliberately closed: exactly what the cascade denoiser and its
losses require (conv2d, pixel_shuffle, relu, add, concat, scale, sum,
reflect_pad, crop, charbonnier). Convolution products are accumulated in
float64 and cast back to the working dtype, which keeps results deterministic
and makes float32*float32 products exact during accumulation.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, active_tape


def _maybe_record(out: Tensor, inputs, backward_fn):
    tape = active_tape()
    needs = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    if tape is not None and needs:
        out.requires_grad = True
        tape.record(out, inputs, backward_fn)
    return out


def _im2col(xp: np.ndarray, k: int, stride: int):
    # xp: padded (N, C, Hp, Wp) -> cols (N, C*k*k, OH*OW) in float64
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    n, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, oh * ow)
    return np.ascontiguousarray(cols, dtype=np.float64), oh, ow


def _col2im(cols: np.ndarray, n, c, k, hp, wp, oh, ow, stride):
    # cols: (N, C*k*k, OH*OW) float64 -> scatter-add to (N, C, Hp, Wp)
    buf = np.zeros((n, c, hp, wp), dtype=np.float64)
    cols = cols.reshape(n, c, k, k, oh, ow)
    for ki in range(k):
        for kj in range(k):
            buf[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += cols[:, :, ki, kj]
    return buf


def conv2d(x, w, b, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with OIkk weights plus bias.

    Output spatial size is floor((H + 2*padding - k)/stride) + 1.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 4:
        raise ValueError(f"conv2d: input must be NCHW, got shape {tuple(x.shape)}")
    if w.data.ndim != 4:
        raise ValueError(f"conv2d: weight must be OIkk, got shape {tuple(w.shape)}")
    o, i, kh, kw = w.shape
    if kh != kw:
        raise ValueError(f"conv2d: kernel must be square, got {kh}x{kw}")
    n, c, h, wd = x.shape
    if c != i:
        raise ValueError(
            f"conv2d: input has {c} channels but weight expects {i} "
            f"(input {tuple(x.shape)}, weight {tuple(w.shape)})"
        )
    if b.data.shape != (o,):
        raise ValueError(
            f"conv2d: bias shape {tuple(b.shape)} does not match {o} output channels"
        )
    if not (isinstance(stride, (int, np.integer)) and stride >= 1):
        raise ValueError(f"conv2d: stride must be a positive int, got {stride!r}")
    if not (isinstance(padding, (int, np.integer)) and padding >= 0):
        raise ValueError(f"conv2d: padding must be a non-negative int, got {padding!r}")
    if h + 2 * padding < kh or wd + 2 * padding < kh:
        raise ValueError(
            f"conv2d: kernel {kh} larger than padded input {h + 2 * padding}x{wd + 2 * padding}"
        )

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols, oh, ow = _im2col(xp, kh, stride)
    w2 = w.data.reshape(o, -1).astype(np.float64)
    y = np.matmul(w2[None, :, :], cols)
    y += b.data.astype(np.float64)[None, :, None]
    out = Tensor(y.reshape(n, o, oh, ow).astype(x.data.dtype))

    hp, wp = xp.shape[2], xp.shape[3]
    need_x, need_w, need_b = x.requires_grad, w.requires_grad, b.requires_grad
    x_dtype, w_dtype, b_dtype = x.data.dtype, w.data.dtype, b.data.dtype

    def backward(g):
        g64 = g.reshape(n, o, oh * ow).astype(np.float64)
        gx = gw = gb = None
        if need_w or need_x:
            cols_b, _, _ = _im2col(xp, kh, stride)
        if need_w:
            gw = np.matmul(g64, cols_b.transpose(0, 2, 1)).sum(axis=0)
            gw = gw.reshape(o, i, kh, kw).astype(w_dtype)
        if need_b:
            gb = g64.sum(axis=(0, 2)).astype(b_dtype)
        if need_x:
            gcols = np.matmul(w2.T[None, :, :], g64)
            gxp = _col2im(gcols, n, c, kh, hp, wp, oh, ow, stride)
            if padding:
                gxp = gxp[:, :, padding:padding + h, padding:padding + wd]
            gx = gxp.astype(x_dtype)
        return gx, gw, gb

    return _maybe_record(out, (x, w, b), backward)


def pixel_shuffle(x, r: int) -> Tensor:
    """Rearrange (N, r*r*C, H, W) into (N, C, r*H, r*W).

    output(n, c, r*h + i, r*w + j) = input(n, c*r*r + i*r + j, h, w).
    """
    x = as_tensor(x)
    n, c, h, w = x.shape
    if c % (r * r) != 0:
        raise ValueError(f"pixel_shuffle: {c} channels not divisible by r^2 = {r * r}")
    c2 = c // (r * r)
    out_data = (
        x.data.reshape(n, c2, r, r, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, c2, h * r, w * r)
    )
    out = Tensor(np.ascontiguousarray(out_data))

    def backward(g):
        gi = (
            g.reshape(n, c2, h, r, w, r)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, c, h, w)
        )
        return (np.ascontiguousarray(gi),)

    return _maybe_record(out, (x,), backward)


def inverse_pixel_shuffle(x, r: int) -> Tensor:
    """Exact inverse of :func:`pixel_shuffle` for the same r."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % r != 0 or w % r != 0:
        raise ValueError(f"inverse_pixel_shuffle: spatial {h}x{w} not divisible by r = {r}")
    h2, w2 = h // r, w // r
    out_data = (
        x.data.reshape(n, c, h2, r, w2, r)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, c * r * r, h2, w2)
    )
    out = Tensor(np.ascontiguousarray(out_data))

    def backward(g):
        gi = (
            g.reshape(n, c, r, r, h2, w2)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, c, h, w)
        )
        return (np.ascontiguousarray(gi),)

    return _maybe_record(out, (x,), backward)


def relu(x) -> Tensor:
    """Elementwise max(x, 0); subgradient at exactly zero is 0."""
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0))
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _maybe_record(out, (x,), backward)


def add(a, b) -> Tensor:
    """Elementwise addition of equal-shape tensors (no broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    out = Tensor(a.data + b.data)

    def backward(g):
        return g, g

    return _maybe_record(out, (a, b), backward)


def concat(tensors, axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channel axis by default)."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat: need at least one tensor")
    ref = ts[0].shape
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(
            i != axis and t.shape[i] != ref[i] for i in range(len(ref))
        ):
            raise ValueError(
                f"concat: incompatible shapes {tuple(ref)} vs {tuple(t.shape)} on axis {axis}"
            )
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    offsets = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return _maybe_record(out, tuple(ts), backward)


def scale(x, c: float) -> Tensor:
    """Multiply by a python-float constant."""
    x = as_tensor(x)
    c = float(c)
    out = Tensor(x.data * c)

    def backward(g):
        return (g * c,)

    return _maybe_record(out, (x,), backward)


def tsum(x) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    x = as_tensor(x)
    val = x.data.sum(dtype=np.float64)
    out = Tensor(np.asarray(val, dtype=x.data.dtype))

    def backward(g):
        return (np.broadcast_to(g, x.shape) * np.ones_like(x.data),)

    return _maybe_record(out, (x,), backward)


def reflect_pad(x, pads) -> Tensor:
    """Reflect-pad H and W by (top, bottom, left, right)."""
    x = as_tensor(x)
    t, b, l, r = pads
    if min(t, b, l, r) < 0:
        raise ValueError(f"reflect_pad: negative pad {pads}")
    if t == b == l == r == 0:
        return x
    n, c, h, w = x.shape
    if max(t, b) >= h or max(l, r) >= w:
        raise ValueError(f"reflect_pad: pad {pads} too large for {h}x{w}")
    out = Tensor(np.pad(x.data, ((0, 0), (0, 0), (t, b), (l, r)), mode="reflect"))
    idx = np.pad(np.arange(h * w).reshape(h, w), ((t, b), (l, r)), mode="reflect").ravel()

    def backward(g):
        gx = np.zeros((n, c, h * w), dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), idx), g.reshape(n, c, -1))
        return (gx.reshape(n, c, h, w),)

    return _maybe_record(out, (x,), backward)


def crop(x, top: int, left: int, height: int, width: int) -> Tensor:
    """Take a spatial window; gradient zero-pads back."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if top < 0 or left < 0 or top + height > h or left + width > w:
        raise ValueError(f"crop: window {height}x{width}@({top},{left}) outside {h}x{w}")
    out = Tensor(np.ascontiguousarray(x.data[:, :, top:top + height, left:left + width]))

    def backward(g):
        gx = np.zeros((n, c, h, w), dtype=g.dtype)
        gx[:, :, top:top + height, left:left + width] = g
        return (gx,)

    return _maybe_record(out, (x,), backward)


def charbonnier(x, y, eps: float = 1e-4) -> Tensor:
    """Mean Charbonnier penalty: (1/N) * sum(sqrt((x - y)^2 + eps^2))."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"charbonnier: shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    if not eps > 0:
        raise ValueError(f"charbonnier: eps must be positive, got {eps!r}")
    dtype = x.data.dtype
    e = np.asarray(eps, dtype=dtype)
    d = x.data - y.data
    # hypot, not sqrt(d*d + e*e): it is exact for d == 0, so the loss floor
    # on identical inputs is eps itself rather than eps plus an ulp
    q = np.hypot(d, e)
    val = q.mean(dtype=np.float64)
    out = Tensor(np.asarray(val, dtype=dtype))
    inv_n = 1.0 / q.size

    def backward(g):
        gx = g * (d / q) * inv_n
        return gx.astype(dtype), (-gx).astype(dtype)

    return _maybe_record(out, (x, y), backward)
