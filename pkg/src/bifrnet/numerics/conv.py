"""Spatial ops: 2-D cross-correlation and max pooling.

Both accept a single C×H×W image or an N×C×H×W batch. Convolution is
im2col + one GEMM; the column buffer is kept for the backward pass.
"""

from __future__ import annotations

import numpy as np

from .tensor import DimensionError, GeometryError, Tensor, _make, as_tensor


def conv_output_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    span = size + 2 * padding - dilation * (k - 1) - 1
    if span < 0 or span % stride:
        raise GeometryError(
            f"size {size} with k={k}, stride={stride}, padding={padding}, dilation={dilation} "
            "does not tile to an integral output"
        )
    return span // stride + 1


def _im2col(xp: np.ndarray, k: int, ho: int, wo: int, stride: int, dilation: int) -> np.ndarray:
    # xp: N×H×W×C (padded, channels-last) -> (N*ho*wo, k*k*C), tap-major
    n, _, _, c = xp.shape
    cols = np.empty((n, ho, wo, k * k, c), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            r0, c0 = i * dilation, j * dilation
            cols[:, :, :, i * k + j, :] = xp[:, r0 : r0 + stride * ho : stride, c0 : c0 + stride * wo : stride, :]
    return cols.reshape(n * ho * wo, k * k * c)


def _col2im(gcols: np.ndarray, shape: tuple, k: int, ho: int, wo: int, stride: int, dilation: int) -> np.ndarray:
    n, hp, wp, c = shape
    g = gcols.reshape(n, ho, wo, k * k, c)
    out = np.zeros(shape, dtype=gcols.dtype)
    for i in range(k):
        for j in range(k):
            r0, c0 = i * dilation, j * dilation
            out[:, r0 : r0 + stride * ho : stride, c0 : c0 + stride * wo : stride, :] += g[:, :, :, i * k + j, :]
    return out


def conv2d(x, kernel, bias, stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """Cross-correlate ``x`` with ``kernel`` (C_out×C_in×k×k), add ``bias``."""
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    single = x.ndim == 3
    if x.ndim not in (3, 4) or kernel.ndim != 4:
        raise DimensionError(f"conv2d: input {x.shape}, kernel {kernel.shape}")
    xd = x.data[None] if single else x.data
    n, c_in, h, w = xd.shape
    c_out, kc, k, k2 = kernel.shape
    if kc != c_in or k != k2 or bias.shape != (c_out,):
        raise DimensionError(f"conv2d: input {x.shape}, kernel {kernel.shape}, bias {bias.shape}")
    if k % 2 == 0 or dilation < 1 or stride < 1:
        raise GeometryError(f"conv2d: need odd k and dilation, stride >= 1 (k={k}, d={dilation}, s={stride})")
    ho = conv_output_size(h, k, stride, padding, dilation)
    wo = conv_output_size(w, k, stride, padding, dilation)

    xp = np.transpose(xd, (0, 2, 3, 1))
    if padding:
        xp = np.pad(xp, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    cols = _im2col(xp, k, ho, wo, stride, dilation)
    wmat = np.transpose(kernel.data, (2, 3, 1, 0)).reshape(k * k * c_in, c_out)
    out = cols @ wmat + bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2))
    if single:
        out = out[0]
    padded_shape = xp.shape

    def _bw(g):
        g4 = g[None] if single else g
        gmat = np.transpose(g4, (0, 2, 3, 1)).reshape(n * ho * wo, c_out)
        gk = gb = gx = None
        if kernel.requires_grad:
            gk = (cols.T @ gmat).reshape(k, k, c_in, c_out).transpose(3, 2, 0, 1)
        if bias.requires_grad:
            gb = gmat.sum(axis=0)
        if x.requires_grad:
            gp = _col2im(gmat @ wmat.T, padded_shape, k, ho, wo, stride, dilation)
            if padding:
                gp = gp[:, padding:-padding, padding:-padding, :]
            gx = np.ascontiguousarray(gp.transpose(0, 3, 1, 2))
            if single:
                gx = gx[0]
        return ((x, gx), (kernel, gk), (bias, gb))

    return _make(out, (x, kernel, bias), _bw, "conv2d")


def maxpool2d(x, window: int = 2, stride: int | None = None) -> Tensor:
    """Non-overlapping max pool; ties send the gradient to the first
    maximum in row-major order within the window."""
    x = as_tensor(x)
    stride = window if stride is None else stride
    if stride != window:
        raise GeometryError("maxpool2d supports window == stride only")
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise DimensionError(f"maxpool2d: input {x.shape}")
    n, c, h, w = xd.shape
    if h % window or w % window:
        raise GeometryError(f"maxpool2d: {h}×{w} not divisible by {window}")
    ho, wo = h // window, w // window
    blocks = xd.reshape(n, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, window * window)
    arg = blocks.argmax(axis=-1)  # argmax returns the first maximal index
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    if single:
        out = out[0]

    def _bw(g):
        g4 = g[None] if single else g
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g4[..., None], axis=-1)
        gx = gb.reshape(n, c, ho, wo, window, window).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return ((x, gx[0] if single else gx),)

    return _make(np.ascontiguousarray(out), (x,), _bw, "maxpool2d")
