"""Pure-numpy reference kernels.

Convolutions go through im2col + BLAS matmul, pooling through stride
tricks. Shapes are fixed by the callers in `boundarylab.kernels`:
everything here assumes float64, C-contiguous, valid (unpadded) windows.
"""

import numpy as np


def _im2col(x, kh, kw):
    # (B, C, H, W) -> (B*OH*OW, C*kh*kw) patch matrix
    b, c, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    sb, sc, sh, sw = x.strides
    cols = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, oh, ow, c, kh, kw),
        strides=(sb, sh, sw, sc, sh, sw),
        writeable=False,
    )
    return cols.reshape(b * oh * ow, c * kh * kw), oh, ow


def conv2d_forward(x, w, bias):
    b = x.shape[0]
    co, ci, kh, kw = w.shape
    cols, oh, ow = _im2col(x, kh, kw)
    y = cols @ w.reshape(co, ci * kh * kw).T + bias
    return np.ascontiguousarray(y.reshape(b, oh, ow, co).transpose(0, 3, 1, 2))


def conv2d_input_grad(gy, w, h, wdt):
    b, co, oh, ow = gy.shape
    _, ci, kh, kw = w.shape
    # (B, OH, OW, C*kh*kw) spread of the upstream through the kernel
    gcols = gy.transpose(0, 2, 3, 1).reshape(-1, co) @ w.reshape(co, ci * kh * kw)
    gcols = gcols.reshape(b, oh, ow, ci, kh, kw)
    gx = np.zeros((b, ci, h, wdt), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i : i + oh, j : j + ow] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return gx


def conv2d_param_grad(x, gy, kh, kw):
    b, co, oh, ow = gy.shape
    ci = x.shape[1]
    cols, _, _ = _im2col(x, kh, kw)
    gyf = gy.transpose(0, 2, 3, 1).reshape(-1, co)
    gw = (gyf.T @ cols).reshape(co, ci, kh, kw)
    gb = gyf.sum(axis=0)
    return gw, gb


def maxpool2_forward(x):
    b, c, h, w = x.shape
    oh, ow = h // 2, w // 2
    win = x[:, :, : 2 * oh, : 2 * ow].reshape(b, c, oh, 2, ow, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, 4)
    # row-major scan order; argmax takes the first maximum, which is the
    # deterministic tie-break the backward pass relies on
    idx = win.argmax(axis=4).astype(np.uint8)
    y = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=4)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2_backward(gy, idx, h, w):
    b, c, oh, ow = gy.shape
    gwin = np.zeros((b, c, oh, ow, 4), dtype=np.float64)
    np.put_along_axis(gwin, idx[..., None].astype(np.intp), gy[..., None], axis=4)
    gx = np.zeros((b, c, h, w), dtype=np.float64)
    gwin = gwin.reshape(b, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    gx[:, :, : 2 * oh, : 2 * ow] = gwin.reshape(b, c, 2 * oh, 2 * ow)
    return gx
