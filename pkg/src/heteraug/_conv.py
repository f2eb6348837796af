"""NHWC convolution on shifted slices (BLAS matmuls), with gradients.

Weights are ``(kh, kw, cin, cout)``. Only odd, square kernels with stride 1
and "same" output size are used in this package.
"""
import numpy as np


def pad(x, p, mode):
    if p == 0:
        return x
    width = ((0, 0), (p, p), (p, p), (0, 0))
    if mode == "zero":
        return np.pad(x, width)
    if mode == "reflect":
        # d c b a | a b c d, matching scipy.ndimage mode="reflect"
        return np.pad(x, width, mode="symmetric")
    raise ValueError(f"unknown padding mode {mode!r}")


def conv2d_valid(xp, w):
    kh, kw, cin, cout = w.shape
    n, hp, wp, _ = xp.shape
    h, wd = hp - kh + 1, wp - kw + 1
    out = np.zeros((n, h, wd, cout), dtype=np.result_type(xp, w))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + h, j:j + wd, :] @ w[i, j]
    return out


def conv2d(x, w, b=None, padding="zero"):
    """Same-size convolution (cross-correlation) of a batch ``x``."""
    out = conv2d_valid(pad(x, w.shape[0] // 2, padding), w)
    if b is not None:
        out += b
    return out


def conv2d_grad_weight(x, dout, kh, kw, padding="zero"):
    xp = pad(x, kh // 2, padding)
    n, h, wd, cout = dout.shape
    cin = x.shape[3]
    gw = np.empty((kh, kw, cin, cout), dtype=np.result_type(x, dout))
    d2 = dout.reshape(-1, cout)
    for i in range(kh):
        for j in range(kw):
            gw[i, j] = xp[:, i:i + h, j:j + wd, :].reshape(-1, cin).T @ d2
    return gw


def conv2d_grad_input(dout, w):
    """Gradient w.r.t. the input of a zero-padded same convolution."""
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = dout.shape
    gxp = np.zeros((n, h + kh - 1, wd + kw - 1, cin), dtype=np.result_type(dout, w))
    for i in range(kh):
        for j in range(kw):
            gxp[:, i:i + h, j:j + wd, :] += dout @ w[i, j].T
    p = kh // 2
    return gxp[:, p:p + h, p:p + wd, :] if p else gxp
