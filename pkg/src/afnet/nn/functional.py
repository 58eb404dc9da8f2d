"""Forward/backward pairs for every layer kind the network uses.

Tensors are plain numpy arrays. Each ``op`` returns ``(y, cache)`` and the
matching ``op_backward(dy, cache)`` returns the input gradient followed by
parameter gradients. Reductions accumulate in float64 and are cast back to
the input dtype.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _same_dtype(ref, arr):
    return arr.astype(ref.dtype, copy=False)


# ---------------------------------------------------------------- conv1d

def conv_out_len(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def _windows(xp, kernel, stride, out_len):
    # (batch, in_ch, out_len, kernel) strided view, no copy
    return sliding_window_view(xp, kernel, axis=2)[:, :, ::stride][:, :, :out_len]


def conv1d(x, w, b, stride: int = 1, padding: int = 0):
    """Cross-correlation of ``x`` (batch, in_ch, len) with ``w`` (out_ch, in_ch, kernel)."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv1d shape mismatch: x {x.shape}, w {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ValueError(f"conv1d bias shape {b.shape} != ({w.shape[0]},)")
    kernel = w.shape[2]
    out_len = conv_out_len(x.shape[2], kernel, stride, padding)
    if out_len < 1:
        raise ValueError("conv1d output would be empty")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    win = _windows(xp, kernel, stride, out_len)
    y = np.einsum("bclk,ock->bol", win, w, optimize=True)
    if b is not None:
        y += b[None, :, None]
    return y, (xp, w, stride, padding, x.shape, b is not None)


def conv1d_backward(dy, cache):
    xp, w, stride, padding, x_shape, has_bias = cache
    kernel = w.shape[2]
    out_len = dy.shape[2]
    win = _windows(xp, kernel, stride, out_len)
    dw = np.einsum("bol,bclk->ock", dy, win, optimize=True)
    dwin = np.einsum("bol,ock->bclk", dy, w, optimize=True)
    dxp = np.zeros_like(xp)
    for k in range(kernel):
        dxp[:, :, k:k + stride * (out_len - 1) + 1:stride] += dwin[..., k]
    dx = dxp[:, :, padding:padding + x_shape[2]] if padding else dxp
    db = dy.sum(axis=(0, 2), dtype=np.float64).astype(dy.dtype) if has_bias else None
    return dx, dw, db


# ------------------------------------------------------------- batchnorm

def _bn_axes(x):
    if x.ndim == 3:
        return (0, 2), (None, slice(None), None)
    if x.ndim == 2:
        return (0,), (None, slice(None))
    raise ValueError(f"batchnorm expects 2-D or 3-D input, got {x.shape}")


def batchnorm(x, gamma, beta, running_mean, running_var, train: bool,
              momentum: float = 0.1, eps: float = 1e-5):
    """Per-channel normalisation; channels are axis 1.

    In train mode batch statistics are used and the running estimates are
    updated in place (running variance uses the unbiased estimate).
    """
    axes, bc = _bn_axes(x)
    if x.shape[1] != gamma.shape[0]:
        raise ValueError(f"batchnorm channel mismatch: {x.shape[1]} != {gamma.shape[0]}")
    if train:
        n = x.size // x.shape[1]
        mean = x.mean(axis=axes, dtype=np.float64)
        var = x.var(axis=axes, dtype=np.float64)
        if n > 1:
            running_mean *= 1 - momentum
            running_mean += momentum * mean
            running_var *= 1 - momentum
            running_var += momentum * var * n / (n - 1)
    else:
        mean = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - _same_dtype(x, mean)[bc]) * _same_dtype(x, inv_std)[bc]
    y = xhat * gamma[bc] + beta[bc]
    return y, (xhat, gamma, inv_std, train, axes, bc)


def batchnorm_backward(dy, cache):
    xhat, gamma, inv_std, train, axes, bc = cache
    dgamma = (dy * xhat).sum(axis=axes, dtype=np.float64)
    dbeta = dy.sum(axis=axes, dtype=np.float64)
    scale = _same_dtype(dy, gamma.astype(np.float64) * inv_std)[bc]
    if train:
        n = dy.size // dy.shape[1]
        dx = scale / n * (n * dy - _same_dtype(dy, dbeta)[bc] - xhat * _same_dtype(dy, dgamma)[bc])
    else:
        dx = dy * scale
    return dx, _same_dtype(dy, dgamma), _same_dtype(dy, dbeta)


# ------------------------------------------------------------ activations

def relu(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dy, mask):
    return dy * mask


def lrelu(x, slope: float = 0.01):
    mask = x > 0
    return np.where(mask, x, x * slope), (mask, slope)


def lrelu_backward(dy, cache):
    mask, slope = cache
    return np.where(mask, dy, dy * slope)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, out


def sigmoid_backward(dy, y):
    return dy * y * (1 - y)


def tanh(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy, y):
    return dy * (1 - y * y)


# ---------------------------------------------------------------- maxpool

def maxpool1d(x, kernel: int, stride: int, ceil_mode: bool = True):
    """Windowed max over the last axis.

    With ``ceil_mode`` a trailing partial window is kept (padded with -inf),
    so the output length matches a stride-``stride`` "same" convolution.
    """
    length = x.shape[-1]
    if ceil_mode:
        out_len = max(0, -(-(length - kernel) // stride)) + 1
        if (out_len - 1) * stride >= length:
            out_len -= 1  # never start a window inside the padding
        need = (out_len - 1) * stride + kernel - length
    else:
        out_len = (length - kernel) // stride + 1
        need = 0
    xp = np.pad(x, ((0, 0), (0, 0), (0, need)), constant_values=-np.inf) if need > 0 else x
    if kernel == stride:
        # non-overlapping windows: a reshape is enough
        win = xp[:, :, :out_len * kernel].reshape(x.shape[0], x.shape[1], out_len, kernel)
    else:
        win = sliding_window_view(xp, kernel, axis=2)[:, :, ::stride][:, :, :out_len]
    arg = win.argmax(axis=3)  # first index on ties
    y = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    return y, (arg, kernel, stride, x.shape)


def maxpool1d_backward(dy, cache):
    arg, kernel, stride, shape = cache
    out_len = arg.shape[2]
    if kernel == stride:
        dwin = np.zeros(arg.shape + (kernel,), dtype=dy.dtype)
        np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=3)
        flat = dwin.reshape(shape[0], shape[1], out_len * kernel)
        if flat.shape[2] >= shape[2]:
            return flat[:, :, :shape[2]]
        dx = np.zeros(shape, dtype=dy.dtype)
        dx[:, :, :flat.shape[2]] = flat
        return dx
    dx = np.zeros(shape, dtype=dy.dtype)
    idx = arg + (np.arange(out_len) * stride)[None, None, :]
    b, c, _ = np.indices(idx.shape, sparse=True)
    np.add.at(dx, (b, c, idx), dy)
    return dx


# ------------------------------------------------------------------ dense

def dense(x, w, b):
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"dense shape mismatch: x {x.shape}, w {w.shape}")
    return x @ w.T + b, (x, w)


def dense_backward(dy, cache):
    x, w = cache
    return dy @ w, dy.T @ x, dy.sum(axis=0, dtype=np.float64).astype(dy.dtype)


# ---------------------------------------------------------------- dropout

def dropout(x, rate: float, train: bool, rng=None):
    if not train or rate == 0.0:
        return x, None
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


# -------------------------------------------------------------------- GRU
# Gate blocks are stacked in the fixed order (z, r, n) along the first axis
# of w_ih (3H, F), w_hh (3H, H), b_ih (3H,), b_hh (3H,):
#   z = sigmoid(Wz x + bz_i + Uz h + bz_h)
#   r = sigmoid(Wr x + br_i + Ur h + br_h)
#   n = tanh(Wn x + bn_i + r * (Un h + bn_h))
#   h' = (1 - z) * n + z * h

def gru(x, w_ih, w_hh, b_ih, b_hh, reverse: bool = False):
    """Single-direction GRU over ``x`` (batch, time, feat) from a zero state."""
    if x.ndim != 3 or x.shape[2] != w_ih.shape[1]:
        raise ValueError(f"gru shape mismatch: x {x.shape}, w_ih {w_ih.shape}")
    hidden = w_hh.shape[1]
    batch, steps, _ = x.shape
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    gi_all = x @ w_ih.T + b_ih  # (B, T, 3H)
    h = np.zeros((batch, hidden), dtype=x.dtype)
    out = np.empty((batch, steps, hidden), dtype=x.dtype)
    saved = []
    for t in order:
        gi = gi_all[:, t]
        gh = h @ w_hh.T + b_hh
        z, _ = sigmoid(gi[:, :hidden] + gh[:, :hidden])
        r, _ = sigmoid(gi[:, hidden:2 * hidden] + gh[:, hidden:2 * hidden])
        n = np.tanh(gi[:, 2 * hidden:] + r * gh[:, 2 * hidden:])
        h_new = (1 - z) * n + z * h
        saved.append((t, h, z, r, n, gh[:, 2 * hidden:]))
        h = h_new
        out[:, t] = h
    return out, (x, w_ih, w_hh, saved)


def gru_backward(dout, cache):
    x, w_ih, w_hh, saved = cache
    hidden = w_hh.shape[1]
    dx = np.zeros_like(x)
    dw_ih = np.zeros_like(w_ih)
    dw_hh = np.zeros_like(w_hh)
    db_ih = np.zeros(w_ih.shape[0], dtype=x.dtype)
    db_hh = np.zeros(w_hh.shape[0], dtype=x.dtype)
    dh = np.zeros((x.shape[0], hidden), dtype=x.dtype)
    for t, h_prev, z, r, n, ghn in reversed(saved):
        dh = dh + dout[:, t]
        dn = dh * (1 - z)
        dz = dh * (h_prev - n)
        dh_prev = dh * z
        dn_pre = dn * (1 - n * n)
        dr = dn_pre * ghn
        dz_pre = dz * z * (1 - z)
        dr_pre = dr * r * (1 - r)
        dgi = np.concatenate([dz_pre, dr_pre, dn_pre], axis=1)
        dgh = np.concatenate([dz_pre, dr_pre, dn_pre * r], axis=1)
        dw_ih += dgi.T @ x[:, t]
        db_ih += dgi.sum(axis=0)
        dx[:, t] = dgi @ w_ih
        dw_hh += dgh.T @ h_prev
        db_hh += dgh.sum(axis=0)
        dh = dh_prev + dgh @ w_hh
    return dx, dw_ih, dw_hh, db_ih, db_hh


def bigru(x, fwd_params, bwd_params):
    """Bidirectional GRU; output (batch, time, 2*hidden) = [forward; backward]."""
    yf, cf = gru(x, *fwd_params)
    yb, cb = gru(x, *bwd_params, reverse=True)
    return np.concatenate([yf, yb], axis=2), (cf, cb, yf.shape[2])


def bigru_backward(dy, cache):
    cf, cb, hidden = cache
    dxf, *gf = gru_backward(dy[:, :, :hidden], cf)
    dxb, *gb = gru_backward(dy[:, :, hidden:], cb)
    return dxf + dxb, tuple(gf), tuple(gb)
