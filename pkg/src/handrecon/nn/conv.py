"""N-dimensional strided convolution and its transpose via im2col."""
from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _node, as_tensor


def _tuple(v, n: int) -> tuple[int, ...]:
    return tuple(v) if isinstance(v, (tuple, list)) else (int(v),) * n


def conv_output_size(size, kernel, stride, padding):
    return tuple((s + 2 * p - k) // st + 1 for s, k, st, p in zip(size, kernel, stride, padding))


def transposed_output_size(size, kernel, stride, padding):
    return tuple((s - 1) * st - 2 * p + k for s, k, st, p in zip(size, kernel, stride, padding))


def _im2col(xp: np.ndarray, kernel, stride, out_sp) -> np.ndarray:
    """(N, C, *padded) -> (N*P, C*K) patch matrix."""
    nd = len(kernel)
    win = sliding_window_view(xp, kernel, axis=tuple(range(2, 2 + nd)))
    sl = (slice(None), slice(None)) + tuple(slice(0, st * o, st) for st, o in zip(stride, out_sp))
    win = win[sl]  # (N, C, *out, *k)
    n, c = xp.shape[:2]
    perm = (0,) + tuple(range(2, 2 + nd)) + (1,) + tuple(range(2 + nd, 2 + 2 * nd))
    return win.transpose(perm).reshape(n * int(np.prod(out_sp)), c * int(np.prod(kernel)))


def _col2im(cols: np.ndarray, padded_shape, kernel, stride, out_sp) -> np.ndarray:
    """Adjoint of ``_im2col``: scatter-add (N*P, C*K) back to (N, C, *padded)."""
    nd = len(kernel)
    n, c = padded_shape[:2]
    cols = cols.reshape((n,) + tuple(out_sp) + (c,) + tuple(kernel))
    # -> (N, C, *k, *out)
    perm = (0, 1 + nd) + tuple(range(2 + nd, 2 + 2 * nd)) + tuple(range(1, 1 + nd))
    cols = cols.transpose(perm)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for off in itertools.product(*(range(k) for k in kernel)):
        sl = (slice(None), slice(None)) + tuple(
            slice(o, o + st * (osz - 1) + 1, st) for o, st, osz in zip(off, stride, out_sp))
        out[sl] += cols[(slice(None), slice(None)) + off]
    return out


def _pad(x: np.ndarray, padding) -> np.ndarray:
    if not any(padding):
        return x
    return np.pad(x, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))


def _crop(x: np.ndarray, padding) -> np.ndarray:
    if not any(padding):
        return x
    sl = (slice(None), slice(None)) + tuple(slice(p, x.shape[2 + i] - p) for i, p in enumerate(padding))
    return x[sl]


def _conv_forward(x, w, stride, padding):
    nd = w.ndim - 2
    kernel = w.shape[2:]
    xp = _pad(x, padding)
    out_sp = conv_output_size(x.shape[2:], kernel, stride, padding)
    cols = _im2col(xp, kernel, stride, out_sp)
    out = cols @ w.reshape(w.shape[0], -1).T
    n = x.shape[0]
    out = out.reshape((n,) + out_sp + (w.shape[0],))
    return np.moveaxis(out, -1, 1), cols, xp.shape, out_sp


def _conv_input_grad(g, w, x_shape, stride, padding):
    kernel = w.shape[2:]
    out_sp = g.shape[2:]
    gmat = np.moveaxis(g, 1, -1).reshape(-1, w.shape[0])
    dcols = gmat @ w.reshape(w.shape[0], -1)
    padded = (x_shape[0], x_shape[1]) + tuple(s + 2 * p for s, p in zip(x_shape[2:], padding))
    return _crop(_col2im(dcols, padded, kernel, stride, out_sp), padding)


def conv(x, w, b=None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of (N, Cin, *sp) with weights (Cout, Cin, *k)."""
    x, w = as_tensor(x), as_tensor(w)
    nd = w.ndim - 2
    if x.ndim != nd + 2:
        raise ValueError(f"conv{nd}d expects a {nd + 2}-d input, got shape {x.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv{nd}d expects {w.shape[1]} input channels, got {x.shape[1]} (input {x.shape})")
    stride, padding = _tuple(stride, nd), _tuple(padding, nd)
    out_sp = conv_output_size(x.shape[2:], w.shape[2:], stride, padding)
    if any(o < 1 for o in out_sp):
        raise ValueError(f"conv{nd}d kernel {w.shape[2:]} does not fit input {x.shape[2:]}")
    out, cols, _, out_sp = _conv_forward(x.data, w.data, stride, padding)
    parents = (x, w) if b is None else (x, w, as_tensor(b))
    if b is not None:
        out = out + parents[2].data.reshape((1, -1) + (1,) * nd)

    def bw(g):
        gmat = np.moveaxis(g, 1, -1).reshape(-1, w.shape[0])
        gx = _conv_input_grad(g, w.data, x.shape, stride, padding) if x.requires_grad else None
        gw = (gmat.T @ cols).reshape(w.shape) if w.requires_grad else None
        if b is None:
            return gx, gw
        gb = g.sum(axis=(0,) + tuple(range(2, 2 + nd)))
        return gx, gw, gb

    return _node(out, parents, bw)


def conv_transpose(x, w, b=None, stride=1, padding=0) -> Tensor:
    """Transposed convolution; weights are (Cin, Cout, *k)."""
    x, w = as_tensor(x), as_tensor(w)
    nd = w.ndim - 2
    if x.ndim != nd + 2:
        raise ValueError(f"transposed_conv{nd}d expects a {nd + 2}-d input, got shape {x.shape}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(
            f"transposed_conv{nd}d expects {w.shape[0]} input channels, got {x.shape[1]} (input {x.shape})")
    stride, padding = _tuple(stride, nd), _tuple(padding, nd)
    kernel = w.shape[2:]
    out_sp = transposed_output_size(x.shape[2:], kernel, stride, padding)
    if any(o < 1 for o in out_sp):
        raise ValueError(f"transposed_conv{nd}d produces empty output for input {x.shape}")
    # The transposed conv is the input-gradient of a conv with weights
    # viewed as (Cout=Cin_t, Cin=Cout_t, *k).
    out_shape = (x.shape[0], w.shape[1]) + out_sp
    out = _conv_input_grad(x.data, w.data, out_shape, stride, padding)
    parents = (x, w) if b is None else (x, w, as_tensor(b))
    if b is not None:
        out = out + parents[2].data.reshape((1, -1) + (1,) * nd)

    def bw(g):
        gx = gw = None
        gp = _pad(g, padding)
        cols = _im2col(gp, kernel, stride, x.shape[2:])  # (N*P, Cout*K)
        if x.requires_grad:
            gx = cols @ w.data.reshape(w.shape[0], -1).T
            gx = np.moveaxis(gx.reshape((x.shape[0],) + x.shape[2:] + (w.shape[0],)), -1, 1)
        if w.requires_grad:
            xmat = np.moveaxis(x.data, 1, -1).reshape(-1, w.shape[0])
            gw = (xmat.T @ cols).reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0,) + tuple(range(2, 2 + nd)))

    return _node(out, parents, bw)
