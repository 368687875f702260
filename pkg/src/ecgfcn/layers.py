"""Layer primitives with hand-written forward and backward passes.

Data is channels-last: 1D inputs are (B, T, C), 2D inputs (B, H, W, C).
Convolutions are cross-correlations (no kernel flip) with "same" zero
padding: the output length per spatial dim is ceil(input_len / stride);
when the total padding is odd the extra unit goes on the trailing side.

Convolutions run as im2col + matmul; the column buffer is chunked over the
batch so peak memory stays bounded for wide layers.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_MAX_COL_ELEMS = 16_000_000  # ~64 MB of float32 column buffer


def same_pad(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Return (output_length, pad_before, pad_after) for "same" padding."""
    if length < 1:
        raise ValueError("spatial extent must be >= 1")
    if kernel < 1 or stride < 1:
        raise ValueError("kernel and stride must be >= 1")
    out_len = -(-length // stride)
    pad = max((out_len - 1) * stride + kernel - length, 0)
    return out_len, pad // 2, pad - pad // 2


def _batch_chunks(batch: int, per_sample_elems: int):
    step = max(1, _MAX_COL_ELEMS // max(per_sample_elems, 1))
    for start in range(0, batch, step):
        yield start, min(start + step, batch)


# ---------------------------------------------------------------------------
# 1D convolution
# ---------------------------------------------------------------------------

def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int) -> np.ndarray:
    """x (B, T, Cin), w (K, Cin, M), b (M,) -> (B, ceil(T/stride), M)."""
    batch, t_in, c_in = x.shape
    k, wc_in, m = w.shape
    if wc_in != c_in:
        raise ValueError(f"kernel expects {wc_in} channels, input has {c_in}")
    t_out, lp, rp = same_pad(t_in, k, stride)
    xp = np.pad(x, ((0, 0), (lp, rp), (0, 0)))
    w2 = np.ascontiguousarray(w.transpose(1, 0, 2)).reshape(c_in * k, m)
    y = np.empty((batch, t_out, m), dtype=x.dtype)
    for lo, hi in _batch_chunks(batch, t_out * c_in * k):
        win = sliding_window_view(xp[lo:hi], k, axis=1)[:, ::stride][:, :t_out]
        col = win.reshape((hi - lo) * t_out, c_in * k)
        y[lo:hi] = (col @ w2).reshape(hi - lo, t_out, m)
    y += b
    return y


def conv1d_backward(x: np.ndarray, w: np.ndarray, stride: int,
                    dy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv1d_forward w.r.t. input, weights and bias."""
    batch, t_in, c_in = x.shape
    k, _, m = w.shape
    t_out, lp, rp = same_pad(t_in, k, stride)
    w2 = np.ascontiguousarray(w.transpose(1, 0, 2)).reshape(c_in * k, m)
    xp = np.pad(x, ((0, 0), (lp, rp), (0, 0)))
    dxp = np.zeros_like(xp)
    dw2 = np.zeros((c_in * k, m), dtype=w.dtype)
    for lo, hi in _batch_chunks(batch, t_out * c_in * k):
        n = hi - lo
        win = sliding_window_view(xp[lo:hi], k, axis=1)[:, ::stride][:, :t_out]
        col = win.reshape(n * t_out, c_in * k)
        dyf = dy[lo:hi].reshape(n * t_out, m)
        dw2 += col.T @ dyf
        dcol = (dyf @ w2.T).reshape(n, t_out, c_in, k)
        for kk in range(k):
            dxp[lo:hi, kk:kk + stride * t_out:stride] += dcol[:, :, :, kk]
    dw = np.ascontiguousarray(dw2.reshape(c_in, k, m).transpose(1, 0, 2))
    db = dy.sum(axis=(0, 1))
    dx = dxp[:, lp:lp + t_in]
    return dx, dw, db


# ---------------------------------------------------------------------------
# 2D convolution (square kernels, equal stride on both axes)
# ---------------------------------------------------------------------------

def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int) -> np.ndarray:
    """x (B, H, W, Cin), w (K, K, Cin, M), b (M,) -> same-padded output."""
    batch, h_in, w_in, c_in = x.shape
    k = w.shape[0]
    if w.shape[2] != c_in:
        raise ValueError(f"kernel expects {w.shape[2]} channels, input has {c_in}")
    m = w.shape[3]
    h_out, ph_l, ph_r = same_pad(h_in, k, stride)
    w_out, pw_l, pw_r = same_pad(w_in, k, stride)
    xp = np.pad(x, ((0, 0), (ph_l, ph_r), (pw_l, pw_r), (0, 0)))
    w2 = np.ascontiguousarray(w.transpose(2, 0, 1, 3)).reshape(c_in * k * k, m)
    y = np.empty((batch, h_out, w_out, m), dtype=x.dtype)
    for lo, hi in _batch_chunks(batch, h_out * w_out * c_in * k * k):
        win = sliding_window_view(xp[lo:hi], (k, k), axis=(1, 2))
        win = win[:, ::stride, ::stride][:, :h_out, :w_out]
        col = win.reshape((hi - lo) * h_out * w_out, c_in * k * k)
        y[lo:hi] = (col @ w2).reshape(hi - lo, h_out, w_out, m)
    y += b
    return y


def conv2d_backward(x: np.ndarray, w: np.ndarray, stride: int,
                    dy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    batch, h_in, w_in, c_in = x.shape
    k, _, _, m = w.shape
    h_out, ph_l, _ = same_pad(h_in, k, stride)
    w_out, pw_l, _ = same_pad(w_in, k, stride)
    xp = np.pad(x, ((0, 0),
                    (ph_l, same_pad(h_in, k, stride)[2]),
                    (pw_l, same_pad(w_in, k, stride)[2]), (0, 0)))
    w2 = np.ascontiguousarray(w.transpose(2, 0, 1, 3)).reshape(c_in * k * k, m)
    dxp = np.zeros_like(xp)
    dw2 = np.zeros((c_in * k * k, m), dtype=w.dtype)
    for lo, hi in _batch_chunks(batch, h_out * w_out * c_in * k * k):
        n = hi - lo
        win = sliding_window_view(xp[lo:hi], (k, k), axis=(1, 2))
        win = win[:, ::stride, ::stride][:, :h_out, :w_out]
        col = win.reshape(n * h_out * w_out, c_in * k * k)
        dyf = dy[lo:hi].reshape(n * h_out * w_out, m)
        dw2 += col.T @ dyf
        dcol = (dyf @ w2.T).reshape(n, h_out, w_out, c_in, k, k)
        for kh in range(k):
            for kw in range(k):
                dxp[lo:hi,
                    kh:kh + stride * h_out:stride,
                    kw:kw + stride * w_out:stride] += dcol[:, :, :, :, kh, kw]
    dw = np.ascontiguousarray(
        dw2.reshape(c_in, k, k, m).transpose(1, 2, 0, 3))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dx = dxp[:, ph_l:ph_l + h_in, pw_l:pw_l + w_in]
    return dx, dw, db


# ---------------------------------------------------------------------------
# Batch normalization (per channel, channels-last)
# ---------------------------------------------------------------------------

def bn_forward_train(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                     eps: float):
    """Normalize with batch statistics (biased variance).

    Returns (y, xhat, mean, var); mean/var are the batch statistics used,
    for the caller to blend into running statistics.
    """
    axes = tuple(range(x.ndim - 1))
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)
    xhat = (x - mean) / np.sqrt(var + eps)
    return gamma * xhat + beta, xhat, mean, var


def bn_forward_infer(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                     run_mean: np.ndarray, run_var: np.ndarray,
                     eps: float) -> np.ndarray:
    return gamma * (x - run_mean) / np.sqrt(run_var + eps) + beta


def bn_backward_train(dy: np.ndarray, xhat: np.ndarray, var: np.ndarray,
                      gamma: np.ndarray, eps: float):
    """Backward through batch-statistic normalization.

    dx accounts for the dependence of the batch mean/variance on every
    element of the batch.
    """
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    inv = 1.0 / np.sqrt(var + eps)
    dx = inv * (dxhat - dxhat.mean(axis=axes)
                - xhat * (dxhat * xhat).mean(axis=axes))
    return dx, dgamma, dbeta


def bn_backward_infer(dy: np.ndarray, x: np.ndarray, gamma: np.ndarray,
                      run_mean: np.ndarray, run_var: np.ndarray, eps: float):
    """Backward when normalization used fixed running statistics."""
    axes = tuple(range(dy.ndim - 1))
    inv = 1.0 / np.sqrt(run_var + eps)
    xhat = (x - run_mean) * inv
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dx = dy * (gamma * inv)
    return dx, dgamma, dbeta


def batchnorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
              mode: str, epsilon: float = 1e-3, momentum: float = 0.99,
              running_mean: np.ndarray | None = None,
              running_var: np.ndarray | None = None):
    """Standalone batch-norm operation.

    In ``train`` mode (batch size >= 2) the batch statistics normalize and
    the returned running statistics are ``momentum * old + (1-momentum) *
    batch``.  In ``infer`` mode the provided running statistics normalize
    and are returned unchanged.

    Returns (y, running_mean, running_var).
    """
    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("train-mode batch normalization needs batch size >= 2")
        y, _, mean, var = bn_forward_train(x, gamma, beta, epsilon)
        if running_mean is None:
            running_mean = np.zeros_like(mean)
            running_var = np.ones_like(var)
        new_mean = momentum * running_mean + (1.0 - momentum) * mean
        new_var = momentum * running_var + (1.0 - momentum) * var
        return y, new_mean, new_var
    if mode == "infer":
        if running_mean is None or running_var is None:
            raise ValueError("inference-mode batch normalization needs running statistics")
        return (bn_forward_infer(x, gamma, beta, running_mean, running_var, epsilon),
                running_mean, running_var)
    raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")


# ---------------------------------------------------------------------------
# Global average pooling, dense head, softmax
# ---------------------------------------------------------------------------

def gap_forward(x: np.ndarray) -> np.ndarray:
    """Mean over all spatial axes: (B, ..., M) -> (B, M)."""
    return x.mean(axis=tuple(range(1, x.ndim - 1)))


def gap_backward(dv: np.ndarray, feature_shape: tuple[int, ...]) -> np.ndarray:
    spatial = feature_shape[1:-1]
    n = int(np.prod(spatial))
    shape = (feature_shape[0],) + (1,) * len(spatial) + (feature_shape[-1],)
    return np.broadcast_to(dv.reshape(shape) / n, feature_shape).copy()


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)
