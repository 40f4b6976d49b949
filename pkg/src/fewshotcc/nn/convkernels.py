"""3x3 convolution kernels (NHWC, stride 1, zero padding 1).

Two BLAS-backed strategies with the same contracts:

* ``*_taps``: nine shifted-slice matmuls, fastest at small channel counts;
* ``*_im2col``: one patch-matrix matmul, fastest at large channel counts.

The public :func:`conv3x3` / :func:`conv3x3_dw` dispatch on problem size;
``benchmarks/kernel_bench.py`` measures the crossover.
"""

import numpy as np

# Dispatch thresholds, measured (see benchmarks/kernel_bench.py): the nine
# tap matmuls win while the padded tensor stays cache-resident and the
# matmul inner dimension (C_in) is wide enough for BLAS; the single im2col
# matmul wins for very large tensors and for thin-channel inputs at large
# spatial sizes.
_IM2COL_MIN_ELEMS = 1 << 23
_THIN_CHANNELS = 16
_THIN_MIN_POSITIONS = 1 << 16


def _use_im2col(x: np.ndarray) -> bool:
    positions = x.size // x.shape[-1]
    return x.size >= _IM2COL_MIN_ELEMS or (
        x.shape[-1] < _THIN_CHANNELS and positions >= _THIN_MIN_POSITIONS
    )


def _pad1(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1 : h + 1, 1 : w + 1] = x
    return xp


def conv3x3_taps(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    n, h, wd, cin = x.shape
    xp = _pad1(x)
    out = np.zeros((n * h * wd, w.shape[3]), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            patch = np.ascontiguousarray(xp[:, u : u + h, v : v + wd, :]).reshape(-1, cin)
            out += patch @ w[u, v]
    return out.reshape(n, h, wd, w.shape[3])


def conv3x3_dw_taps(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    n, h, wd, cin = x.shape
    cout = gy.shape[3]
    xp = _pad1(x)
    gflat = gy.reshape(-1, cout)
    gw = np.empty((3, 3, cin, cout), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            patch = np.ascontiguousarray(xp[:, u : u + h, v : v + wd, :]).reshape(-1, cin)
            gw[u, v] = patch.T @ gflat
    return gw


def _im2col(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    xp = _pad1(x)
    cols = np.empty((n, h, w, 9, c), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            cols[:, :, :, 3 * u + v, :] = xp[:, u : u + h, v : v + w, :]
    return cols.reshape(n * h * w, 9 * c)


def conv3x3_im2col(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    return (_im2col(x) @ w.reshape(9 * cin, cout)).reshape(n, h, wd, cout)


def conv3x3_dw_im2col(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    cin, cout = x.shape[3], gy.shape[3]
    return (_im2col(x).T @ gy.reshape(-1, cout)).reshape(3, 3, cin, cout)


def conv3x3(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """out[n,i,j,o] = sum over (u,v,c) of x[n,i+u-1,j+v-1,c] * w[u,v,c,o]."""
    if _use_im2col(x):
        return conv3x3_im2col(x, w)
    return conv3x3_taps(x, w)


def conv3x3_dw(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`conv3x3` in its filter argument:
    gw[u,v,c,o] = sum over (n,i,j) of x[n,i+u-1,j+v-1,c] * gy[n,i,j,o]."""
    if _use_im2col(x):
        return conv3x3_dw_im2col(x, gy)
    return conv3x3_dw_taps(x, gy)


def _pad1_grouped(x: np.ndarray) -> np.ndarray:
    t, n, h, w, c = x.shape
    xp = np.zeros((t, n, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, :, 1 : h + 1, 1 : w + 1] = x
    return xp


def conv3x3_grouped(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-group convolution: x is (T, N, H, W, C), w is (T, 3, 3, C, O).

    Group t is convolved with filter bank t; groups carry the per-task
    adapted weights when a whole meta-batch runs as one graph. Implemented
    as nine batched tap matmuls over one padded copy.
    """
    t, n, h, wd, cin = x.shape
    cout = w.shape[4]
    if _use_im2col(x[0]):
        out = np.empty((t, n, h, wd, cout), dtype=x.dtype)
        for i in range(t):
            out[i] = conv3x3_im2col(x[i], w[i])
        return out
    xp = _pad1_grouped(x)
    out = np.zeros((t, n * h * wd, cout), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            patch = np.ascontiguousarray(xp[:, :, u : u + h, v : v + wd, :]).reshape(t, -1, cin)
            out += patch @ w[:, u, v]
    return out.reshape(t, n, h, wd, cout)


def conv3x3_dw_grouped(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    t, n, h, wd, cin = x.shape
    cout = gy.shape[4]
    if _use_im2col(x[0]):
        gw = np.empty((t, 3, 3, cin, cout), dtype=x.dtype)
        for i in range(t):
            gw[i] = conv3x3_dw_im2col(x[i], gy[i])
        return gw
    xp = _pad1_grouped(x)
    gflat = gy.reshape(t, -1, cout)
    gw = np.empty((t, 3, 3, cin, cout), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            patch = np.ascontiguousarray(xp[:, :, u : u + h, v : v + wd, :]).reshape(t, -1, cin)
            gw[:, u, v] = patch.transpose(0, 2, 1) @ gflat
    return gw
