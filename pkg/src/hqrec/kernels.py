"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The JIT path is used when numba imports cleanly and the environment variable
``HQREC_DISABLE_NUMBA`` is unset (or "0"). Both paths compute the same
quantities; ``benchmarks/bench_kernels.py`` times them against each other.

All row-wise kernels expect C-contiguous 2-D float arrays (the tensor engine
guarantees contiguity). Elementwise kernels accept any shape and operate on a
flattened view.
"""

import math
import os

import numpy as np

_SQRT1_2 = 0.7071067811865476      # 1/sqrt(2)
_INV_SQRT_2PI = 0.3989422804014327  # 1/sqrt(2*pi)


def _env_truthy(name):
    return os.environ.get(name, "0").strip().lower() in ("1", "true", "yes", "on")


# ---------------------------------------------------------------------------
# Pure-numpy implementations (always available; the fallback path)
# ---------------------------------------------------------------------------

def _softmax_rows_np(x):
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=1, keepdims=True)


def _softmax_rows_bwd_np(y, gout):
    # dx = y * (g - sum(g * y)) per row
    dot = np.sum(gout * y, axis=1, keepdims=True)
    return y * (gout - dot)


def _layer_norm_rows_np(x, eps):
    mu = np.mean(x, axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat, inv_std[:, 0]


def _layer_norm_rows_bwd_np(gout, xhat, inv_std, gain):
    n = xhat.shape[1]
    gxhat = gout * gain
    mean_g = np.mean(gxhat, axis=1, keepdims=True)
    mean_gx = np.mean(gxhat * xhat, axis=1, keepdims=True)
    gx = (gxhat - mean_g - xhat * mean_gx) * inv_std[:, None]
    ggain = np.sum(gout * xhat, axis=0)
    gbias = np.sum(gout, axis=0)
    return gx, ggain, gbias


def _gelu_np(x):
    from scipy.special import erf as _erf  # local import keeps scipy optional

    return 0.5 * x * (1.0 + _erf(x * _SQRT1_2))


def _gelu_np_nosp(x):
    erf = np.vectorize(math.erf)
    return 0.5 * x * (1.0 + erf(x * _SQRT1_2))


def _gelu_bwd_np(x, gout):
    try:
        from scipy.special import erf as _erf

        cdf = 0.5 * (1.0 + _erf(x * _SQRT1_2))
    except ImportError:
        cdf = 0.5 * (1.0 + np.vectorize(math.erf)(x * _SQRT1_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return gout * (cdf + x * pdf)


def _adamw_update_np(param, grad, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / bc1
    vhat = v / bc2
    param -= lr * (mhat / (np.sqrt(vhat) + eps) + wd * param)


# ---------------------------------------------------------------------------
# Loop implementations, numba-compiled when the fast path is active
# ---------------------------------------------------------------------------

def _softmax_rows_loop(x):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        m = x[i, 0]
        for j in range(1, x.shape[1]):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(x.shape[1]):
            e = math.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(x.shape[1]):
            out[i, j] *= inv
    return out


def _softmax_rows_bwd_loop(y, gout):
    gx = np.empty_like(y)
    for i in range(y.shape[0]):
        dot = 0.0
        for j in range(y.shape[1]):
            dot += gout[i, j] * y[i, j]
        for j in range(y.shape[1]):
            gx[i, j] = y[i, j] * (gout[i, j] - dot)
    return gx


def _layer_norm_rows_loop(x, eps):
    rows, n = x.shape
    xhat = np.empty_like(x)
    inv_std = np.empty(rows, dtype=x.dtype)
    for i in range(rows):
        mu = 0.0
        for j in range(n):
            mu += x[i, j]
        mu /= n
        var = 0.0
        for j in range(n):
            d = x[i, j] - mu
            var += d * d
        var /= n
        s = 1.0 / math.sqrt(var + eps)
        inv_std[i] = s
        for j in range(n):
            xhat[i, j] = (x[i, j] - mu) * s
    return xhat, inv_std


def _layer_norm_rows_bwd_loop(gout, xhat, inv_std, gain):
    rows, n = xhat.shape
    gx = np.empty_like(xhat)
    ggain = np.zeros(n, dtype=xhat.dtype)
    gbias = np.zeros(n, dtype=xhat.dtype)
    for i in range(rows):
        mean_g = 0.0
        mean_gx = 0.0
        for j in range(n):
            gh = gout[i, j] * gain[j]
            mean_g += gh
            mean_gx += gh * xhat[i, j]
        mean_g /= n
        mean_gx /= n
        for j in range(n):
            gh = gout[i, j] * gain[j]
            gx[i, j] = (gh - mean_g - xhat[i, j] * mean_gx) * inv_std[i]
            ggain[j] += gout[i, j] * xhat[i, j]
            gbias[j] += gout[i, j]
    return gx, ggain, gbias


def _gelu_loop(x):
    flat = x.ravel()
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        out[i] = 0.5 * flat[i] * (1.0 + math.erf(flat[i] * _SQRT1_2))
    return out.reshape(x.shape)


def _gelu_bwd_loop(x, gout):
    xf = x.ravel()
    gf = gout.ravel()
    out = np.empty_like(xf)
    for i in range(xf.shape[0]):
        cdf = 0.5 * (1.0 + math.erf(xf[i] * _SQRT1_2))
        pdf = _INV_SQRT_2PI * math.exp(-0.5 * xf[i] * xf[i])
        out[i] = gf[i] * (cdf + xf[i] * pdf)
    return out.reshape(x.shape)


def _adamw_update_loop(param, grad, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    p = param.ravel()
    g = grad.ravel()
    mf = m.ravel()
    vf = v.ravel()
    for i in range(p.shape[0]):
        mf[i] = beta1 * mf[i] + (1.0 - beta1) * g[i]
        vf[i] = beta2 * vf[i] + (1.0 - beta2) * g[i] * g[i]
        mhat = mf[i] / bc1
        vhat = vf[i] / bc2
        p[i] -= lr * (mhat / (math.sqrt(vhat) + eps) + wd * p[i])


# ---------------------------------------------------------------------------
# Backend selection
# ---------------------------------------------------------------------------

USE_NUMBA = not _env_truthy("HQREC_DISABLE_NUMBA")
if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:
        USE_NUMBA = False

if USE_NUMBA:
    BACKEND = "numba"
    softmax_rows = njit(cache=True)(_softmax_rows_loop)
    softmax_rows_bwd = njit(cache=True)(_softmax_rows_bwd_loop)
    layer_norm_rows = njit(cache=True)(_layer_norm_rows_loop)
    layer_norm_rows_bwd = njit(cache=True)(_layer_norm_rows_bwd_loop)
    gelu = njit(cache=True)(_gelu_loop)
    gelu_bwd = njit(cache=True)(_gelu_bwd_loop)
    adamw_update = njit(cache=True)(_adamw_update_loop)
else:
    BACKEND = "numpy"
    softmax_rows = _softmax_rows_np
    softmax_rows_bwd = _softmax_rows_bwd_np
    layer_norm_rows = _layer_norm_rows_np
    layer_norm_rows_bwd = _layer_norm_rows_bwd_np
    try:
        import scipy.special  # noqa: F401

        gelu = _gelu_np
    except ImportError:
        gelu = _gelu_np_nosp
    gelu_bwd = _gelu_bwd_np
    adamw_update = _adamw_update_np
