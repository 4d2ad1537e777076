"""Hot numeric kernels with two interchangeable backends.

The batch-level inner loops that dominate training time (row softmaxes,
cosine-similarity blocks and batch-norm statistics) exist twice: a pure-numpy
reference implementation and a numba ``@njit`` version. The active backend is
chosen once at import time: numba is used when importable unless the
environment variable ``UNIMOS_NUMBA`` is set to ``0``. Both backends are
sequential, so results are deterministic for a fixed backend.

``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional extra
    njit = None
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("UNIMOS_NUMBA", "1") != "0"


# ---------------------------------------------------------------------------
# numpy reference backend
# ---------------------------------------------------------------------------

def softmax_rows_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def row_norms_np(x: np.ndarray) -> np.ndarray:
    return np.sqrt((x * x).sum(axis=1))


def cosine_rows_np(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    xn = row_norms_np(x)
    mn = row_norms_np(m)
    return (x @ m.T) / (xn[:, None] * mn[None, :])


def cosine_rows_grad_np(x: np.ndarray, m: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(g * cosine_rows(x, m))`` with respect to ``x``."""
    xn = row_norms_np(x)
    mn = row_norms_np(m)
    u = x / xn[:, None]
    v = m / mn[:, None]
    c = u @ v.T
    return (g @ v - u * (g * c).sum(axis=1, keepdims=True)) / xn[:, None]


def batchnorm_train_np(x, gamma, beta, eps):
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :]) * inv[None, :]
    return xhat * gamma[None, :] + beta[None, :], mean, var


def batchnorm_train_grad_np(x, gamma, mean, var, eps, g):
    b = x.shape[0]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :]) * inv[None, :]
    dbeta = g.sum(axis=0)
    dgamma = (g * xhat).sum(axis=0)
    dx = (gamma * inv / b)[None, :] * (b * g - dbeta[None, :] - xhat * dgamma[None, :])
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# loop bodies, compiled with numba when the accelerated backend is active
# ---------------------------------------------------------------------------

def _softmax_rows_loops(x):
    n, k = x.shape
    out = np.empty((n, k))
    for i in range(n):
        m = x[i, 0]
        for j in range(1, k):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(k):
            e = np.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(k):
            out[i, j] *= inv
    return out


def _log_softmax_rows_loops(x):
    n, k = x.shape
    out = np.empty((n, k))
    for i in range(n):
        m = x[i, 0]
        for j in range(1, k):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(k):
            s += np.exp(x[i, j] - m)
        lse = m + np.log(s)
        for j in range(k):
            out[i, j] = x[i, j] - lse
    return out


def _row_norms_loops(x):
    n, d = x.shape
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += x[i, j] * x[i, j]
        out[i] = np.sqrt(s)
    return out


def _cosine_rows_loops(x, m):
    n, d = x.shape
    k = m.shape[0]
    xn = np.empty(n)
    for i in range(n):
        s = 0.0
        for t in range(d):
            s += x[i, t] * x[i, t]
        xn[i] = np.sqrt(s)
    mn = np.empty(k)
    for j in range(k):
        s = 0.0
        for t in range(d):
            s += m[j, t] * m[j, t]
        mn[j] = np.sqrt(s)
    out = np.dot(x, m.T.copy())  # BLAS for the Gram block, loops for the rest
    for i in range(n):
        for j in range(k):
            out[i, j] /= xn[i] * mn[j]
    return out


def _cosine_rows_grad_loops(x, m, g):
    n, d = x.shape
    k = m.shape[0]
    xn = np.empty(n)
    for i in range(n):
        s = 0.0
        for t in range(d):
            s += x[i, t] * x[i, t]
        xn[i] = np.sqrt(s)
    mn = np.empty(k)
    v = np.empty((k, d))
    for j in range(k):
        s = 0.0
        for t in range(d):
            s += m[j, t] * m[j, t]
        mn[j] = np.sqrt(s)
        inv = 1.0 / mn[j]
        for t in range(d):
            v[j, t] = m[j, t] * inv
    gv = np.dot(g, v)
    raw = np.dot(x, m.T.copy())
    dx = np.empty((n, d))
    for i in range(n):
        acc = 0.0
        for j in range(k):
            acc += g[i, j] * raw[i, j] / (xn[i] * mn[j])
        for t in range(d):
            dx[i, t] = (gv[i, t] - acc * x[i, t] / xn[i]) / xn[i]
    return dx


def _batchnorm_train_loops(x, gamma, beta, eps):
    b, d = x.shape
    mean = np.empty(d)
    var = np.empty(d)
    out = np.empty((b, d))
    for j in range(d):
        s = 0.0
        for i in range(b):
            s += x[i, j]
        mu = s / b
        q = 0.0
        for i in range(b):
            dv = x[i, j] - mu
            q += dv * dv
        v = q / b
        mean[j] = mu
        var[j] = v
        inv = 1.0 / np.sqrt(v + eps)
        for i in range(b):
            out[i, j] = (x[i, j] - mu) * inv * gamma[j] + beta[j]
    return out, mean, var


def _batchnorm_train_grad_loops(x, gamma, mean, var, eps, g):
    b, d = x.shape
    dx = np.empty((b, d))
    dgamma = np.zeros(d)
    dbeta = np.zeros(d)
    inv = np.empty(d)
    for j in range(d):
        inv[j] = 1.0 / np.sqrt(var[j] + eps)
    for i in range(b):
        for j in range(d):
            dbeta[j] += g[i, j]
            dgamma[j] += g[i, j] * (x[i, j] - mean[j]) * inv[j]
    for i in range(b):
        for j in range(d):
            xhat = (x[i, j] - mean[j]) * inv[j]
            dx[i, j] = gamma[j] * inv[j] / b * (
                b * g[i, j] - dbeta[j] - xhat * dgamma[j]
            )
    return dx, dgamma, dbeta


_LOOP_BODIES = {
    "softmax_rows": _softmax_rows_loops,
    "log_softmax_rows": _log_softmax_rows_loops,
    "row_norms": _row_norms_loops,
    "cosine_rows": _cosine_rows_loops,
    "cosine_rows_grad": _cosine_rows_grad_loops,
    "batchnorm_train": _batchnorm_train_loops,
    "batchnorm_train_grad": _batchnorm_train_grad_loops,
}

_NUMPY_IMPLS = {
    "softmax_rows": softmax_rows_np,
    "log_softmax_rows": log_softmax_rows_np,
    "row_norms": row_norms_np,
    "cosine_rows": cosine_rows_np,
    "cosine_rows_grad": cosine_rows_grad_np,
    "batchnorm_train": batchnorm_train_np,
    "batchnorm_train_grad": batchnorm_train_grad_np,
}

_numba_cache: dict = {}


def numba_impls():
    """Compile (once) and return the numba backend, or None without numba."""
    if not _HAVE_NUMBA:
        return None
    if not _numba_cache:
        for name, body in _LOOP_BODIES.items():
            _numba_cache[name] = njit(cache=True)(body)
    return dict(_numba_cache)


def numpy_impls():
    return dict(_NUMPY_IMPLS)


if USE_NUMBA:
    _active = numba_impls()
    BACKEND = "numba"
else:
    _active = _NUMPY_IMPLS
    BACKEND = "numpy"

softmax_rows = _active["softmax_rows"]
log_softmax_rows = _active["log_softmax_rows"]
row_norms = _active["row_norms"]
cosine_rows = _active["cosine_rows"]
cosine_rows_grad = _active["cosine_rows_grad"]
batchnorm_train = _active["batchnorm_train"]
batchnorm_train_grad = _active["batchnorm_train_grad"]
