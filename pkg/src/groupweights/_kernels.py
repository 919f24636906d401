"""Hot inner loops, compiled with numba when available.

Set ``GROUPWEIGHTS_DISABLE_NUMBA=1`` to force the pure-numpy code paths.
Both paths compute the same quantities; ``benchmarks/bench_kernels.py``
compares them.
"""
import math
import os

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

_DISABLED = os.environ.get("GROUPWEIGHTS_DISABLE_NUMBA", "") not in ("", "0")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

_NUMBA_OPTS = dict(nogil=True, cache=True, fastmath=False, error_model="numpy")


def numba_enabled():
    return HAVE_NUMBA


# ---------------------------------------------------------------------------
# identity-design posterior statistics

def _identity_stats_numpy(Y, h, ptr, indices, sizes, active, sigma2):
    K, P = Y.shape
    G = sizes.size
    act = np.flatnonzero(active)
    sq_norm = np.zeros((K, G))
    trace = np.zeros((K, G))
    if act.size:
        rows = np.repeat(np.arange(act.size), sizes[act])
        cols = np.concatenate([indices[ptr[j]:ptr[j + 1]] for j in act])
        inc = sparse.csr_matrix((np.ones(cols.size), (rows, cols)), shape=(act.size, P))
        ha = h[:, act]
        xi = np.asarray((inc.T @ ha.T).T)
    else:
        xi = np.zeros((K, P))
    d = 1.0 / (xi + sigma2)
    r = Y * d
    w = xi * r
    if act.size:
        sq_norm[:, act] = ha * ha * np.asarray((inc @ (r * r).T).T)
        trace[:, act] = sizes[act] * ha - ha * ha * np.asarray((inc @ d.T).T)
        logh = np.log(ha) @ sizes[act].astype(float)
    else:
        logh = np.zeros(K)
    logdet = logh - np.log1p(xi / sigma2).sum(axis=1)
    xtx_trace = (xi * sigma2 * d).sum(axis=1)
    resid = ((sigma2 * r) ** 2).sum(axis=1)
    return sq_norm, trace, logdet, xtx_trace, resid, w


def _identity_stats_loop(Y, h, ptr, indices, sizes, active, sigma2):
    K, P = Y.shape
    G = sizes.size
    sq_norm = np.zeros((K, G))
    trace = np.zeros((K, G))
    logdet = np.zeros(K)
    xtx_trace = np.zeros(K)
    resid = np.zeros(K)
    w = np.zeros((K, P))
    xi = np.zeros(P)
    d = np.zeros(P)
    for k in range(K):
        xi[:] = 0.0
        logh = 0.0
        for j in range(G):
            if active[j]:
                hj = h[k, j]
                logh += sizes[j] * math.log(hj)
                for p in range(ptr[j], ptr[j + 1]):
                    xi[indices[p]] += hj
        ld = 0.0
        tt = 0.0
        rr = 0.0
        for i in range(P):
            d[i] = 1.0 / (xi[i] + sigma2)
            ld -= math.log1p(xi[i] / sigma2)
            tt += xi[i] * sigma2 * d[i]
            ri = Y[k, i] * d[i]
            w[k, i] = xi[i] * ri
            rr += (sigma2 * ri) ** 2
        for j in range(G):
            if active[j]:
                hj = h[k, j]
                a = 0.0
                b = 0.0
                for p in range(ptr[j], ptr[j + 1]):
                    i = indices[p]
                    ri = Y[k, i] * d[i]
                    a += ri * ri
                    b += d[i]
                sq_norm[k, j] = hj * hj * a
                trace[k, j] = sizes[j] * hj - hj * hj * b
        logdet[k] = logh + ld
        xtx_trace[k] = tt
        resid[k] = rr
    return sq_norm, trace, logdet, xtx_trace, resid, w


# ---------------------------------------------------------------------------
# trapezoid over log mixing scale for the 1-D Student-t marginal likelihood

def _gsm_loglik_numpy(y, log_var, log_wt, chunk=512):
    out = np.empty(y.size)
    edge = np.empty(y.size)
    var = np.exp(log_var)
    for lo in range(0, y.size, chunk):
        yy = y[lo:lo + chunk, None]
        terms = log_wt - 0.5 * (math.log(2 * math.pi) + log_var + yy * yy / var)
        out[lo:lo + chunk] = logsumexp(terms, axis=1)
        edge[lo:lo + chunk] = np.maximum(terms[:, 0], terms[:, -1]) - out[lo:lo + chunk]
    return out, edge


def _gsm_loglik_loop(y, log_var, log_wt):
    n = log_var.size
    out = np.empty(y.size)
    edge = np.empty(y.size)
    var = np.exp(log_var)
    c = np.empty(n)
    for j in range(n):
        c[j] = log_wt[j] - 0.5 * (math.log(2 * math.pi) + log_var[j])
    for k in range(y.size):
        y2 = y[k] * y[k]
        m = -np.inf
        for j in range(n):
            t = c[j] - 0.5 * y2 / var[j]
            if t > m:
                m = t
        acc = 0.0
        for j in range(n):
            acc += math.exp(c[j] - 0.5 * y2 / var[j] - m)
        out[k] = m + math.log(acc)
        e0 = c[0] - 0.5 * y2 / var[0]
        e1 = c[n - 1] - 0.5 * y2 / var[n - 1]
        edge[k] = max(e0, e1) - out[k]
    return out, edge


if HAVE_NUMBA:
    _identity_stats_jit = njit(**_NUMBA_OPTS)(_identity_stats_loop)
    _gsm_loglik_jit = njit(**_NUMBA_OPTS)(_gsm_loglik_loop)


def identity_stats(Y, h, ptr, indices, sizes, active, sigma2, backend=None):
    """Posterior summaries for identity-design tasks, all tasks at once.

    ``h`` is the ``(K, G)`` array of ``zeta / f`` (ignored for inactive
    groups).  Returns ``(sq_norm, trace, logdet, xtx_trace, resid, w)``.
    """
    backend = backend or ("numba" if HAVE_NUMBA else "numpy")
    Y = np.ascontiguousarray(Y, dtype=float)
    h = np.ascontiguousarray(h, dtype=float)
    args = (Y, h, np.asarray(ptr, np.int64), np.asarray(indices, np.int64),
            np.asarray(sizes, np.int64), np.asarray(active, np.bool_), float(sigma2))
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable")
        return _identity_stats_jit(*args)
    if backend == "loop":
        return _identity_stats_loop(*args)
    return _identity_stats_numpy(*args)


def gsm_loglik(y, log_var, log_wt, backend=None):
    """Per-task ``log sum_j exp(log_wt_j) N(y | 0, exp(log_var_j))``.

    Also returns the log ratio of the largest endpoint term to the total,
    used to detect integration ranges that are too narrow.
    """
    backend = backend or ("numba" if HAVE_NUMBA else "numpy")
    y = np.ascontiguousarray(y, dtype=float)
    log_var = np.ascontiguousarray(log_var, dtype=float)
    log_wt = np.ascontiguousarray(log_wt, dtype=float)
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable")
        return _gsm_loglik_jit(y, log_var, log_wt)
    if backend == "loop":
        return _gsm_loglik_loop(y, log_var, log_wt)
    return _gsm_loglik_numpy(y, log_var, log_wt)
