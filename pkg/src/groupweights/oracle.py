"""Slow, independent references used to check the variational machinery.

* :func:`marginal_loglik_1d` integrates the one-variable Student-t marginal
  likelihood numerically, and :func:`grid_search_f` maximises it over a
  candidate list.
* :func:`dense_posterior` solves the Gaussian posterior of one task by
  materialising the full latent covariance with a plain matrix inverse.
"""
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from . import _kernels, priors
from .exceptions import StructuralError
from .model import LOG_2PI
from .priors import PriorConfig

#: Upper end of the candidate list used for the one-variable study.
F_IRRELEVANT = 1e5
DENSE_MAX_LATENT = 2000


class AccuracyWarning(RuntimeWarning):
    """The integration range cuts off a non-negligible part of the integrand."""


def default_f_grid(n=14, lo=0.02, hi=50.0):
    """Log-uniform inverse scales between ``lo`` and ``hi``."""
    return np.geomspace(lo, hi, n)


def oracle_candidates(grid=None):
    """The grid plus the large value standing in for an irrelevant variable."""
    grid = default_f_grid() if grid is None else np.asarray(grid, float)
    return np.append(grid, F_IRRELEVANT)


def _trap_logw(x):
    dx = np.diff(x)
    w = np.zeros(x.size)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return np.log(w)


def log_scale_grid(y, f, a, sigma2, n_points=4001):
    """Grid over ``t = log s`` for the scale-mixture form of the integral.

    The lower end sits where the inverse-gamma mixing density is
    ``exp(-60)``-small; the upper end lies ``40 / (a + 1/2)`` past the
    scale at which the largest observation is explained.
    """
    y = np.asarray(y, float)
    ymax = float(np.max(y * y)) if y.size else 0.0
    hi = math.log(max(f * max(sigma2, ymax), 1.0)) + 40.0 / (a + 0.5)
    return np.linspace(-math.log(60.0), hi, n_points)


def _check_edge(log_edge, tol=1e-8):
    worst = float(np.max(log_edge)) if np.size(log_edge) else -np.inf
    if worst > math.log(tol):
        warnings.warn(f"integrand mass at the grid boundary is {math.exp(worst):.2e} of the total; "
                      "widen the integration grid", AccuracyWarning, stacklevel=3)
    return worst


def marginal_loglik_1d(y, f, a, sigma2, grid=None, method="scale", n_points=4001,
                       per_task=False, backend=None):
    """``sum_k log int N(y_k | v, sigma2) p(v | f) dv`` by the trapezoidal rule.

    ``p`` is the one-dimensional Student-t prior with shape ``a`` and
    inverse scale ``f``.  ``method="scale"`` (default) writes ``v`` as a
    Gaussian with inverse-gamma variance ``s / f`` and integrates the
    closed-form Gaussian marginal over ``t = log s``; this stays accurate
    from ``f = 0.02`` up to ``f = 1e5``.  ``method="v"`` integrates over
    ``v`` directly and is kept as a cross-check for moderate ``f``.
    ``grid`` overrides the default integration nodes (``t`` or ``v``).
    ``f = inf`` gives the point-mass limit.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if not (sigma2 > 0 and a > 0 and f > 0):
        raise ValueError("f, a and sigma2 must be positive")
    if np.isinf(f):
        out = -0.5 * (LOG_2PI + math.log(sigma2) + y * y / sigma2)
        return out if per_task else float(out.sum())
    if method == "scale":
        t = log_scale_grid(y, f, a, sigma2, n_points) if grid is None else np.asarray(grid, float)
        log_wt = -a * t - np.exp(-t) - gammaln(a) + _trap_logw(t)
        log_var = np.logaddexp(math.log(sigma2), t - math.log(f))
        out, edge = _kernels.gsm_loglik(y, log_var, log_wt, backend=backend)
    elif method == "v":
        out, edge = _loglik_v(y, f, a, sigma2, grid, n_points)
    else:
        raise ValueError(f"unknown method {method!r}")
    _check_edge(edge)
    return out if per_task else float(out.sum())


def v_grid(y, f, a, sigma2, n_points=4001):
    """Symmetric ``v`` grid of half-width ``50 max(sigma, prior scale)``, widened to cover the data."""
    scale = 1.0 / math.sqrt(f * (a - 1)) if a > 1 else 1.0 / math.sqrt(f)
    half = 50.0 * max(math.sqrt(sigma2), scale)
    half = max(half, float(np.max(np.abs(y))) + 50.0 * math.sqrt(sigma2))
    return np.linspace(-half, half, n_points)


def _loglik_v(y, f, a, sigma2, grid, n_points, chunk=256):
    v = v_grid(y, f, a, sigma2, n_points) if grid is None else np.asarray(grid, float)
    logp = (0.5 * math.log(f) + priors.log_normalizer(PriorConfig.student_t(a), 1)
            - (a + 0.5) * np.log1p(f * v * v / 2))
    base = logp + _trap_logw(v)
    out = np.empty(y.size)
    edge = np.empty(y.size)
    for lo in range(0, y.size, chunk):
        yy = y[lo:lo + chunk, None]
        terms = base[None, :] - 0.5 * (LOG_2PI + math.log(sigma2) + (yy - v) ** 2 / sigma2)
        out[lo:lo + chunk] = logsumexp(terms, axis=1)
        edge[lo:lo + chunk] = np.maximum(terms[:, 0], terms[:, -1]) - out[lo:lo + chunk]
    return out, edge


def grid_search_f(y, candidates, a, sigma2, beta=0.0, return_scores=False, **kw):
    """Candidate maximising ``marginal loglik + K beta log f``.

    Ties go to the smaller candidate, so the answer does not depend on the
    order of ``candidates``.
    """
    cand = np.asarray(candidates, dtype=float).ravel()
    if cand.size == 0:
        raise ValueError("candidate list is empty")
    y = np.atleast_1d(np.asarray(y, float))
    K = y.size
    scores = np.array([marginal_loglik_1d(y, f, a, sigma2, **kw)
                       + (K * beta * math.log(f) if beta > 0 else 0.0) for f in cand])
    order = np.lexsort((cand, -scores))
    best = float(cand[order[0]])
    if return_scores:
        return best, dict(zip(cand.tolist(), scores.tolist()))
    return best


@dataclass
class DensePosterior:
    v: list                # one block per group; zeros for pinned groups
    Sigma: np.ndarray      # covariance over the latent coordinates of active groups
    cols: np.ndarray       # variable index of each latent coordinate
    owner: np.ndarray      # group index of each latent coordinate
    logdet: float
    xtx_trace: float
    resid: float
    w: np.ndarray

    def sq_norm(self, n_groups):
        out = np.zeros(n_groups)
        for j in range(n_groups):
            b = np.asarray(self.v[j])
            out[j] = b @ b
        return out

    def trace(self, n_groups):
        return np.bincount(self.owner, np.diag(self.Sigma), minlength=n_groups) \
            if self.owner.size else np.zeros(n_groups)


def dense_posterior(task, family, zeta, sigma2):
    """Posterior of one task by explicit inversion of the latent precision.

    ``Sigma = (M'X'XM / sigma2 + diag(f / zeta))^-1`` and
    ``v = Sigma M'X'y / sigma2``, over the coordinates of finite-``f``
    groups.  ``zeta`` holds one scale per group.
    """
    zeta = np.asarray(zeta, float)
    act = np.flatnonzero(np.isfinite(family.f))
    d = int(family.sizes[act].sum())
    if d > DENSE_MAX_LATENT:
        raise StructuralError(f"dense oracle limited to {DENSE_MAX_LATENT} latent coordinates, got {d}")
    P = family.n_features
    X = task.design()
    cols = np.concatenate([family.groups[j] for j in act]) if act.size else np.zeros(0, np.int64)
    owner = np.repeat(act, family.sizes[act])
    M = np.zeros((P, d))
    M[cols, np.arange(d)] = 1.0
    XM = X @ M
    prec = XM.T @ XM / sigma2 + np.diag(family.f[owner] / zeta[owner])
    Sigma = np.linalg.inv(prec)
    v_lat = Sigma @ (XM.T @ task.y) / sigma2
    blocks = [np.zeros(n) for n in family.sizes]
    for j in act:
        blocks[j] = v_lat[owner == j]
    w = M @ v_lat
    r = task.y - X @ w
    logdet = float(np.linalg.slogdet(Sigma)[1]) if d else 0.0
    xtx = float(np.trace(XM.T @ XM @ Sigma)) if d else 0.0
    return DensePosterior(blocks, Sigma, cols, owner, logdet, xtx, float(r @ r), w)
