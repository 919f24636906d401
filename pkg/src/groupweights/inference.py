"""Closed-form coordinate updates and the outer fitting loop.

One sweep updates, in order, the Gaussian posterior ``(v^k, Sigma^k)`` of
every task, the variational scales ``zeta``, optionally the noise variance,
and finally the inverse scales ``f``.  Every step exactly minimises the
objective in its own block of variables, so the objective trace is
non-increasing.

The posterior solve has four interchangeable evaluation paths:

``naive``
    factorises the ``sum|A| x sum|A|`` system directly;
``woodbury_p`` / ``woodbury_n``
    use the matrix inversion lemma to factorise a ``P x P`` or
    ``N^k x N^k`` matrix instead;
``identity``
    identity design, where everything reduces to elementwise arithmetic.
"""
import enum
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import _kernels, priors
from .exceptions import NumericalError, StructuralError
from .model import (F_CAP, GroupFamily, HyperParams, PosteriorStats, TaskData,
                    VariationalState, n_obs_of, objective)

log = logging.getLogger(__name__)

ZETA_FLOOR = 1e-12
NAIVE_MAX_LATENT = 2000


class UpdatePath(str, enum.Enum):
    AUTO = "auto"
    NAIVE = "naive"
    WOODBURY_P = "woodbury_p"
    WOODBURY_N = "woodbury_n"
    IDENTITY = "identity"


def _default_jobs():
    try:
        return max(1, int(os.environ.get("GROUPWEIGHTS_NUM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class FitConfig:
    max_sweeps: int = 500
    rel_tol: float = 1e-7
    update_path: UpdatePath = UpdatePath.AUTO
    tie_f: bool = False
    rng_seed: int = 0
    init_f: str = "equal"         # "equal", "data" or "family"
    f_cap: float = F_CAP
    n_jobs: int = field(default_factory=_default_jobs)
    backend: str = None           # kernel backend override: "numba", "numpy", "loop"

    def __post_init__(self):
        self.update_path = UpdatePath(self.update_path)
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_sweeps < 0:
            raise ValueError("max_sweeps must be nonnegative")
        if self.init_f not in ("equal", "data", "family"):
            raise ValueError("init_f must be 'equal', 'data' or 'family'")


@dataclass
class FitResult:
    family: GroupFamily
    state: VariationalState
    objective_trace: list
    w: np.ndarray
    n_sweeps: int
    sigma2: float
    converged: bool

    @property
    def f(self):
        return self.family.f


@dataclass
class TaskStats:
    """Posterior summaries of one task."""

    v: list
    sq_norm: np.ndarray
    trace: np.ndarray
    logdet: float
    xtx_trace: float
    resid: float
    w: np.ndarray

    @property
    def s(self):
        return self.sq_norm + self.trace


# ---------------------------------------------------------------------------
# per-task solves

def _layout(family):
    act = np.flatnonzero(family.active)
    if act.size == 0:
        return act, np.zeros(0, np.int64), np.zeros(0, np.int64)
    cols = np.concatenate([family.groups[j] for j in act])
    owner = np.repeat(np.arange(act.size), family.sizes[act])
    return act, cols, owner


def _check_task(task, family):
    if task.n_features != family.n_features:
        raise StructuralError(
            f"task has {task.n_features} features, family has {family.n_features}")


def _assemble(task, family, act, owner, v_lat, tr_lat, logdet, xtx_trace, w):
    G = family.n_groups
    sq_norm = np.zeros(G)
    trace = np.zeros(G)
    if act.size:
        sq_norm[act] = np.bincount(owner, v_lat * v_lat, minlength=act.size)
        trace[act] = np.bincount(owner, tr_lat, minlength=act.size)
    v = [np.zeros(n) for n in family.sizes]
    for jj, j in enumerate(act):
        v[j] = v_lat[owner == jj]
    r = task.y - (w if task.X is None else task.X @ w)
    return TaskStats(v, sq_norm, trace, float(logdet), float(xtx_trace), float(r @ r), w)


def _h_latent(family, zeta, act, owner):
    return (np.asarray(zeta, float)[act] / family.f[act])[owner]


def update_task_naive(task, family, zeta, sigma2):
    """Posterior of one task by factorising the full latent system.

    ``zeta`` holds one variational scale per group.  Pinned groups are
    excluded from the solve and get zero blocks.
    """
    _check_task(task, family)
    act, cols, owner = _layout(family)
    d = cols.size
    if d > NAIVE_MAX_LATENT:
        raise StructuralError(f"naive path limited to {NAIVE_MAX_LATENT} latent coordinates, got {d}")
    P = family.n_features
    if d == 0:
        return _assemble(task, family, act, owner, np.zeros(0), np.zeros(0),
                         0.0, 0.0, np.zeros(P))
    h = _h_latent(family, zeta, act, owner)
    XM = task.design()[:, cols]
    sq = np.sqrt(h)
    B = XM * sq
    # whitened system sqrt(H) M'X'XM sqrt(H) + sigma2 I; Sigma = sigma2 sqrt(H) A^-1 sqrt(H)
    A = B.T @ B + sigma2 * np.eye(d)
    cf = linalg.cho_factor(A, lower=True)
    v = sq * linalg.cho_solve(cf, B.T @ task.y)
    Ainv = linalg.cho_solve(cf, np.eye(d))
    tr_lat = sigma2 * h * np.diag(Ainv)
    logdet_A = 2.0 * np.log(np.diag(cf[0])).sum()
    logdet = d * math.log(sigma2) + np.log(h).sum() - logdet_A
    xtx_trace = sigma2 * (d - sigma2 * np.trace(Ainv))
    w = np.bincount(cols, v, minlength=P)
    return _assemble(task, family, act, owner, v, tr_lat, logdet, xtx_trace, w)


def _xi(family, zeta, act):
    xi = np.zeros(family.n_features)
    for j in act:
        xi[family.groups[j]] += zeta[j] / family.f[j]
    return xi


def update_task_woodbury(task, family, zeta, sigma2, mode="P"):
    """Posterior of one task through a ``P x P`` or ``N x N`` factorisation.

    Same outputs as :func:`update_task_naive`.  Mode ``"P"`` needs every
    variable covered by a group with finite inverse scale.
    """
    _check_task(task, family)
    mode = mode.upper()
    act, cols, owner = _layout(family)
    P = family.n_features
    if act.size == 0:
        return _assemble(task, family, act, owner, np.zeros(0), np.zeros(0),
                         0.0, 0.0, np.zeros(P))
    zeta = np.asarray(zeta, float)
    h = _h_latent(family, zeta, act, owner)
    xi = _xi(family, zeta, act)
    X = task.design()
    y = task.y
    logh = np.log(h).sum()
    if mode == "P":
        if np.any(xi <= 0):
            raise StructuralError("woodbury_p needs every variable covered by a finite-f group")
        # B = X'X + sigma2 Xi^-1 = Xi^-1/2 C Xi^-1/2 with C = Xi^1/2 X'X Xi^1/2 + sigma2 I
        rx = np.sqrt(xi)
        Xs = X * rx
        C = Xs.T @ Xs + sigma2 * np.eye(P)
        cf = linalg.cho_factor(C, lower=True)
        Cinv = linalg.cho_solve(cf, np.eye(P))
        w = rx * linalg.cho_solve(cf, rx * (X.T @ y))
        v = h * (w / xi)[cols]
        # diag of Xi^-1 B^-1 Xi^-1 is diag(C^-1) / xi
        tr_lat = h - h * h * ((1.0 - sigma2 * np.diag(Cinv)) / xi)[cols]
        logdet = logh - 2.0 * np.log(np.diag(cf[0])).sum() + P * math.log(sigma2)
        xtx_trace = sigma2 * (P - sigma2 * np.trace(Cinv))
    elif mode == "N":
        N = y.size
        C = (X * xi) @ X.T + sigma2 * np.eye(N)
        cf = linalg.cho_factor(C, lower=True)
        alpha = linalg.cho_solve(cf, y)
        Xta = X.T @ alpha
        w = xi * Xta
        v = h * Xta[cols]
        CiX = linalg.cho_solve(cf, X)
        diag_q = np.einsum("ni,ni->i", X, CiX)
        tr_lat = h - h * h * diag_q[cols]
        Cinv_tr = np.trace(linalg.cho_solve(cf, np.eye(N)))
        logdet = logh - 2.0 * np.log(np.diag(cf[0])).sum() + N * math.log(sigma2)
        xtx_trace = sigma2 * (N - sigma2 * Cinv_tr)
    else:
        raise ValueError(f"unknown woodbury mode {mode!r}")
    return _assemble(task, family, act, owner, v, tr_lat, logdet, xtx_trace, w)


def identity_v_blocks(y, family, zeta, sigma2):
    """Posterior mean blocks for one identity-design task."""
    act = np.flatnonzero(family.active)
    zeta = np.asarray(zeta, float)
    xi = _xi(family, zeta, act)
    r = np.asarray(y, float) / (xi + sigma2)
    v = [np.zeros(n) for n in family.sizes]
    for j in act:
        v[j] = zeta[j] / family.f[j] * r[family.groups[j]]
    return v


def identity_design_stats(Y, family, zeta, sigma2, backend=None):
    """Posterior summaries of all identity-design tasks at once.

    ``Y`` is ``(K, P)`` and ``zeta`` is ``(K, G)``.
    """
    Y = np.atleast_2d(np.asarray(Y, float))
    zeta = np.atleast_2d(np.asarray(zeta, float))
    if Y.shape[1] != family.n_features:
        raise StructuralError(f"Y has {Y.shape[1]} columns, family has {family.n_features} features")
    if zeta.shape != (Y.shape[0], family.n_groups):
        raise StructuralError(f"zeta has shape {zeta.shape}, expected {(Y.shape[0], family.n_groups)}")
    act = family.active
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(act, zeta / np.where(act, family.f, 1.0), 0.0)
    sq_norm, trace, logdet, xtx, resid, w = _kernels.identity_stats(
        Y, h, family.ptr, family.indices, family.sizes, act, sigma2, backend=backend)
    return PosteriorStats(sq_norm, trace, logdet, xtx, resid, w)


def update_task_identity_design(task, family, zeta, sigma2, backend=None):
    """Identity-design posterior of one task; no matrix factorisation."""
    if not task.is_identity:
        raise StructuralError("identity path needs an identity design")
    _check_task(task, family)
    st = identity_design_stats(task.y[None, :], family, np.asarray(zeta, float)[None, :],
                               sigma2, backend=backend)
    v = identity_v_blocks(task.y, family, zeta, sigma2)
    return TaskStats(v, st.sq_norm[0], st.trace[0], float(st.logdet[0]),
                     float(st.xtx_trace[0]), float(st.resid[0]), st.w[0])


def choose_path(task, family):
    """Cheapest applicable evaluation path for one task."""
    if task.is_identity:
        return UpdatePath.IDENTITY
    N, P = task.X.shape
    d = int(family.sizes[family.active].sum())
    if P <= N and P <= d and family.covers(only_active=True):
        return UpdatePath.WOODBURY_P
    if N < P:
        return UpdatePath.WOODBURY_N
    return UpdatePath.NAIVE


def solve_task(task, family, zeta, sigma2, path=UpdatePath.AUTO, backend=None):
    path = UpdatePath(path)
    if path is UpdatePath.AUTO:
        path = choose_path(task, family)
    if path is UpdatePath.NAIVE:
        return update_task_naive(task, family, zeta, sigma2)
    if path is UpdatePath.WOODBURY_P:
        return update_task_woodbury(task, family, zeta, sigma2, "P")
    if path is UpdatePath.WOODBURY_N:
        return update_task_woodbury(task, family, zeta, sigma2, "N")
    return update_task_identity_design(task, family, zeta, sigma2, backend=backend)


def solve_all(data, family, zeta, sigma2, path=UpdatePath.AUTO, n_jobs=1, backend=None):
    """Posterior summaries of every task as :class:`PosteriorStats`."""
    path = UpdatePath(path)
    if isinstance(data, np.ndarray):
        if path not in (UpdatePath.AUTO, UpdatePath.IDENTITY):
            data = [TaskData(y) for y in data]
        else:
            return identity_design_stats(data, family, zeta, sigma2, backend=backend)

    def one(k):
        return solve_task(data[k], family, zeta[k], sigma2, path, backend)

    if n_jobs > 1 and len(data) > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            out = list(ex.map(one, range(len(data))))
    else:
        out = [one(k) for k in range(len(data))]
    return PosteriorStats(
        sq_norm=np.array([o.sq_norm for o in out]),
        trace=np.array([o.trace for o in out]),
        logdet=np.array([o.logdet for o in out]),
        xtx_trace=np.array([o.xtx_trace for o in out]),
        resid=np.array([o.resid for o in out]),
        w=np.array([o.w for o in out]),
        v=[o.v for o in out])


# ---------------------------------------------------------------------------
# hyperparameter updates

def update_f(stats, K, card, beta):
    """Regularised update ``K (beta + |A|/2) / (1/2 sum_k s_A^k / zeta_A^k)``.

    ``stats`` is the per-group sum over tasks of ``s / zeta``.  A zero
    denominator gives ``inf``.
    """
    stats = np.asarray(stats, float)
    num = K * (beta + np.asarray(card, float) / 2)
    with np.errstate(divide="ignore"):
        return np.where(stats > 0, num / (0.5 * np.where(stats > 0, stats, 1.0)), np.inf)


def update_f_tied(stats, K, card, beta):
    """Single inverse scale shared by all groups (the LASSO-like model)."""
    stats = np.asarray(stats, float)
    num = K * np.sum(beta + np.asarray(card, float) / 2)
    den = 0.5 * stats.sum()
    return num / den if den > 0 else np.inf


def update_sigma2(resid, xtx_trace, n_obs):
    """Noise variance update, floored at machine epsilon."""
    val = (np.sum(resid) + np.sum(xtx_trace)) / np.sum(n_obs)
    return max(float(val), np.finfo(float).eps)


def _energy(data, family):
    if isinstance(data, np.ndarray):
        energy = float(np.mean(np.sum(data * data, axis=1)))
    else:
        energy = float(np.mean([t.y @ t.y * family.n_features / t.n_obs for t in data]))
    return max(energy, np.finfo(float).tiny)


def _unit_variance(family, prior):
    if prior.is_student_t and prior.shape <= 1:
        return family.sizes.astype(float)
    return np.asarray(priors.expected_sq_norm(prior, family.sizes, 1.0), float)


def initial_f(data, family, prior, mode="equal"):
    """Starting inverse scales matched to the response energy.

    The energy is the mean over tasks of ``||y^k||^2``, rescaled to ``P``
    coordinates for non-square designs.  ``"equal"`` uses one common value
    such that the prior variances of all groups add up to that energy
    (every group gets the same variance per coefficient); ``"data"``
    instead gives every group the same share of the energy.
    """
    energy = _energy(data, family)
    unit = _unit_variance(family, prior)
    with np.errstate(over="ignore"):
        if mode == "equal":
            return np.minimum(np.full(family.n_groups, unit.sum() / energy), F_CAP)
        if mode == "data":
            return np.minimum(unit / (energy / family.n_groups), F_CAP)
    raise ValueError(f"unknown initialisation {mode!r}")


# ---------------------------------------------------------------------------
# outer loop

def _first_bad(*arrays):
    for a in arrays:
        a = np.asarray(a)
        bad = ~np.isfinite(a)
        if bad.any():
            return np.argwhere(bad)[0]
    return None


def _check_finite(stats, zeta):
    for name, arr in (("sq_norm", stats.sq_norm), ("trace", stats.trace), ("zeta", zeta)):
        loc = _first_bad(arr)
        if loc is not None:
            k, j = int(loc[0]), int(loc[1])
            raise NumericalError(f"non-finite {name} in task {k}, group {j}", task=k, group=j)
    for name, arr in (("logdet", stats.logdet), ("xtx_trace", stats.xtx_trace), ("resid", stats.resid)):
        loc = _first_bad(arr)
        if loc is not None:
            k = int(loc[0])
            raise NumericalError(f"non-finite {name} in task {k}", task=k)


def _as_data(data, path):
    """Stack identity-design tasks into a matrix when the batched path applies."""
    if isinstance(data, np.ndarray):
        if data.ndim != 2:
            raise StructuralError("a response matrix must be 2-D (tasks x variables)")
        return np.asarray(data, float)
    data = list(data)
    if not data:
        raise StructuralError("no tasks")
    ident = all(t.is_identity for t in data)
    if path is UpdatePath.IDENTITY and not ident:
        raise StructuralError("identity path requested for a task with a design matrix")
    if ident and path in (UpdatePath.AUTO, UpdatePath.IDENTITY) \
            and len({t.n_obs for t in data}) == 1:
        return np.array([t.y for t in data])
    return data


def fit(data, family, prior, hp, cfg=None):
    """Learn the inverse scales ``f`` of ``family`` from multi-task data.

    Parameters
    ----------
    data : list of TaskData, or (K, P) array of identity-design responses
    family : GroupFamily
        Groups must cover every variable.  With ``cfg.init_f == "family"``
        its (finite) ``f`` is the starting point.
    prior : PriorConfig
    hp : HyperParams
    cfg : FitConfig, optional

    Returns
    -------
    FitResult
    """
    cfg = cfg or FitConfig()
    data = _as_data(data, cfg.update_path)
    K = data.shape[0] if isinstance(data, np.ndarray) else len(data)
    if not family.covers():
        raise StructuralError("the group family must cover every variable")
    if cfg.init_f != "family":
        f = initial_f(data, family, prior, cfg.init_f)
    else:
        f = np.array(family.f, float)
        if not np.all(np.isfinite(f)):
            raise StructuralError("initial inverse scales must be finite")
    fam = family.with_f(f)
    sizes = fam.sizes.astype(float)
    G = fam.n_groups
    zeta = np.ones((K, G))
    sigma2 = float(hp.sigma2)
    n_obs = n_obs_of(data)
    trace_obj = []
    converged = False
    state = None
    sweeps = 0
    for sweep in range(cfg.max_sweeps):
        sweeps = sweep + 1
        stats = solve_all(data, fam, zeta, sigma2, cfg.update_path, cfg.n_jobs, cfg.backend)
        _check_finite(stats, zeta)
        act = fam.active
        s = stats.s
        new_zeta = np.empty_like(zeta)
        if act.any():
            new_zeta[:, act] = priors.zeta_argmin(prior, sizes[act], fam.f[act], s[:, act])
        if (~act).any():
            new_zeta[:, ~act] = priors.pinned_zeta(prior, sizes[~act])
        zeta = np.maximum(new_zeta, ZETA_FLOOR)
        if hp.learn_sigma2:
            sigma2 = update_sigma2(stats.resid, stats.xtx_trace, n_obs)
        f = np.array(fam.f)
        if act.any():
            S = (s[:, act] / zeta[:, act]).sum(axis=0)
            if cfg.tie_f:
                f[act] = update_f_tied(S, K, sizes[act], hp.beta)
            else:
                f[act] = update_f(S, K, sizes[act], hp.beta)
            f[act] = np.minimum(f[act], cfg.f_cap)
        fam = fam.with_f(f)
        state = VariationalState(stats, zeta, sigma2)
        obj = objective(state, data, fam, prior, hp)
        if not np.isfinite(obj):
            raise NumericalError(f"objective became non-finite at sweep {sweeps}")
        trace_obj.append(obj)
        pinned = np.isfinite(fam.f) & (fam.f >= cfg.f_cap)
        if pinned.any():
            f = np.array(fam.f)
            f[pinned] = np.inf
            fam = fam.with_f(f)
        if len(trace_obj) > 1 and abs(trace_obj[-2] - obj) <= cfg.rel_tol * abs(obj) \
                and not pinned.any():
            converged = True
            break
    final = solve_all(data, fam, zeta, sigma2, cfg.update_path, cfg.n_jobs, cfg.backend)
    if state is None:
        state = VariationalState(final, zeta, sigma2)
    log.debug("fit finished after %d sweeps (converged=%s)", sweeps, converged)
    return FitResult(family=fam, state=state, objective_trace=trace_obj, w=final.w,
                     n_sweeps=sweeps, sigma2=sigma2, converged=converged)
