"""Multi-task data model, group families and the variational objective."""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import priors
from .exceptions import DomainError, StructuralError

LOG_2PI = math.log(2.0 * math.pi)

#: Inverse scales at or above this value are promoted to ``inf``.
F_CAP = 1e12


class GroupFamily:
    """An ordered family of variable groups with one inverse scale per group.

    Groups are stored as sorted 0-based index arrays.  ``f[j] = inf`` marks
    group ``j`` as irrelevant: its coefficients are pinned at zero.

    Parameters
    ----------
    groups : iterable of iterables of int
    n_features : int
        Number of variables ``P``.
    f : array_like, optional
        Inverse scales; defaults to ones.
    """

    def __init__(self, groups, n_features, f=None):
        self.n_features = int(n_features)
        if self.n_features < 1:
            raise StructuralError("n_features must be positive")
        arrs = []
        seen = set()
        for g in groups:
            a = np.unique(np.asarray(list(g), dtype=np.int64))
            if a.size == 0:
                raise StructuralError("groups must be nonempty")
            if a[0] < 0 or a[-1] >= self.n_features:
                raise StructuralError(f"group {a.tolist()} has indices outside [0, {self.n_features})")
            key = tuple(a.tolist())
            if key in seen:
                raise StructuralError(f"duplicate group {list(key)}")
            seen.add(key)
            a.setflags(write=False)
            arrs.append(a)
        if not arrs:
            raise StructuralError("a family needs at least one group")
        self.groups = tuple(arrs)
        self.sizes = np.array([a.size for a in arrs], dtype=np.int64)
        self.ptr = np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.int64)
        self.indices = np.concatenate(arrs).astype(np.int64)
        for a in (self.sizes, self.ptr, self.indices):
            a.setflags(write=False)
        if f is None:
            f = np.ones(len(arrs))
        f = np.array(f, dtype=float).ravel()
        if f.shape != (len(arrs),):
            raise StructuralError(f"expected {len(arrs)} inverse scales, got {f.size}")
        if np.any(np.isnan(f)) or np.any(f <= 0):
            raise DomainError("inverse scales must be positive (inf allowed)")
        f.setflags(write=False)
        self.f = f
        self._incidence = None

    # construction helpers
    @classmethod
    def singletons(cls, n_features, f=None):
        return cls([[i] for i in range(n_features)], n_features, f)

    @classmethod
    def prefixes(cls, n_features, f=None):
        """Singletons followed by the prefixes ``{0..q}`` for ``q = 1..P-1``."""
        groups = [[i] for i in range(n_features)]
        groups += [list(range(q + 1)) for q in range(1, n_features)]
        return cls(groups, n_features, f)

    def with_f(self, f):
        out = GroupFamily.__new__(GroupFamily)
        out.__dict__.update(self.__dict__)
        f = np.array(f, dtype=float).ravel()
        if f.shape != self.f.shape:
            raise StructuralError("inverse scale vector has the wrong length")
        if np.any(np.isnan(f)) or np.any(f <= 0):
            raise DomainError("inverse scales must be positive (inf allowed)")
        f.setflags(write=False)
        out.f = f
        return out

    def select(self, mask):
        """Sub-family of groups where ``mask`` is true (or the given indices)."""
        idx = np.arange(self.n_groups)[mask]
        return GroupFamily([self.groups[i] for i in idx], self.n_features, self.f[idx])

    @property
    def n_groups(self):
        return len(self.groups)

    @property
    def n_latent(self):
        return int(self.ptr[-1])

    @property
    def active(self):
        """Mask of groups with finite inverse scale."""
        return np.isfinite(self.f)

    @property
    def incidence(self):
        """Sparse ``G x P`` 0/1 matrix; row ``j`` is the indicator of group ``j``."""
        if self._incidence is None:
            rows = np.repeat(np.arange(self.n_groups), self.sizes)
            self._incidence = sparse.csr_matrix(
                (np.ones(self.indices.size), (rows, self.indices)),
                shape=(self.n_groups, self.n_features))
        return self._incidence

    def keys(self):
        return [tuple(g.tolist()) for g in self.groups]

    def covers(self, only_active=False):
        groups = self.groups
        if only_active:
            groups = [g for g, a in zip(groups, self.active) if a]
        hit = np.zeros(self.n_features, dtype=bool)
        for g in groups:
            hit[g] = True
        return bool(hit.all())

    def __len__(self):
        return self.n_groups

    def __repr__(self):
        return f"GroupFamily(n_groups={self.n_groups}, n_features={self.n_features})"


@dataclass(frozen=True)
class TaskData:
    """One regression task.  ``X=None`` means the identity design (denoising)."""

    y: np.ndarray
    X: np.ndarray = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        if y.size < 1 or not np.all(np.isfinite(y)):
            raise DomainError("y must be a nonempty finite vector")
        object.__setattr__(self, "y", y)
        if self.X is not None:
            X = np.asarray(self.X, dtype=float)
            if X.ndim != 2 or X.shape[0] != y.size:
                raise StructuralError(f"X has shape {X.shape}, expected ({y.size}, P)")
            if not np.all(np.isfinite(X)):
                raise DomainError("X must be finite")
            object.__setattr__(self, "X", X)

    @property
    def is_identity(self):
        return self.X is None

    @property
    def n_obs(self):
        return self.y.size

    @property
    def n_features(self):
        return self.y.size if self.X is None else self.X.shape[1]

    def design(self):
        return np.eye(self.y.size) if self.X is None else self.X


@dataclass(frozen=True)
class HyperParams:
    sigma2: float
    beta: float = 0.0
    learn_sigma2: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise DomainError(f"beta must be nonnegative, got {self.beta}")


@dataclass
class PosteriorStats:
    """Summaries of the Gaussian posterior ``N(v^k, Sigma^k)`` of every task.

    All arrays are indexed by task first; group-wise arrays are ``(K, G)``
    and hold zeros for pinned groups.
    """

    sq_norm: np.ndarray    # ||v_A||^2
    trace: np.ndarray      # tr Sigma_AA
    logdet: np.ndarray     # log det Sigma
    xtx_trace: np.ndarray  # tr(M' X' X M Sigma)
    resid: np.ndarray      # ||y - X M v||^2
    w: object = None       # (K, P) array of X-space coefficients M v
    v: list = None         # per-task list of per-group blocks, when materialised

    @property
    def s(self):
        return self.sq_norm + self.trace

    @property
    def n_tasks(self):
        return self.sq_norm.shape[0]


@dataclass
class VariationalState:
    """Posterior summaries together with the variational scales ``zeta``."""

    stats: PosteriorStats
    zeta: np.ndarray
    sigma2: float = None
    meta: dict = field(default_factory=dict)


def expand(family, v_blocks):
    """Scatter per-group blocks into a length-``P`` vector (``w = M v``)."""
    if len(v_blocks) != family.n_groups:
        raise StructuralError(f"expected {family.n_groups} blocks, got {len(v_blocks)}")
    w = np.zeros(family.n_features)
    for g, b in zip(family.groups, v_blocks):
        b = np.asarray(b, dtype=float).ravel()
        if b.size != g.size:
            raise StructuralError(f"block of length {b.size} for group of size {g.size}")
        np.add.at(w, g, b)
    return w


def n_obs_of(data):
    """Vector of ``N^k`` for a list of tasks or an identity-design matrix."""
    if isinstance(data, np.ndarray):
        return np.full(data.shape[0], data.shape[1], dtype=float)
    return np.array([t.n_obs for t in data], dtype=float)


def objective(state, data, family, prior, hp, sigma2=None):
    """Variational objective to be minimised, including the hyperprior term.

    Finite groups contribute the full per-group terms.  A pinned group
    (``f = inf``) contributes its limit ``phi(zeta) - |A|/2 log(2 pi zeta)``
    per task, and its hyperprior term is evaluated at :data:`F_CAP`.
    """
    st = state.stats
    zeta = state.zeta
    s2 = sigma2 if sigma2 is not None else (state.sigma2 or hp.sigma2)
    n_obs = n_obs_of(data)
    K = st.n_tasks
    f = family.f
    act = np.isfinite(f)
    sizes = family.sizes.astype(float)

    per_task = (st.resid / (2 * s2) - 0.5 * st.logdet + n_obs / 2 * (math.log(s2) + LOG_2PI)
                + st.xtx_trace / (2 * s2))
    total = float(per_task.sum())
    if act.any():
        fa, na, za = f[act], sizes[act], zeta[:, act]
        total += 0.5 * float(np.sum(fa / za * st.s[:, act]))
        total += K * float(np.sum(-0.5 * na - 0.5 * na * np.log(fa) - 0.5 * na * LOG_2PI))
        total += float(np.sum(priors.phi(prior, na, za)))
    if (~act).any():
        total += float(np.sum(priors.pinned_terms(prior, sizes[~act], zeta[:, ~act])))
    if hp.beta > 0:
        total -= K * hp.beta * float(np.sum(np.log(np.minimum(f, F_CAP))))
    return total


def explained_variance(family, prior):
    """Expected ``||v_A||^2`` of every group under the learned prior."""
    return np.asarray(priors.expected_sq_norm(prior, family.sizes, family.f), dtype=float)


def explained_variance_shares(family, prior):
    var = explained_variance(family, prior)
    tot = var.sum()
    return var / tot if tot > 0 else np.zeros_like(var)
