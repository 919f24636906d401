"""Greedy discovery of relevant groups by growing and pruning an active set.

Start from singletons, rank groups by ``f(A) / |A|`` (smaller is more
relevant), propose pairwise unions of the best-ranked groups, refit, and
permanently discard the least relevant non-singletons.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .inference import FitConfig, fit, initial_f
from .model import GroupFamily

log = logging.getLogger(__name__)


@dataclass
class ActiveSetConfig:
    T: int                 # maximal number of groups fitted at once
    D: int                 # non-singletons discarded per round
    max_rounds: int = 5
    new_scale: float = 10.0  # start of a new union, relative to the data-driven f

    def __post_init__(self):
        if self.D < 1:
            raise ValueError("D must be at least 1")
        if self.T < 1:
            raise ValueError("T must be positive")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be nonnegative")
        if not self.new_scale > 0:
            raise ValueError("new_scale must be positive")


@dataclass
class ActiveSetResult:
    fit: object                      # FitResult of the last round
    family: GroupFamily              # retained groups after the last pruning
    rounds: int
    history: set = field(default_factory=set)
    discarded: set = field(default_factory=set)
    round_objectives: list = field(default_factory=list)

    @property
    def w(self):
        return self.fit.w

    @property
    def f(self):
        return self.fit.f


def relevance(family):
    """``f(A) / |A|``; smaller means more relevant."""
    return family.f / family.sizes


def rank_groups(family):
    """Group indices from most to least relevant.

    Ties are broken by smaller size, then lexicographic index order;
    pinned groups (``f = inf``) come last.
    """
    rel = relevance(family)
    keys = family.keys()
    return sorted(range(family.n_groups),
                  key=lambda j: (np.isinf(rel[j]), rel[j], len(keys[j]), keys[j]))


def propose_candidates(ranked, T, history):
    """Pairwise unions ``A_1 u A_2, ..., A_1 u A_n, A_2 u A_3, ...`` of ranked groups.

    ``ranked`` is a list of index tuples in relevance order.  Unions already
    in ``history`` or already proposed are skipped, and at most
    ``T - len(ranked)`` groups are returned.
    """
    room = T - len(ranked)
    out = []
    if room <= 0:
        return out
    seen = set(history) | {tuple(g) for g in ranked}
    for i in range(len(ranked)):
        for j in range(i + 1, len(ranked)):
            u = tuple(sorted(set(ranked[i]) | set(ranked[j])))
            if u in seen:
                continue
            seen.add(u)
            out.append(u)
            if len(out) >= room:
                return out
    return out


def _warm_family(groups, learned, data, n_features, prior, new_scale):
    """Family with learned inverse scales where available.

    A new union enters weak and has to earn its variance: it starts
    ``new_scale`` times weaker per coefficient than both the data-driven
    value and its weakest unpinned member singleton.  The member bound
    matters when the response energy is dominated by a few coefficients,
    which makes the data-driven value far too strong for everything else.
    """
    fam = GroupFamily(groups, n_features)
    f0 = initial_f(data, fam, prior)
    for j, key in enumerate(fam.keys()):
        f = learned.get(key)
        if f is not None and np.isfinite(f):
            f0[j] = f
        elif len(key) > 1:
            members = [learned.get((i,), np.inf) for i in key]
            members = [m for m in members if np.isfinite(m)]
            f0[j] = new_scale * max(members + [f0[j]])
    return fam.with_f(f0)


def active_set_fit(data, prior, hp, fit_cfg=None, as_cfg=None, n_features=None):
    """Fit while discovering groups; see the module docstring.

    ``data`` is a ``(K, P)`` identity-design matrix or a list of tasks.
    Retained groups are warm-started from their learned inverse scales;
    new unions start weak (see ``ActiveSetConfig.new_scale``).
    """
    fit_cfg = fit_cfg or FitConfig()
    if n_features is None:
        n_features = data.shape[1] if isinstance(data, np.ndarray) else data[0].n_features
    if as_cfg is None:
        as_cfg = ActiveSetConfig(T=4 * n_features, D=2 * n_features)
    if as_cfg.T < n_features:
        raise ValueError("T must be at least the number of variables")
    cfg_warm = FitConfig(**{**fit_cfg.__dict__, "init_f": "family"})

    current = [(i,) for i in range(n_features)]
    history = set(current)
    discarded = set()
    fam = _warm_family(current, {}, data, n_features, prior, as_cfg.new_scale)
    res = fit(data, fam, prior, hp, cfg_warm)
    objectives = [res.objective_trace[-1] if res.objective_trace else None]
    ranked = [res.family.keys()[j] for j in rank_groups(res.family)]
    learned = dict(zip(res.family.keys(), res.family.f))
    cand = propose_candidates(ranked, as_cfg.T, history)
    rounds = 0
    retained = res.family
    while rounds < as_cfg.max_rounds and cand:
        history.update(cand)
        groups = ranked + cand
        fam = _warm_family(groups, learned, data, n_features, prior, as_cfg.new_scale)
        res = fit(data, fam, prior, hp, cfg_warm)
        objectives.append(res.objective_trace[-1] if res.objective_trace else None)
        order = rank_groups(res.family)
        keys = res.family.keys()
        nonsingle = [j for j in order if len(keys[j]) > 1]
        drop = set(nonsingle[-as_cfg.D:]) if nonsingle else set()
        discarded.update(keys[j] for j in drop)
        keep = [j for j in order if j not in drop]
        retained = res.family.select(np.array(sorted(keep), dtype=np.int64))
        ranked = [keys[j] for j in keep]
        learned = dict(zip(keys, res.family.f))
        cand = propose_candidates(ranked, as_cfg.T, history)
        rounds += 1
        log.debug("active set round %d: %d groups, %d candidates", rounds, len(ranked), len(cand))
    return ActiveSetResult(fit=res, family=retained, rounds=rounds, history=history,
                           discarded=discarded, round_objectives=objectives)
