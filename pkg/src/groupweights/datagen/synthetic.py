"""Synthetic multi-task denoising data drawn from the model itself."""
import enum
from dataclasses import dataclass, field

import numpy as np

from .. import priors
from ..model import GroupFamily, TaskData
from ..priors import PriorConfig


class Scenario(str, enum.Enum):
    ONE_VAR = "one_var"
    TWO_VAR = "two_var"
    SINGLETONS = "singletons"
    ONE_GROUP = "one_group"
    OVERLAPPING = "overlapping"
    CUSTOM = "custom"


@dataclass
class ScenarioSpec:
    """Parameters of a synthetic data set.

    For ``two_var``, ``f_relevant`` is the inverse scale of the pair and
    ``f_irrelevant`` that of both singletons.  ``sigma2=None`` sets the
    noise so that ``P sigma2`` equals the expected total signal variance.
    ``custom`` draws from ``family`` with its own ``f``.
    """

    scenario: Scenario
    K: int
    P: int = 10
    prior: PriorConfig = field(default_factory=lambda: PriorConfig.student_t(1.5))
    f_relevant: float = 0.2
    f_irrelevant: float = 200.0
    sigma2: float = None
    seed: int = 0
    n_relevant: int = 5
    family: GroupFamily = None

    def __post_init__(self):
        self.scenario = Scenario(self.scenario)
        if self.scenario is Scenario.ONE_VAR:
            self.P = 1
        elif self.scenario is Scenario.TWO_VAR:
            self.P = 2
        elif self.scenario is Scenario.CUSTOM:
            if self.family is None:
                raise ValueError("custom scenario needs a family")
            self.P = self.family.n_features


def scenario_family(spec):
    """The true family (with true inverse scales) of a scenario."""
    sc = spec.scenario
    if sc is Scenario.CUSTOM:
        return spec.family
    if sc is Scenario.ONE_VAR:
        return GroupFamily([[0]], 1, [spec.f_relevant])
    if sc is Scenario.TWO_VAR:
        return GroupFamily([[0], [1], [0, 1]], 2,
                           [spec.f_irrelevant, spec.f_irrelevant, spec.f_relevant])
    P, m = spec.P, spec.n_relevant
    fam = GroupFamily.prefixes(P)
    rel = np.zeros(fam.n_groups, dtype=bool)
    keys = fam.keys()
    if sc is Scenario.SINGLETONS:
        wanted = {(i,) for i in range(m)}
    elif sc is Scenario.ONE_GROUP:
        wanted = {tuple(range(m))}
    else:
        wanted = {tuple(range(q + 1)) for q in range(m)}
    for j, key in enumerate(keys):
        rel[j] = key in wanted
    return fam.with_f(np.where(rel, spec.f_relevant, spec.f_irrelevant))


def signal_variance(family, prior):
    """Expected ``||w||^2`` of one task."""
    return float(np.sum(priors.expected_sq_norm(prior, family.sizes, family.f)))


def add_noise(signals, sigma2, rng):
    """Add i.i.d. ``N(0, sigma2)`` noise elementwise."""
    signals = np.asarray(signals, float)
    if sigma2 == 0:
        return signals.copy()
    return signals + np.sqrt(sigma2) * rng.standard_normal(signals.shape)


def sample_signals(family, prior, K, rng):
    """Draw ``K`` signals ``w = sum_A v_A`` with ``v_A ~ p(. | f(A))``."""
    W = np.zeros((K, family.n_features))
    for g, f in zip(family.groups, family.f):
        if np.isfinite(f):
            W[:, g] += priors.sample(prior, g.size, f, rng, size=K)
    return W


def gen_tasks(spec, rng=None):
    """Generate identity-design tasks.

    Returns ``(Y, W, family, sigma2)`` where ``Y`` and ``W`` are ``(K, P)``
    noisy and clean signals and ``family`` carries the true inverse scales.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    family = scenario_family(spec)
    sigma2 = spec.sigma2
    if sigma2 is None:
        sigma2 = signal_variance(family, spec.prior) / family.n_features
    W = sample_signals(family, spec.prior, spec.K, rng)
    Y = add_noise(W, sigma2, rng)
    return Y, W, family, sigma2


def as_tasks(Y):
    """Wrap the rows of a response matrix as identity-design tasks."""
    return [TaskData(y) for y in np.asarray(Y, float)]
