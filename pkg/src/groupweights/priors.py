"""Super-Gaussian prior families on group coefficient blocks.

Both families are isotropic: the density of a block ``v`` of length ``n``
with inverse scale ``f`` depends on ``v`` only through ``||v||^2 f``::

    p(v | f) = f^(n/2) q_n(||v|| sqrt(f))

and ``log q_n(u) = sup_s -u^2 / (2 s) - phi_n(s)``.  The conjugate function
``phi_n`` is what enters the variational objective, and the maximiser in
``s`` is the variational scale ``zeta``.
"""
import enum
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import gammaln

from .exceptions import DomainError

LOG_2PI = math.log(2.0 * math.pi)

_DEBUG = os.environ.get("GROUPWEIGHTS_DEBUG", "") not in ("", "0")


class PriorFamily(str, enum.Enum):
    STUDENT_T = "student_t"
    GENERALIZED_GAUSSIAN = "generalized_gaussian"


@dataclass(frozen=True)
class PriorConfig:
    """Prior family and its shape parameter.

    ``shape`` is ``a`` for Student's t and ``gamma`` for the generalized
    Gaussian, which is only super-Gaussian for ``0 < gamma < 2``.
    """

    family: PriorFamily
    shape: float

    def __post_init__(self):
        object.__setattr__(self, "family", PriorFamily(self.family))
        if not (np.isfinite(self.shape) and self.shape > 0):
            raise DomainError(f"prior shape must be positive, got {self.shape}")
        if self.family is PriorFamily.GENERALIZED_GAUSSIAN and not self.shape < 2:
            raise DomainError(f"generalized Gaussian needs 0 < gamma < 2, got {self.shape}")

    @classmethod
    def student_t(cls, a):
        return cls(PriorFamily.STUDENT_T, float(a))

    @classmethod
    def generalized_gaussian(cls, gamma):
        return cls(PriorFamily.GENERALIZED_GAUSSIAN, float(gamma))

    @property
    def is_student_t(self):
        return self.family is PriorFamily.STUDENT_T


def _check_positive(name, x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise DomainError(f"{name} must be finite and positive")
    return x


def log_normalizer(prior, card):
    """Log of the normalising constant of ``q_n`` (the density at ``f = 1``)."""
    n = np.asarray(card, dtype=float)
    if prior.is_student_t:
        a = prior.shape
        return gammaln(a + n / 2) - gammaln(a) - n / 2 * LOG_2PI
    g = prior.shape
    # gamma Gamma(n/2) / (2 pi^(n/2) Gamma(n/g)), the normaliser of exp(-r^g) on R^n
    return math.log(g) + gammaln(n / 2) - math.log(2.0) - n / 2 * math.log(math.pi) - gammaln(n / g)


def log_density(prior, f, v):
    """Log density ``log p(v | f)`` of one coefficient block."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size < 1:
        raise DomainError("a group block needs at least one coefficient")
    if not np.all(np.isfinite(v)):
        raise DomainError("v must be finite")
    f = float(_check_positive("f", f))
    n = v.size
    u2 = float(v @ v) * f
    out = n / 2 * math.log(f) + log_normalizer(prior, n)
    if prior.is_student_t:
        return float(out - (prior.shape + n / 2) * math.log1p(u2 / 2))
    return float(out - u2 ** (prior.shape / 2))


def phi(prior, card, zeta):
    """Conjugate function ``phi_n(zeta)``; vectorised over ``card`` and ``zeta``."""
    zeta = _check_positive("zeta", zeta)
    n = np.asarray(card, dtype=float)
    if prior.is_student_t:
        a = prior.shape
        c = a + n / 2
        return (1.0 / zeta + c * np.log(zeta) + n / 2 * LOG_2PI
                - c + c * np.log(c) - gammaln(c) + gammaln(a))
    g = prior.shape
    p = g / (2 - g)
    return -log_normalizer(prior, n) + (1 - g / 2) * (g * zeta) ** p


def _numeric_zeta_argmin(prior, card, fs):
    """Golden-section search for ``argmin_z phi(z) + fs / (2 z)`` over ``log z``."""
    def obj(t):
        z = math.exp(t)
        return float(phi(prior, card, z)) + fs / (2 * z)

    lo, hi = -40.0, 40.0
    if fs > 0:
        centre = 0.5 * math.log(fs)
        lo, hi = centre - 40.0, centre + 40.0
    res = optimize.minimize_scalar(obj, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12, "maxiter": 500})
    return math.exp(res.x)


def zeta_argmin(prior, card, f, s):
    """Minimiser over ``z`` of ``phi_n(z) + f s / (2 z)``.

    ``s`` is the block statistic ``||v_A||^2 + tr Sigma_AA``.  Vectorised.
    """
    n = np.asarray(card, dtype=float)
    fs = np.asarray(f, dtype=float) * np.asarray(s, dtype=float)
    if np.any(fs < 0):
        raise DomainError("f * s must be nonnegative")
    if prior.is_student_t:
        return (1.0 + fs / 2) / (prior.shape + n / 2)
    g = prior.shape
    z = np.asarray(fs ** ((2 - g) / 2) / g, dtype=float)
    bad = ~np.isfinite(z) | (z <= 0)
    if np.any(bad & (fs > 0)) or _DEBUG:
        z = np.array(z, dtype=float)
        nb, fsb = np.broadcast_arrays(n, fs)
        zb = np.broadcast_to(z, nb.shape).copy()
        for idx in zip(*np.nonzero(np.broadcast_to(bad, nb.shape) & (fsb > 0))):
            zb[idx] = _numeric_zeta_argmin(prior, nb[idx], fsb[idx])
        if _DEBUG:
            for idx in np.ndindex(nb.shape):
                if fsb[idx] > 0:
                    ref = _numeric_zeta_argmin(prior, nb[idx], fsb[idx])
                    if abs(ref - zb[idx]) > 1e-6 * ref:
                        raise AssertionError(f"zeta closed form {zb[idx]} != numeric {ref}")
        z = zb if zb.ndim else zb[()]
    return z


def pinned_zeta(prior, card):
    """Minimiser of ``phi_n(z) - n/2 log(2 pi z)``.

    This is the variational scale of a group whose inverse scale has gone to
    infinity; its coefficients are pinned at zero and only this term remains.
    """
    n = np.asarray(card, dtype=float)
    if prior.is_student_t:
        return np.full(n.shape, 1.0 / prior.shape)[()]
    g = prior.shape
    p = g / (2 - g)
    return (n / g ** (p + 1)) ** (1 / p)


def pinned_terms(prior, card, zeta):
    """Objective contribution ``phi_n(zeta) - n/2 log(2 pi zeta)`` of a pinned group."""
    n = np.asarray(card, dtype=float)
    return phi(prior, n, zeta) - n / 2 * (LOG_2PI + np.log(zeta))


def expected_sq_norm(prior, card, f):
    """``E ||v_A||^2`` under ``p(. | f)``; zero for ``f = inf``."""
    n = np.asarray(card, dtype=float)
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0) or np.any(np.isnan(f)):
        raise DomainError("f must be positive")
    if prior.is_student_t:
        if prior.shape <= 1:
            raise DomainError(f"Student's t with a={prior.shape} <= 1 has infinite variance")
        m = n / (prior.shape - 1)
    else:
        g = prior.shape
        m = np.exp(gammaln(n / g + 2 / g) - gammaln(n / g))
    with np.errstate(divide="ignore"):
        return m / f


def sample(prior, card, f, rng, size=None):
    """Draw blocks from ``p(. | f)``.

    Student's t is drawn as a Gaussian scale mixture with an inverse-Gamma
    (shape ``a``, rate 1) scale; the generalized Gaussian as a radius with
    ``r^gamma ~ Gamma(n / gamma)`` times a uniform direction.
    Returns shape ``(card,)`` or ``(size, card)``.
    """
    f = float(_check_positive("f", f))
    card = int(card)
    shape = (card,) if size is None else (int(size), card)
    z = rng.standard_normal(shape)
    if prior.is_student_t:
        scale = 1.0 / rng.gamma(prior.shape, 1.0, size=None if size is None else (int(size), 1))
        return z * np.sqrt(scale / f)
    g = prior.shape
    r = rng.gamma(card / g, 1.0, size=None if size is None else (int(size), 1)) ** (1 / g)
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    return z / norm * r / math.sqrt(f)
