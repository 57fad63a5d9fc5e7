"""
Logarithmic super divergence (LSD) family and its relatives on finite discrete densities.

All sums are taken over an explicit, shared integer support. Powers of masses are
formed on the log scale and reduced with a max-shifted log-sum-exp, so long Poisson
tails whose masses underflow when raised to a power stay finite.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from errors import BadParameter, DegenerateTuning, SupportMismatch

logger = logging.getLogger(__name__)

EPS_NORM = 1e-12
DEGENERACY_EPS = 1e-12

A_ZERO = "A_ZERO"
B_ZERO = "B_ZERO"


@dataclass(frozen=True)
class TuningPair:
    """The (beta, gamma) divergence parameters with the derived exponents A and B"""

    beta: float
    gamma: float
    a_exp: float = field(init=False)
    b_exp: float = field(init=False)

    def __post_init__(self):
        beta = float(self.beta)
        gamma = float(self.gamma)
        if not np.isfinite(beta) or not np.isfinite(gamma):
            raise BadParameter(f"tuning parameters must be finite, got beta={beta}, gamma={gamma}")
        if beta < 0:
            raise BadParameter(f"beta must be >= 0, got {beta}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)
        spread = gamma * (1.0 - beta)
        object.__setattr__(self, "a_exp", 1.0 + spread)
        object.__setattr__(self, "b_exp", beta - spread)

    @property
    def a_zero(self):
        return abs(self.a_exp) < DEGENERACY_EPS

    @property
    def b_zero(self):
        return abs(self.b_exp) < DEGENERACY_EPS

    @property
    def flags(self):
        """Degeneracy classes of this pair"""
        flags = set()
        if self.a_zero:
            flags.add(A_ZERO)
        if self.b_zero:
            flags.add(B_ZERO)
        return frozenset(flags)

    def as_dict(self):
        return {"beta": self.beta, "gamma": self.gamma, "A": self.a_exp, "B": self.b_exp}


def derive_tuning(beta, gamma):
    """Build a TuningPair from loosely typed values"""
    try:
        beta, gamma = float(beta), float(gamma)
    except (TypeError, ValueError):
        raise BadParameter(f"tuning parameters must be numbers, got beta={beta!r}, gamma={gamma!r}") from None
    return TuningPair(beta, gamma)


@dataclass(frozen=True, eq=False)
class DiscreteDensity:
    """Nonnegative masses on a strictly increasing set of nonnegative integers

    A density built from log masses keeps them, so cells whose mass underflows to
    zero in linear space still count as positive wherever log_mass() is used.
    """

    support: np.ndarray
    mass: np.ndarray
    log_values: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.int64)
        mass = np.asarray(self.mass, dtype=np.float64)
        if support.ndim != 1 or mass.ndim != 1:
            raise BadParameter("support and mass must be one-dimensional")
        if support.shape != mass.shape:
            raise BadParameter(
                f"support has {support.size} entries but mass has {mass.size}"
            )
        if support.size == 0:
            raise BadParameter("a density needs at least one support point")
        if np.any(support < 0):
            raise BadParameter("support entries must be nonnegative integers")
        if np.any(np.diff(support) <= 0):
            raise BadParameter("support entries must be strictly increasing")
        if not np.all(np.isfinite(mass)) or np.any(mass < 0):
            raise BadParameter("masses must be finite and nonnegative")
        if self.log_values is not None:
            log_values = np.array(self.log_values, dtype=np.float64)
            if log_values.shape != mass.shape:
                raise BadParameter(
                    f"log masses have {log_values.size} entries but mass has {mass.size}"
                )
            if np.any(np.isnan(log_values)) or np.any(log_values == np.inf):
                raise BadParameter("log masses must be finite or -inf")
            log_values.setflags(write=False)
            object.__setattr__(self, "log_values", log_values)
        support.setflags(write=False)
        mass.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_mapping(cls, masses):
        """Build from an {x: mass} mapping"""
        items = sorted(masses.items())
        return cls([x for x, _ in items], [m for _, m in items])

    @classmethod
    def from_log_mass(cls, support, log_mass):
        """Build from log masses, keeping them alongside exp(log_mass)"""
        log_mass = np.asarray(log_mass, dtype=np.float64)
        return cls(support, np.exp(log_mass), log_values=log_mass)

    @property
    def total(self):
        return float(self.mass.sum())

    @property
    def positive(self):
        """Cells carrying positive mass"""
        return self.log_mass() > -np.inf

    def is_probability(self, eps=EPS_NORM):
        return 1.0 - eps <= self.total <= 1.0 + 1e-12

    def log_mass(self):
        """Elementwise log of the masses, -inf on empty cells"""
        if self.log_values is not None:
            return self.log_values
        with np.errstate(divide="ignore"):
            return np.log(self.mass)

    def on_support(self, support):
        """Embed into a wider support, padding with zero mass"""
        support = np.asarray(support, dtype=np.int64)
        positions = np.searchsorted(support, self.support)
        clipped = np.minimum(positions, max(support.size - 1, 0))
        if support.size == 0 or not np.array_equal(support[clipped], self.support):
            missing = sorted(set(self.support.tolist()) - set(support.tolist()))
            raise SupportMismatch(f"support points {missing} are missing from the target support")
        mass = np.zeros(support.size)
        mass[positions] = self.mass
        if self.log_values is None:
            return DiscreteDensity(support, mass)
        log_values = np.full(support.size, -np.inf)
        log_values[positions] = self.log_values
        return DiscreteDensity(support, mass, log_values=log_values)

    def __eq__(self, other):
        if not isinstance(other, DiscreteDensity):
            return NotImplemented
        return np.array_equal(self.support, other.support) and np.array_equal(self.mass, other.mass)

    __hash__ = None


def _aligned_logs(g, f):
    """Log masses of g and f on their common support"""
    if not np.array_equal(g.support, f.support):
        raise SupportMismatch("densities must be evaluated on the same support")
    log_g, log_f = g.log_mass(), f.log_mass()
    if not np.all(log_f > -np.inf):
        raise BadParameter("the model density must be strictly positive on the support")
    if not np.any(log_g > -np.inf):
        raise BadParameter("the data density has no mass")
    return log_g, log_f


def likelihood_disparity(g, f):
    """LD(g, f) = sum g log(g/f); empty cells of g contribute nothing"""
    log_g, log_f = _aligned_logs(g, f)
    pos = g.positive
    return float(np.sum(g.mass[pos] * (log_g[pos] - log_f[pos])))


def kullback_leibler(g, f):
    """KLD(g, f) = sum f log(f/g), which needs g > 0 wherever f > 0"""
    log_g, log_f = _aligned_logs(g, f)
    if not np.all(g.positive):
        raise DegenerateTuning("KLD(g, f) is unbounded when g has empty cells")
    return float(np.sum(f.mass * (log_f - log_g)))


def _power_cross_sum(log_g, log_f, pos, lam):
    """log of sum g^(1+lam) f^(-lam) over the cells where g > 0"""
    return logsumexp((1.0 + lam) * log_g[pos] - lam * log_f[pos])


def _check_power_cells(g, lam):
    if lam < -1.0 and not np.all(g.positive):
        raise DegenerateTuning(f"(g/f)^{lam} is unbounded on empty cells of g")


def pd_divergence(g, f, lam):
    """Cressie-Read power divergence PD_lambda(g, f)"""
    lam = float(lam)
    if abs(lam) < DEGENERACY_EPS:
        return likelihood_disparity(g, f)
    if abs(lam + 1.0) < DEGENERACY_EPS:
        return kullback_leibler(g, f)
    log_g, log_f = _aligned_logs(g, f)
    _check_power_cells(g, lam)
    pos = g.positive
    cross = np.exp(_power_cross_sum(log_g, log_f, pos, lam))
    return float((cross - g.total) / (lam * (lam + 1.0)))


def lpd_divergence(g, f, gamma):
    """Logarithmic power divergence LPD_gamma(g, f)"""
    gamma = float(gamma)
    if abs(gamma) < DEGENERACY_EPS:
        return likelihood_disparity(g, f)
    if abs(gamma + 1.0) < DEGENERACY_EPS:
        return kullback_leibler(g, f)
    log_g, log_f = _aligned_logs(g, f)
    _check_power_cells(g, gamma)
    pos = g.positive
    return float(_power_cross_sum(log_g, log_f, pos, gamma) / (gamma * (gamma + 1.0)))


def ldpd_divergence(g, f, beta):
    """Logarithmic density power divergence LDPD_beta(g, f)"""
    beta = float(beta)
    if beta < 0:
        raise BadParameter(f"beta must be >= 0, got {beta}")
    if beta < DEGENERACY_EPS:
        return likelihood_disparity(g, f)
    log_g, log_f = _aligned_logs(g, f)
    pos = g.positive
    model_term = logsumexp((1.0 + beta) * log_f)
    cross_term = logsumexp(beta * log_f[pos] + log_g[pos])
    data_term = logsumexp((1.0 + beta) * log_g[pos])
    return float(model_term - (1.0 + 1.0 / beta) * cross_term + data_term / beta)


def dpd_divergence(g, f, alpha):
    """Density power divergence DPD_alpha(g, f)"""
    alpha = float(alpha)
    if alpha < 0:
        raise BadParameter(f"alpha must be >= 0, got {alpha}")
    if alpha < DEGENERACY_EPS:
        return likelihood_disparity(g, f)
    _aligned_logs(g, f)
    fm, gm = f.mass, g.mass
    terms = fm ** (1.0 + alpha) - (1.0 + 1.0 / alpha) * fm**alpha * gm + gm ** (1.0 + alpha) / alpha
    return float(terms.sum())


def _check_data_exponent(g, t):
    if t.a_zero:
        raise DegenerateTuning(
            f"A = 1 + gamma(1 - beta) vanishes at beta={t.beta}, gamma={t.gamma}"
        )
    if t.a_exp < 0 and not np.all(g.positive):
        raise DegenerateTuning(
            f"g^A is unbounded on empty cells for A={t.a_exp:.6g} < 0"
        )


def lsd_divergence(g, f, t):
    """Logarithmic super divergence LSD_{beta,gamma}(g, f)"""
    log_g, log_f = _aligned_logs(g, f)
    _check_data_exponent(g, t)
    beta, a, b = t.beta, t.a_exp, t.b_exp
    pos = g.positive
    model_term = logsumexp((1.0 + beta) * log_f)
    data_term = logsumexp((1.0 + beta) * log_g[pos])
    if t.b_zero:
        return _lsd_b_zero(log_g[pos], log_f[pos], model_term, data_term, beta)
    cross_term = logsumexp(b * log_f[pos] + a * log_g[pos])
    return float(model_term / a - (1.0 + beta) / (a * b) * cross_term + data_term / b)


def _lsd_b_zero(log_g, log_f, model_term, data_term, beta):
    """Analytic B -> 0 limit of the LSD; A = 1 + beta on this line"""
    weights = np.exp((1.0 + beta) * log_g - data_term)
    tilt = float(np.sum(weights * (log_g - log_f)))
    return float((model_term - data_term) / (1.0 + beta) + tilt)


def s_divergence(g, f, alpha, lam):
    """S-divergence S_{alpha,lambda}(g, f), the non-logarithmic analogue of the LSD"""
    t = derive_tuning(alpha, lam)
    _aligned_logs(g, f)
    _check_data_exponent(g, t)
    if t.b_zero:
        raise BadParameter(
            f"S-divergence has no implemented B -> 0 limit (alpha={alpha}, lambda={lam})"
        )
    a, b = t.a_exp, t.b_exp
    pos = g.positive
    fm, gm = f.mass, g.mass[pos]
    model_term = np.sum(fm ** (1.0 + t.beta))
    cross_term = np.sum(f.mass[pos] ** b * gm**a)
    data_term = np.sum(gm ** (1.0 + t.beta))
    return float(model_term / a - (1.0 + t.beta) / (a * b) * cross_term + data_term / b)


# Single-parameter families read their parameter from beta (density power side)
# or gamma (power divergence side)
DIVERGENCES = {
    "lsd": lambda g, f, beta, gamma: lsd_divergence(g, f, derive_tuning(beta, gamma)),
    "pd": lambda g, f, beta, gamma: pd_divergence(g, f, gamma),
    "lpd": lambda g, f, beta, gamma: lpd_divergence(g, f, gamma),
    "ldpd": lambda g, f, beta, gamma: ldpd_divergence(g, f, beta),
    "dpd": lambda g, f, beta, gamma: dpd_divergence(g, f, beta),
    "s": lambda g, f, beta, gamma: s_divergence(g, f, beta, gamma),
}


def evaluate(kind, g, f, beta=0.0, gamma=0.0):
    """Evaluate a divergence family by name"""
    if kind not in DIVERGENCES:
        raise BadParameter(f"unknown divergence family '{kind}'; choose from {sorted(DIVERGENCES)}")
    return DIVERGENCES[kind](g, f, beta, gamma)
