"""
Discrete parametric model families on {0, 1, 2, ...}.

A ModelFamily bundles the log-pmf, the likelihood score u_theta(x), its Jacobian
and a tail-truncation rule behind one interface. Parameters are handled as
vectors even though both built-in families are one-dimensional.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy import stats
from scipy.special import gammaln

from divergence_core import EPS_NORM, DiscreteDensity
from errors import BadParameter

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelFamily:
    name: str
    param_dim: int
    param_bounds: Tuple[Tuple[float, float], ...]
    log_pmf_fn: Callable
    score_fn: Callable
    score_grad_fn: Callable
    support_upper_fn: Callable
    sampler_fn: Callable
    mle_fn: Callable
    search_fn: Callable

    def check_theta(self, theta):
        """Return theta as a float vector, raising if it leaves the open parameter box"""
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        if theta.shape != (self.param_dim,):
            raise BadParameter(
                f"{self.name} expects {self.param_dim} parameter(s), got shape {theta.shape}"
            )
        for value, (low, high) in zip(theta, self.param_bounds):
            if not (low < value < high):
                raise BadParameter(f"{self.name} parameter {value} outside ({low}, {high})")
        return theta

    def log_pmf(self, theta, x):
        theta = self.check_theta(theta)
        return self.log_pmf_fn(theta, np.asarray(x, dtype=np.float64))

    def pmf(self, theta, x):
        return np.exp(self.log_pmf(theta, x))

    def score(self, theta, x):
        """u_theta(x) as an array of shape (len(x), p)"""
        theta = self.check_theta(theta)
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return self.score_fn(theta, x).reshape(x.size, self.param_dim)

    def score_grad(self, theta, x):
        """Jacobian of the score, shape (len(x), p, p)"""
        theta = self.check_theta(theta)
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return self.score_grad_fn(theta, x).reshape(x.size, self.param_dim, self.param_dim)

    def support_upper(self, theta, eps=EPS_NORM):
        """Smallest m with model tail mass P(X > m) <= eps"""
        theta = self.check_theta(theta)
        if not (0.0 < eps < 1.0):
            raise BadParameter(f"truncation tolerance must lie in (0, 1), got {eps}")
        return int(self.support_upper_fn(theta, eps))

    def density(self, theta, support):
        """The model pmf evaluated on an explicit support"""
        support = np.asarray(support, dtype=np.int64)
        return DiscreteDensity.from_log_mass(support, self.log_pmf(theta, support))

    def sample(self, theta, size, rng):
        theta = self.check_theta(theta)
        return np.asarray(self.sampler_fn(theta, size, rng), dtype=np.int64)

    def closed_form_mle(self, mean):
        """Maximum likelihood estimate from the sample mean"""
        return np.atleast_1d(np.asarray(self.mle_fn(float(mean)), dtype=np.float64))

    def search_interval(self, mean):
        """Bounded interval scanned by the scalar optimizer"""
        return self.search_fn(float(mean))


def truncated_support(family, theta, eps=EPS_NORM, observed_max=None):
    """{0, ..., m} carrying all but eps of the model mass, extended to cover observed data"""
    if not (0.0 < eps < 1.0):
        raise BadParameter(f"truncation tolerance must lie in (0, 1), got {eps}")
    if eps > 1e-6:
        logger.debug("loose truncation tolerance %g for %s", eps, family.name)
    upper = family.support_upper(theta, eps)
    if observed_max is not None:
        upper = max(upper, int(observed_max))
    return np.arange(upper + 1, dtype=np.int64)


# Geometric model: number of failures before the first success, theta = success probability

def _geometric_log_pmf(theta, x):
    p = theta[0]
    return math.log(p) + x * math.log1p(-p)


def _geometric_score(theta, x):
    p = theta[0]
    return 1.0 / p - x / (1.0 - p)


def _geometric_score_grad(theta, x):
    p = theta[0]
    return -1.0 / p**2 - x / (1.0 - p) ** 2


def _geometric_upper(theta, eps):
    q = 1.0 - theta[0]
    m = max(0, math.ceil(math.log(eps) / math.log(q)) - 1)
    # guard the closed form against rounding at the boundary
    while q ** (m + 1) > eps:
        m += 1
    while m > 0 and q**m <= eps:
        m -= 1
    return m


def geometric_family():
    """Geometric model f(x) = theta (1 - theta)^x on x = 0, 1, ..."""
    return ModelFamily(
        name="geometric",
        param_dim=1,
        param_bounds=((0.0, 1.0),),
        log_pmf_fn=_geometric_log_pmf,
        score_fn=_geometric_score,
        score_grad_fn=_geometric_score_grad,
        support_upper_fn=_geometric_upper,
        sampler_fn=lambda theta, size, rng: rng.geometric(theta[0], size) - 1,
        mle_fn=lambda mean: 1.0 / (1.0 + mean),
        search_fn=lambda mean: (1e-4, 1.0 - 1e-4),
    )


# Poisson model

def _poisson_log_pmf(theta, x):
    mu = theta[0]
    return x * math.log(mu) - mu - gammaln(x + 1.0)


def _poisson_score(theta, x):
    return x / theta[0] - 1.0


def _poisson_score_grad(theta, x):
    return -x / theta[0] ** 2


def _poisson_upper(theta, eps):
    mu = theta[0]
    # mass beyond mu + 12 sd + 40 is far below any usable tolerance
    horizon = int(mu + 12.0 * math.sqrt(mu) + 40.0)
    x = np.arange(horizon + 2, dtype=np.float64)
    pmf = np.exp(x * math.log(mu) - mu - gammaln(x + 1.0))
    # tail[m] = P(X > m), accumulated from the far end to avoid cancellation
    tail = np.cumsum(pmf[::-1])[::-1][1:]
    below = np.nonzero(tail <= eps)[0]
    if below.size == 0:
        return int(stats.poisson.isf(eps, mu))
    return int(below[0])


def poisson_family():
    """Poisson model f(x) = exp(-theta) theta^x / x!"""
    return ModelFamily(
        name="poisson",
        param_dim=1,
        param_bounds=((0.0, math.inf),),
        log_pmf_fn=_poisson_log_pmf,
        score_fn=_poisson_score,
        score_grad_fn=_poisson_score_grad,
        support_upper_fn=_poisson_upper,
        sampler_fn=lambda theta, size, rng: rng.poisson(theta[0], size),
        mle_fn=lambda mean: mean,
        search_fn=lambda mean: (1e-4, max(10.0 * mean, 1.0)),
    )


FAMILIES = {
    "geometric": geometric_family,
    "poisson": poisson_family,
}


def get_family(name):
    """Look up a built-in family by name"""
    try:
        return FAMILIES[name]()
    except KeyError:
        raise BadParameter(f"unknown model family '{name}'; choose from {sorted(FAMILIES)}") from None
