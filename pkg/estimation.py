"""
Minimum LSD estimation for discrete models.

The data enter through the relative frequencies r_n. Minimising LSD(r_n, f_theta)
over theta is the same as minimising

    H_n(theta) = 1/(1+beta) [ (1/A) log sum f^(1+beta) - (1+beta)/(A B) log sum f^B r_n^A ]

since the dropped term does not involve theta. Every evaluation runs over the
union of the truncated model support at the current theta and the observed support.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from divergence_core import EPS_NORM, DiscreteDensity, TuningPair
from errors import BadParameter, DegenerateTuning, EmptyData, LSDError, NoConvergence
from models import truncated_support

logger = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5) - 1) / 2  # 1 / phi
INV_PHI_SQUARE = (3 - math.sqrt(5)) / 2  # 1 / phi^2


@dataclass(frozen=True)
class FrequencyTable:
    """Observed counts per nonnegative integer cell; empty cells are not stored"""

    counts: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        merged = Counter()
        for x, count in self.counts:
            x, count = int(x), int(count)
            if x < 0:
                raise BadParameter(f"cell {x} is negative")
            if count < 0:
                raise BadParameter(f"cell {x} has negative count {count}")
            merged[x] += count
        canonical = tuple(sorted((x, c) for x, c in merged.items() if c > 0))
        if not canonical:
            raise EmptyData("a frequency table needs at least one observation")
        object.__setattr__(self, "counts", canonical)

    @classmethod
    def from_mapping(cls, counts):
        return cls(tuple(counts.items()))

    @classmethod
    def from_observations(cls, observations):
        values, freq = np.unique(np.asarray(observations, dtype=np.int64), return_counts=True)
        return cls(tuple(zip(values.tolist(), freq.tolist())))

    @property
    def n(self):
        return sum(c for _, c in self.counts)

    @property
    def support(self):
        return np.array([x for x, _ in self.counts], dtype=np.int64)

    @property
    def count_array(self):
        return np.array([c for _, c in self.counts], dtype=np.float64)

    @property
    def max_x(self):
        return self.counts[-1][0]

    @property
    def mean(self):
        return float(np.dot(self.support, self.count_array) / self.n)

    def as_dict(self):
        return dict(self.counts)

    def relative_frequencies(self):
        """Exact r_n(x) = count(x)/n"""
        n = self.n
        return {x: Fraction(c, n) for x, c in self.counts}

    def drop_cells(self, cells):
        """Remove whole cells, e.g. outlying counts"""
        cells = {int(x) for x in cells}
        return FrequencyTable(tuple((x, c) for x, c in self.counts if x not in cells))

    def combine(self, other):
        """Cell-wise sum of two tables"""
        return FrequencyTable(self.counts + other.counts)


@dataclass
class EstimationResult:
    theta_hat: np.ndarray
    objective_value: float
    tuning: TuningPair
    converged: bool
    iterations: int
    residual_norm: float
    n: int
    family: str
    method: str = "grid+golden"
    interval: Optional[Tuple[float, float]] = None
    sandwich_variance: Optional[np.ndarray] = None

    @property
    def theta(self):
        """Scalar estimate for one-parameter families"""
        return float(self.theta_hat[0])

    def standard_errors(self):
        """sqrt(diag(J^-1 V J^-1) / n), once the sandwich has been attached"""
        if self.sandwich_variance is None:
            return None
        return np.sqrt(np.diag(self.sandwich_variance) / self.n)


@dataclass(frozen=True)
class OptimizerConfig:
    grid_points: int = 200
    xtol: float = 1e-8
    residual_tol: float = 1e-6
    support_eps: float = EPS_NORM
    tie_tol: float = 1e-12
    max_iter: int = 500

    @classmethod
    def from_section(cls, section):
        """Build from the 'estimation' section of a ConfigManager"""
        known = {k: v for k, v in (section or {}).items() if k in cls.__dataclass_fields__}
        return cls(**known)


def working_support(table, family, theta, eps=EPS_NORM):
    """Union of the truncated model support at theta and the observed support"""
    return truncated_support(family, theta, eps, observed_max=table.max_x)


def relative_density(table, support):
    """r_n on the given support, zero where nothing was observed"""
    support = np.asarray(support, dtype=np.int64)
    observed = DiscreteDensity(table.support, table.count_array / table.n)
    return observed.on_support(support)


def _check_tuning(t):
    if t.a_exp <= 0 or t.a_zero:
        raise DegenerateTuning(
            f"minimum LSD estimation needs A > 0, got A={t.a_exp:.6g} (beta={t.beta}, gamma={t.gamma})"
        )


@dataclass
class _Evaluation:
    """Log masses and scores of one (table, theta) pair on its working support"""

    log_f: np.ndarray
    log_r: np.ndarray
    observed: np.ndarray
    score: np.ndarray


def _evaluate(table, family, theta, eps):
    support = working_support(table, family, theta, eps)
    r = relative_density(table, support)
    return _Evaluation(
        log_f=family.log_pmf(theta, support),
        log_r=r.log_mass(),
        observed=r.mass > 0,
        score=family.score(theta, support),
    )


def objective_hn(table, family, theta, t, eps=EPS_NORM):
    """H_n(theta); on the B = 0 line the cross term is replaced by its theta-dependent limit"""
    _check_tuning(t)
    ev = _evaluate(table, family, theta, eps)
    beta, a, b = t.beta, t.a_exp, t.b_exp
    obs = ev.observed
    model_term = logsumexp((1.0 + beta) * ev.log_f)
    if t.b_zero:
        weights = softmax(a * ev.log_r[obs])
        cross = (1.0 + beta) / a * float(np.dot(weights, ev.log_f[obs]))
        return float((model_term / a - cross) / (1.0 + beta))
    cross_term = logsumexp(b * ev.log_f[obs] + a * ev.log_r[obs])
    return float((model_term / a - (1.0 + beta) / (a * b) * cross_term) / (1.0 + beta))


def grad_hn(table, family, theta, t, eps=EPS_NORM):
    """Gradient of H_n: difference of two weighted score means, scaled by 1/A"""
    _check_tuning(t)
    ev = _evaluate(table, family, theta, eps)
    beta, a, b = t.beta, t.a_exp, t.b_exp
    obs = ev.observed
    model_weights = softmax((1.0 + beta) * ev.log_f)
    cross_weights = softmax(b * ev.log_f[obs] + a * ev.log_r[obs])
    return (model_weights @ ev.score - cross_weights @ ev.score[obs]) / a


def estimating_residual(table, family, theta, t, eps=EPS_NORM):
    """sum_x K(delta_n(x)) f^(1+beta)(x) w_theta(x) with K(delta) = delta^A - 1"""
    _check_tuning(t)
    ev = _evaluate(table, family, theta, eps)
    beta, a, b = t.beta, t.a_exp, t.b_exp
    f_pow = np.exp((1.0 + beta) * ev.log_f)
    big_b = f_pow.sum()
    big_a = f_pow @ ev.score
    w = big_b * ev.score - big_a
    # delta^A f^(1+beta) = r^A f^B, with r^A = 0 on empty cells since A > 0
    data_part = np.zeros_like(f_pow)
    obs = ev.observed
    data_part[obs] = np.exp(a * ev.log_r[obs] + b * ev.log_f[obs])
    return (data_part - f_pow) @ w


def golden_section(func, a, b, tol=1e-8):
    """
    Golden-section search.

    Given f with a single local minimum in [a, b], returns a subinterval
    [c, d] containing the minimum with d - c <= tol, and the step count.
    """
    a, b = min(a, b), max(a, b)
    h = b - a
    if h <= tol:
        return a, b, 0

    n = int(math.ceil(math.log(tol / h) / math.log(INV_PHI)))

    c = a + INV_PHI_SQUARE * h
    d = a + INV_PHI * h
    yc = func(c)
    yd = func(d)

    for _ in range(n - 1):
        if yc < yd:
            b = d
            d = c
            yd = yc
            h = INV_PHI * h
            c = a + INV_PHI_SQUARE * h
            yc = func(c)
        else:
            a = c
            c = d
            yc = yd
            h = INV_PHI * h
            d = a + INV_PHI * h
            yd = func(d)

    if yc < yd:
        return a, d, n
    return c, b, n


def _safe_objective(table, family, t, eps):
    def evaluate(theta):
        try:
            value = objective_hn(table, family, theta, t, eps)
        except (LSDError, FloatingPointError) as err:
            logger.debug("objective undefined at theta=%r: %s", theta, err)
            return math.inf
        return value if math.isfinite(value) else math.inf

    return evaluate


def minimize_lsd(table, family, t, config=None):
    """Global minimum LSD estimate of theta for a frequency table"""
    config = config or OptimizerConfig()
    _check_tuning(t)
    if family.param_dim != 1:
        return _minimize_by_descent(table, family, t, config)

    lo, hi = family.search_interval(table.mean)
    objective = _safe_objective(table, family, t, config.support_eps)
    grid = np.linspace(lo, hi, config.grid_points)
    values = np.array([objective(theta) for theta in grid])
    if not np.any(np.isfinite(values)):
        raise NoConvergence(
            f"no finite objective on [{lo}, {hi}] for {family.name} at beta={t.beta}, gamma={t.gamma}"
        )

    best = values.min()
    tied = np.nonzero(values <= best + config.tie_tol)[0]
    logger.debug("grid minimum %.12g at %d cell(s) on [%g, %g]", best, tied.size, lo, hi)

    candidates = []
    for i in tied:
        left = grid[max(i - 1, 0)]
        right = grid[min(i + 1, grid.size - 1)]
        c, d, steps = golden_section(objective, left, right, config.xtol)
        theta = 0.5 * (c + d)
        candidates.append((objective(theta), theta, d - c, steps))

    best_value = min(c[0] for c in candidates)
    # smallest theta among refined candidates that tie
    value, theta, width, steps = min(
        (c for c in candidates if c[0] <= best_value + config.tie_tol), key=lambda c: c[1]
    )
    if not math.isfinite(value):
        raise NoConvergence(f"refinement left the finite region near theta={theta}")

    theta_hat = np.array([theta])
    residual = float(np.linalg.norm(estimating_residual(table, family, theta_hat, t, config.support_eps)))
    converged = width < config.xtol and residual < config.residual_tol
    if not converged:
        logger.warning(
            "fit not converged: %s beta=%g gamma=%g theta=%.8g width=%.2e residual=%.2e",
            family.name, t.beta, t.gamma, theta, width, residual,
        )
    return EstimationResult(
        theta_hat=theta_hat,
        objective_value=value,
        tuning=t,
        converged=converged,
        iterations=int(steps),
        residual_norm=residual,
        n=table.n,
        family=family.name,
        interval=(float(lo), float(hi)),
    )


def _minimize_by_descent(table, family, t, config):
    """Gradient descent with backtracking for param_dim > 1 (experimental)"""
    logger.warning("using experimental gradient descent for %d-parameter %s", family.param_dim, family.name)
    eps = config.support_eps
    objective = _safe_objective(table, family, t, eps)
    intervals = family.search_interval(table.mean)
    theta = np.array([0.5 * (low + high) for low, high in intervals])
    value = objective(theta)
    if not math.isfinite(value):
        raise NoConvergence(f"objective undefined at the starting point {theta}")

    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        grad = grad_hn(table, family, theta, t, eps)
        step = 1.0
        while step > 1e-14:
            trial = theta - step * grad
            trial_value = objective(trial)
            if trial_value <= value - 1e-4 * step * float(grad @ grad):
                break
            step *= 0.5
        else:
            break
        moved = np.linalg.norm(trial - theta)
        theta, value = trial, trial_value
        if moved < config.xtol:
            break

    residual = float(np.linalg.norm(estimating_residual(table, family, theta, t, eps)))
    return EstimationResult(
        theta_hat=theta,
        objective_value=value,
        tuning=t,
        converged=residual < config.residual_tol,
        iterations=iterations,
        residual_norm=residual,
        n=table.n,
        family=family.name,
        method="gradient-descent",
    )


def expected_frequencies(family, theta, n, cells=5):
    """Predicted counts n f(x) for x < cells, followed by the aggregated tail n P(X >= cells)"""
    head = n * family.pmf(theta, np.arange(cells))
    tail = max(n - float(head.sum()), 0.0)
    return [float(v) for v in head] + [tail]
