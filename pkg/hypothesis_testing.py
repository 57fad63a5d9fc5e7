"""
LSD-based hypothesis tests and the simulation harness that checks their large-sample behaviour.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from asymptotics import (
    QuadFormNull,
    a_matrix,
    chisq_mixture_pvalue,
    chisq_mixture_quantile,
    j_matrix_at_model,
    lsd_gradient_first,
    model_lsd,
    null_for_model,
    sandwich_matrices,
    sandwich_variance,
    v_matrix_at_model,
)
from divergence_core import TuningPair
from errors import BadParameter, LSDError, SingularMatrix
from estimation import FrequencyTable, OptimizerConfig, minimize_lsd

logger = logging.getLogger(__name__)

CHISQ1 = "chisq1"
CONVENTIONS = ("chisq_tail", "signed_root", "halved_tail")


@dataclass(frozen=True)
class TestingConfig:
    __test__ = False

    alpha: float = 0.05
    draws: int = 1_000_000
    seed: int = 20140101
    streams: int = 8
    pvalue_convention: str = "chisq_tail"
    n_jobs: int = 1

    @classmethod
    def from_section(cls, section, n_jobs=1):
        known = {k: v for k, v in (section or {}).items() if k in cls.__dataclass_fields__}
        known.setdefault("n_jobs", n_jobs)
        return cls(**known)


@dataclass
class TestResult:
    __test__ = False

    statistic: float
    pvalue: float
    null_spec: Union[QuadFormNull, str]
    estimates: Tuple[np.ndarray, ...]
    tuning: TuningPair
    sides: str = "two-sided"
    alpha: float = 0.05
    pvalue_stderr: float = 0.0
    convention: Optional[str] = None
    details: dict = field(default_factory=dict)

    @property
    def reject(self):
        return self.pvalue < self.alpha


@dataclass(frozen=True)
class PowerApprox:
    theta_star: np.ndarray
    sigma: float
    m_vec: np.ndarray
    critical_value: float
    power: float


def _mixture_pvalue(null, statistic, config):
    if null.rank == 0:
        # no random part: the statistic is degenerate at zero under the null
        return (1.0 if statistic <= 1e-12 else 0.0), 0.0
    mc = chisq_mixture_pvalue(
        null.eigenvalues,
        statistic,
        draws=config.draws,
        seed=config.seed,
        streams=config.streams,
        n_jobs=config.n_jobs,
    )
    return mc.pvalue, mc.stderr


def one_sample_test(table, family, theta0, t, alpha=0.05, config=None, optimizer=None):
    """W = 2n LSD(f_thetahat, f_theta0) against its quadratic-form null at theta0"""
    config = config or TestingConfig()
    theta0 = family.check_theta(theta0)
    fit = minimize_lsd(table, family, t, optimizer)
    statistic = max(0.0, 2.0 * table.n * model_lsd(family, fit.theta_hat, theta0, t))
    null = null_for_model(family, theta0, t)
    pvalue, stderr = _mixture_pvalue(null, statistic, config)
    logger.info("one-sample W=%.6g p=%.4g (theta_hat=%s)", statistic, pvalue, fit.theta_hat)
    return TestResult(
        statistic=statistic,
        pvalue=pvalue,
        null_spec=null,
        estimates=(fit.theta_hat,),
        tuning=t,
        alpha=alpha,
        pvalue_stderr=stderr,
    )


def power_approximation(theta_star, theta0, family, t, n, alpha=0.05, config=None):
    """Normal approximation to the power of the one-sample test at theta_star"""
    config = config or TestingConfig()
    theta_star = family.check_theta(theta_star)
    theta0 = family.check_theta(theta0)
    if np.allclose(theta_star, theta0, rtol=0.0, atol=1e-12):
        raise BadParameter("power is only approximated away from the null value")
    if n < 1:
        raise BadParameter(f"sample size must be positive, got {n}")

    m_vec = lsd_gradient_first(family, theta_star, theta0, t)
    sigma_mat = sandwich_variance(sandwich_matrices(family, theta_star, t))
    sigma_sq = float(m_vec @ sigma_mat @ m_vec)
    if not sigma_sq > 0:
        raise BadParameter(f"sigma^2 = {sigma_sq:.3g} is not positive at theta*={theta_star}")
    sigma = math.sqrt(sigma_sq)

    null = null_for_model(family, theta0, t)
    critical = chisq_mixture_quantile(
        null.eigenvalues, 1.0 - alpha, draws=config.draws, seed=config.seed,
        streams=config.streams, n_jobs=config.n_jobs,
    )
    shift = model_lsd(family, theta_star, theta0, t)
    power = float(stats.norm.sf(math.sqrt(n) / sigma * (critical / (2.0 * n) - shift)))
    return PowerApprox(theta_star=theta_star, sigma=sigma, m_vec=m_vec, critical_value=critical, power=power)


def _two_sample_factor(table1, table2):
    n, m = table1.n, table2.n
    return 2.0 * n * m / (n + m)


def two_sample_test(table1, table2, family, t, alpha=0.05, config=None, optimizer=None):
    """S = (2nm/(n+m)) LSD(f_thetahat1, f_thetahat2), null matrices plugged in at thetahat1"""
    config = config or TestingConfig()
    fit1 = minimize_lsd(table1, family, t, optimizer)
    fit2 = minimize_lsd(table2, family, t, optimizer)
    divergence = model_lsd(family, fit1.theta_hat, fit2.theta_hat, t)
    statistic = max(0.0, _two_sample_factor(table1, table2) * divergence)
    null = null_for_model(family, fit1.theta_hat, t)
    pvalue, stderr = _mixture_pvalue(null, statistic, config)
    return TestResult(
        statistic=statistic,
        pvalue=pvalue,
        null_spec=null,
        estimates=(fit1.theta_hat, fit2.theta_hat),
        tuning=t,
        alpha=alpha,
        pvalue_stderr=stderr,
    )


def pooled_estimate(table1, table2, family, t, optimizer=None):
    """Minimum LSD fit on the cell-wise sum of both tables"""
    return minimize_lsd(table1.combine(table2), family, t, optimizer)


def normalizing_constant(family, theta, t):
    """zeta = A K / J^2 for a scalar parameter"""
    if family.param_dim != 1:
        raise BadParameter("the normalized two-sample test needs a scalar parameter")
    j_val = float(j_matrix_at_model(family, theta, t)[0, 0])
    if abs(j_val) < 1e-12:
        raise SingularMatrix(f"J vanishes at theta={theta}")
    k_val = float(v_matrix_at_model(family, theta, t)[0, 0])
    a_val = float(a_matrix(family, theta, t)[0, 0])
    return a_val * k_val / j_val**2


def _signed_pvalue(normalized, direction, convention):
    if convention == "chisq_tail":
        # no evidence for the alternative unless the treated estimate is larger
        return float(stats.chi2.sf(normalized, 1)) if direction > 0 else 1.0
    if convention == "signed_root":
        return float(stats.norm.sf(direction * math.sqrt(normalized)))
    if convention == "halved_tail":
        half = 0.5 * float(stats.chi2.sf(normalized, 1))
        return half if direction > 0 else 1.0 - half
    raise BadParameter(f"unknown p-value convention '{convention}'; choose from {CONVENTIONS}")


def signed_two_sample_test(table1, table2, family, t, convention="chisq_tail", alpha=0.05, optimizer=None):
    """
    Normalized two-sample statistic *S = S / zeta(pooled estimate), referred to chi-square(1).

    table1 is the control sample and table2 the treated one; the directional
    conventions take H1: theta_treated > theta_control.
    """
    if convention not in CONVENTIONS:
        raise BadParameter(f"unknown p-value convention '{convention}'; choose from {CONVENTIONS}")
    if family.param_dim != 1:
        raise BadParameter("the normalized two-sample test needs a scalar parameter")
    fit1 = minimize_lsd(table1, family, t, optimizer)
    fit2 = minimize_lsd(table2, family, t, optimizer)
    pooled = pooled_estimate(table1, table2, family, t, optimizer)

    divergence = model_lsd(family, fit1.theta_hat, fit2.theta_hat, t)
    raw = max(0.0, _two_sample_factor(table1, table2) * divergence)
    zeta = normalizing_constant(family, pooled.theta_hat, t)
    normalized = raw / zeta
    direction = float(np.sign(fit2.theta - fit1.theta))
    pvalue = _signed_pvalue(normalized, direction, convention)
    logger.debug("signed test: S=%.6g zeta=%.6g *S=%.6g p=%.4g (%s)", raw, zeta, normalized, pvalue, convention)
    return TestResult(
        statistic=normalized,
        pvalue=pvalue,
        null_spec=CHISQ1,
        estimates=(fit1.theta_hat, fit2.theta_hat, pooled.theta_hat),
        tuning=t,
        sides="one-sided",
        alpha=alpha,
        convention=convention,
        details={"raw_statistic": raw, "zeta": zeta, "direction": direction},
    )


@dataclass
class EstimatorSimulation:
    """Empirical behaviour of sqrt(n)(thetahat - theta) against the sandwich prediction"""

    replicates: int
    failures: int
    estimates: np.ndarray
    mean: np.ndarray
    variance: Optional[np.ndarray]
    sandwich: np.ndarray

    @property
    def successes(self):
        return len(self.estimates)

    @property
    def variance_defined(self):
        return self.variance is not None


def _replicate_seeds(seed, replicates):
    return np.random.SeedSequence(seed).spawn(replicates)


def _fit_replicate(family, theta, t, n, seed_seq, optimizer):
    rng = np.random.default_rng(seed_seq)
    table = FrequencyTable.from_observations(family.sample(theta, n, rng))
    try:
        return minimize_lsd(table, family, t, optimizer).theta_hat
    except LSDError as err:
        logger.warning("replicate fit failed: %s", err)
        return None


def simulate_estimator_distribution(family, theta_true, t, n, replicates, seed, n_jobs=1, optimizer=None):
    """Fit `replicates` seeded samples of size n and summarise sqrt(n)(thetahat - theta)"""
    theta_true = family.check_theta(theta_true)
    if replicates < 1:
        raise BadParameter(f"replicates must be positive, got {replicates}")
    if replicates < 100:
        logger.warning("only %d replicates; moments will be noisy", replicates)
    optimizer = optimizer or OptimizerConfig()

    fits = Parallel(n_jobs=n_jobs)(
        delayed(_fit_replicate)(family, theta_true, t, n, s, optimizer)
        for s in _replicate_seeds(seed, replicates)
    )
    good = [f for f in fits if f is not None]
    failures = replicates - len(good)
    if failures:
        logger.warning("%d of %d replicate fits failed", failures, replicates)

    p = theta_true.size
    scaled = math.sqrt(n) * (np.array(good).reshape(-1, p) - theta_true)
    mean = scaled.mean(axis=0) if len(good) else np.full(p, np.nan)
    variance = np.atleast_2d(np.cov(scaled, rowvar=False)) if len(good) >= 2 else None
    return EstimatorSimulation(
        replicates=replicates,
        failures=failures,
        estimates=np.array(good).reshape(-1, p),
        mean=mean,
        variance=variance,
        sandwich=sandwich_variance(sandwich_matrices(family, theta_true, t)),
    )


@dataclass(frozen=True)
class LevelStudy:
    rejection_rate: float
    rejections: int
    completed: int
    failures: int
    critical_value: float
    alpha: float


def _null_statistic(family, theta0, t, n, seed_seq, optimizer):
    rng = np.random.default_rng(seed_seq)
    table = FrequencyTable.from_observations(family.sample(theta0, n, rng))
    try:
        fit = minimize_lsd(table, family, t, optimizer)
        return 2.0 * n * model_lsd(family, fit.theta_hat, theta0, t)
    except LSDError as err:
        logger.warning("null replicate failed: %s", err)
        return None


def simulate_test_level(family, theta0, t, n, replicates, alpha=0.05, seed=1, config=None, optimizer=None):
    """Rejection rate of the one-sample test when the data come from f_theta0"""
    config = config or TestingConfig()
    theta0 = family.check_theta(theta0)
    if replicates < 1:
        raise BadParameter(f"replicates must be positive, got {replicates}")
    null = null_for_model(family, theta0, t)
    critical = chisq_mixture_quantile(
        null.eigenvalues, 1.0 - alpha, draws=config.draws, seed=config.seed,
        streams=config.streams, n_jobs=config.n_jobs,
    )
    statistics = Parallel(n_jobs=config.n_jobs)(
        delayed(_null_statistic)(family, theta0, t, n, s, optimizer or OptimizerConfig())
        for s in _replicate_seeds(seed, replicates)
    )
    done = [s for s in statistics if s is not None]
    rejections = int(sum(s > critical for s in done))
    rate = rejections / len(done) if done else math.nan
    logger.info("level study: %d/%d rejections at critical value %.4f", rejections, len(done), critical)
    return LevelStudy(
        rejection_rate=rate,
        rejections=rejections,
        completed=len(done),
        failures=replicates - len(done),
        critical_value=critical,
        alpha=alpha,
    )
