"""
Large-sample machinery for minimum LSD estimators and LSD test statistics.

J and V are the two halves of the sandwich J^-1 V J^-1. Both accept an arbitrary
data density g; evaluated at g = f_theta they give the model quantities used by
the tests (V at the model is written K elsewhere). The null law of the test
statistics is a weighted sum of independent chi-square(1) variables whose
weights are the nonzero eigenvalues of A Sigma.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg
from scipy.special import softmax

from divergence_core import EPS_NORM, DiscreteDensity, TuningPair, lsd_divergence
from errors import BadParameter, DegenerateTuning, NumericalFailure, SingularMatrix
from models import truncated_support

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12
RANK_TOL = 1e-9
MIN_DRAWS = 100_000
STREAM_CHUNK = 125_000


@dataclass(frozen=True)
class SandwichMatrices:
    j_mat: np.ndarray
    v_mat: np.ndarray
    theta: np.ndarray
    tuning: TuningPair


@dataclass(frozen=True)
class QuadFormNull:
    """Weights of the chi-square mixture sum zeta_i Z_i^2"""

    eigenvalues: Tuple[float, ...]
    rank: int
    a_mat: np.ndarray
    sigma: Optional[np.ndarray] = None


@dataclass(frozen=True)
class MixturePValue:
    pvalue: float
    stderr: float
    draws: int


def _require_positive_a(t):
    if t.a_exp <= 0 or t.a_zero:
        raise DegenerateTuning(
            f"sandwich matrices need A > 0, got A={t.a_exp:.6g} (beta={t.beta}, gamma={t.gamma})"
        )


def model_support(family, theta, eps=EPS_NORM, *others):
    """{0, ..., m} covering the truncated supports of every parameter given"""
    reach = max((family.support_upper(th, eps) for th in others), default=None)
    return truncated_support(family, theta, eps, observed_max=reach)


@dataclass
class _ModelTerms:
    log_f: np.ndarray
    score: np.ndarray
    score_grad: np.ndarray
    f_pow: np.ndarray
    big_a: np.ndarray
    big_b: float
    w: np.ndarray


def _model_terms(family, theta, t, support):
    log_f = family.log_pmf(theta, support)
    u = family.score(theta, support)
    f_pow = np.exp((1.0 + t.beta) * log_f)
    big_b = float(f_pow.sum())
    big_a = f_pow @ u
    return _ModelTerms(
        log_f=log_f,
        score=u,
        score_grad=family.score_grad(theta, support),
        f_pow=f_pow,
        big_a=big_a,
        big_b=big_b,
        w=big_b * u - big_a,
    )


def _weight_jacobian(m, t):
    """d w_j / d theta_k for every support point, shape (k, p, p)"""
    beta = t.beta
    u, du, f_pow = m.score, m.score_grad, m.f_pow
    d_big_b = (1.0 + beta) * m.big_a
    d_big_a = (1.0 + beta) * np.einsum("x,xj,xk->jk", f_pow, u, u) + np.einsum("x,xjk->jk", f_pow, du)
    return u[:, :, None] * d_big_b[None, None, :] + m.big_b * du - d_big_a[None, :, :]


def _aligned(g, support):
    if not np.array_equal(g.support, support):
        g = g.on_support(support)
    return g


def _data_support(g, family, theta, eps):
    return truncated_support(family, theta, eps, observed_max=g.support[-1])


def j_matrix(g, family, theta, t, eps=EPS_NORM):
    """J_g evaluated at theta for a data density g (three-term form)"""
    _require_positive_a(t)
    theta = family.check_theta(theta)
    support = _data_support(g, family, theta, eps)
    g = _aligned(g, support)
    m = _model_terms(family, theta, t, support)
    a, b = t.a_exp, t.b_exp
    pos = g.positive
    log_g = g.log_mass()

    # g K'(delta) f^beta = A g^A f^B on the cells where g > 0
    lead = np.zeros(support.size)
    lead[pos] = a * np.exp(a * log_g[pos] + b * m.log_f[pos])
    first = np.einsum("x,xj,xk->jk", lead, m.w, m.score)

    # K(delta) f^(1+beta) = g^A f^B - f^(1+beta)
    kf = -m.f_pow.copy()
    kf[pos] += np.exp(a * log_g[pos] + b * m.log_f[pos])
    second = np.einsum("x,xjk->jk", kf, _weight_jacobian(m, t))
    third = (1.0 + t.beta) * np.einsum("x,xj,xk->jk", kf, m.w, m.score)
    return first - second - third


def j_matrix_at_model(family, theta, t, eps=EPS_NORM):
    """J at g = f_theta: A (B(theta) sum f^(1+beta) u u' - A(theta) A(theta)')"""
    _require_positive_a(t)
    theta = family.check_theta(theta)
    m = _model_terms(family, theta, t, model_support(family, theta, eps))
    outer = np.einsum("x,xj,xk->jk", m.f_pow, m.score, m.score)
    return t.a_exp * (m.big_b * outer - np.outer(m.big_a, m.big_a))


def v_matrix(g, family, theta, t, eps=EPS_NORM):
    """Var_g of K'(delta) f^beta w"""
    _require_positive_a(t)
    theta = family.check_theta(theta)
    support = _data_support(g, family, theta, eps)
    g = _aligned(g, support)
    m = _model_terms(family, theta, t, support)
    a = t.a_exp
    pos = g.positive
    log_g = g.log_mass()
    probs = g.mass[pos] / g.mass[pos].sum()
    # K'(delta) f^beta = A exp((A - 1) log(g/f) + beta log f)
    scale = a * np.exp((a - 1.0) * (log_g[pos] - m.log_f[pos]) + t.beta * m.log_f[pos])
    z = scale[:, None] * m.w[pos]
    mean = probs @ z
    cov = (z * probs[:, None]).T @ z - np.outer(mean, mean)
    return 0.5 * (cov + cov.T)


def v_matrix_at_model(family, theta, t, eps=EPS_NORM):
    """V at g = f_theta: A^2 Var_f(f^beta w); the mean sum f^(1+beta) w vanishes"""
    _require_positive_a(t)
    theta = family.check_theta(theta)
    m = _model_terms(family, theta, t, model_support(family, theta, eps))
    f_tilt = np.exp((1.0 + 2.0 * t.beta) * m.log_f)
    return t.a_exp**2 * np.einsum("x,xj,xk->jk", f_tilt, m.w, m.w)


def sandwich_matrices(family, theta, t, g=None, eps=EPS_NORM):
    """J and V at theta, against g or, when g is None, against the model itself"""
    theta = family.check_theta(theta)
    if g is None:
        j_mat = j_matrix_at_model(family, theta, t, eps)
        v_mat = v_matrix_at_model(family, theta, t, eps)
    else:
        j_mat = j_matrix(g, family, theta, t, eps)
        v_mat = v_matrix(g, family, theta, t, eps)
    return SandwichMatrices(j_mat=j_mat, v_mat=v_mat, theta=theta, tuning=t)


def _checked_inverse(j_mat):
    j_mat = np.atleast_2d(np.asarray(j_mat, dtype=np.float64))
    cond = np.linalg.cond(j_mat)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularMatrix(f"J is singular or badly conditioned (condition number {cond:.3g})")
    return linalg.inv(j_mat)


def _sandwich(j_mat, v_mat):
    j_inv = _checked_inverse(j_mat)
    out = j_inv @ np.atleast_2d(v_mat) @ j_inv.T
    return 0.5 * (out + out.T)


def sandwich_variance(sm):
    """J^-1 V J^-1"""
    return _sandwich(sm.j_mat, sm.v_mat)


def attach_sandwich(result, family, table=None, eps=EPS_NORM):
    """Fill result.sandwich_variance; model-based unless a table is given for the empirical version"""
    g = None
    if table is not None:
        g = DiscreteDensity(table.support, table.count_array / table.n)
    sm = sandwich_matrices(family, result.theta_hat, result.tuning, g=g, eps=eps)
    result.sandwich_variance = sandwich_variance(sm)
    return result


def model_lsd(family, theta, theta0, t, eps=EPS_NORM):
    """LSD(f_theta, f_theta0) over the union of both truncated supports"""
    support = model_support(family, theta, eps, theta0)
    return lsd_divergence(family.density(theta, support), family.density(theta0, support), t)


def lsd_gradient_first(family, theta, theta0, t, eps=EPS_NORM):
    """Gradient of theta -> LSD(f_theta, f_theta0)"""
    if t.a_zero:
        raise DegenerateTuning(f"A vanishes at beta={t.beta}, gamma={t.gamma}")
    theta = family.check_theta(theta)
    theta0 = family.check_theta(theta0)
    support = model_support(family, theta, eps, theta0)
    log_f = family.log_pmf(theta, support)
    log_f0 = family.log_pmf(theta0, support)
    u = family.score(theta, support)
    beta = t.beta
    weights = softmax((1.0 + beta) * log_f)
    if t.b_zero:
        tilt = log_f - log_f0
        centred = u - weights @ u
        return (1.0 + beta) * (weights * (tilt - weights @ tilt)) @ centred
    cross = softmax(t.a_exp * log_f + t.b_exp * log_f0)
    return (1.0 + beta) / t.b_exp * (weights @ u - cross @ u)


def a_matrix(family, theta0, t, eps=EPS_NORM):
    """Hessian of theta -> LSD(f_theta, f_theta0) at theta0 by central differences of the gradient"""
    theta0 = family.check_theta(theta0)
    at_null = model_lsd(family, theta0, theta0, t, eps)
    grad_null = lsd_gradient_first(family, theta0, theta0, t, eps)
    if abs(at_null) > 1e-10 or np.max(np.abs(grad_null)) > 1e-8:
        raise NumericalFailure(
            f"LSD or its gradient does not vanish at theta0 (value {at_null:.3g}, gradient {grad_null})"
        )

    p = theta0.size
    hess = np.empty((p, p))
    for k in range(p):
        h = 1e-5 * (1.0 + abs(theta0[k]))
        low, high = family.param_bounds[k]
        if not (low < theta0[k] - h and theta0[k] + h < high):
            raise NumericalFailure(f"differencing step {h:.3g} leaves the parameter range at {theta0[k]}")
        step = np.zeros(p)
        step[k] = h
        up = lsd_gradient_first(family, theta0 + step, theta0, t, eps)
        down = lsd_gradient_first(family, theta0 - step, theta0, t, eps)
        hess[:, k] = (up - down) / (2.0 * h)
    if not np.all(np.isfinite(hess)):
        raise NumericalFailure("non-finite Hessian entries")
    return 0.5 * (hess + hess.T)


def _psd_sqrt(mat):
    vals, vecs = linalg.eigh(0.5 * (mat + mat.T))
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def quadform_null(a_mat, j_mat, v_mat):
    """Nonzero eigenvalues of A Sigma, Sigma = J^-1 V J^-1, in decreasing order"""
    a_mat = np.atleast_2d(np.asarray(a_mat, dtype=np.float64))
    sigma = _sandwich(j_mat, v_mat)
    product = sigma @ a_mat @ sigma
    singular = linalg.svdvals(product)
    top = singular.max() if singular.size else 0.0
    rank = int(np.sum(singular > RANK_TOL * top)) if top > 0 else 0

    root = _psd_sqrt(sigma)
    zeta = linalg.eigvalsh(root @ a_mat @ root)
    zeta = zeta[np.argsort(-np.abs(zeta))][:rank]
    eigenvalues = tuple(float(z) for z in sorted(zeta, reverse=True))
    logger.debug("null quadratic form: rank %d, eigenvalues %s", rank, eigenvalues)
    return QuadFormNull(eigenvalues=eigenvalues, rank=rank, a_mat=a_mat, sigma=sigma)


def null_for_model(family, theta0, t, eps=EPS_NORM):
    """Quadratic-form null law of the LSD statistics at theta0"""
    return quadform_null(
        a_matrix(family, theta0, t, eps),
        j_matrix_at_model(family, theta0, t, eps),
        v_matrix_at_model(family, theta0, t, eps),
    )


def _check_mixture_args(eigs, draws, streams):
    eigs = np.asarray(eigs, dtype=np.float64).ravel()
    if eigs.size == 0:
        raise BadParameter("the chi-square mixture needs at least one weight")
    if not np.all(np.isfinite(eigs)):
        raise BadParameter("mixture weights must be finite")
    if int(draws) < MIN_DRAWS:
        raise BadParameter(f"draws must be at least {MIN_DRAWS}, got {draws}")
    if int(streams) < 1:
        raise BadParameter(f"streams must be positive, got {streams}")
    return eigs


def _stream_sizes(draws, streams):
    base, extra = divmod(int(draws), int(streams))
    return [base + (1 if i < extra else 0) for i in range(int(streams))]


def _stream_samples(eigs, size, seed):
    rng = np.random.default_rng(seed)
    out = np.empty(size)
    for start in range(0, size, STREAM_CHUNK):
        stop = min(start + STREAM_CHUNK, size)
        z = rng.standard_normal((stop - start, eigs.size))
        out[start:stop] = (z * z) @ eigs
    return out


def _stream_exceedances(eigs, size, seed, observed):
    return int(np.count_nonzero(_stream_samples(eigs, size, seed) > observed))


def chisq_mixture_pvalue(eigs, observed, draws=1_000_000, seed=0, streams=8, n_jobs=1):
    """Monte Carlo P(sum zeta_i Z_i^2 > observed)"""
    eigs = _check_mixture_args(eigs, draws, streams)
    observed = float(observed)
    if not observed >= 0:
        raise BadParameter(f"observed statistic must be nonnegative, got {observed}")
    sizes = _stream_sizes(draws, streams)
    logger.debug("mixture p-value: %d draws over %d streams", draws, len(sizes))
    counts = Parallel(n_jobs=n_jobs)(
        delayed(_stream_exceedances)(eigs, size, seed + i, observed) for i, size in enumerate(sizes)
    )
    draws = int(sum(sizes))
    pvalue = sum(counts) / draws
    return MixturePValue(pvalue=pvalue, stderr=math.sqrt(pvalue * (1.0 - pvalue) / draws), draws=draws)


def chisq_mixture_quantile(eigs, prob, draws=1_000_000, seed=0, streams=8, n_jobs=1):
    """Empirical prob-quantile of sum zeta_i Z_i^2"""
    eigs = _check_mixture_args(eigs, draws, streams)
    if not (0.0 < prob < 1.0):
        raise BadParameter(f"quantile level must lie in (0, 1), got {prob}")
    sizes = _stream_sizes(draws, streams)
    parts = Parallel(n_jobs=n_jobs)(
        delayed(_stream_samples)(eigs, size, seed + i) for i, size in enumerate(sizes)
    )
    return float(np.quantile(np.concatenate(parts), prob))
