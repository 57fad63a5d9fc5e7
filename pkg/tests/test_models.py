import math

import numpy as np
import pytest
from scipy import stats

from errors import BadParameter
from models import FAMILIES, get_family, truncated_support


class TestGeometric:
    def test_pmf_values(self, geometric):
        assert geometric.pmf(0.5, [0, 3]) == pytest.approx([0.5, 0.0625])

    def test_score_closed_form(self, geometric):
        assert geometric.score(0.5, [1])[0, 0] == pytest.approx(0.0)
        assert geometric.score(0.25, [2])[0, 0] == pytest.approx(4.0 - 2.0 / 0.75)

    def test_support_upper_solves_tail(self, geometric):
        m = geometric.support_upper(0.5, 1e-12)
        assert 0.5 ** (m + 1) <= 1e-12 < 0.5**m
        assert m == 39

    def test_bounds(self, geometric):
        for theta in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(BadParameter):
                geometric.pmf(theta, [0])

    def test_mle(self, geometric):
        assert geometric.closed_form_mle(1.0)[0] == pytest.approx(0.5)


class TestPoisson:
    def test_pmf_values(self, poisson):
        assert poisson.pmf(1.0, [0])[0] == pytest.approx(math.exp(-1.0))
        assert poisson.pmf(2.5, np.arange(6)) == pytest.approx(stats.poisson.pmf(np.arange(6), 2.5))

    def test_score_zero_at_mean(self, poisson):
        assert poisson.score(2.0, [2])[0, 0] == pytest.approx(0.0)

    @pytest.mark.parametrize("theta", [0.1, 0.36, 2.0, 15.0])
    def test_support_upper_tail_mass(self, poisson, theta):
        eps = 1e-12
        m = poisson.support_upper(theta, eps)
        assert stats.poisson.sf(m, theta) <= eps * (1 + 1e-6)
        assert m == 0 or stats.poisson.sf(m - 1, theta) > eps

    def test_bounds(self, poisson):
        with pytest.raises(BadParameter):
            poisson.pmf(0.0, [0])
        with pytest.raises(BadParameter):
            poisson.pmf(-1.0, [0])

    def test_mle_is_mean(self, poisson):
        assert poisson.closed_form_mle(0.75)[0] == 0.75

    def test_density_keeps_log_mass_in_far_tail(self, poisson):
        support = np.arange(500)
        d = poisson.density(0.36, support)
        assert d.mass[-1] == 0.0
        assert d.log_mass()[-1] == pytest.approx(stats.poisson.logpmf(499, 0.36), rel=1e-12)
        assert d.positive.all()


@pytest.mark.parametrize("name", sorted(FAMILIES))
class TestFamilyContract:
    def _thetas(self, name, rng, count):
        if name == "geometric":
            return rng.uniform(0.05, 0.95, count)
        return rng.uniform(0.05, 20.0, count)

    def test_mean_zero_score(self, name, rng):
        family = get_family(name)
        for theta in self._thetas(name, rng, 100):
            x = truncated_support(family, theta, 1e-15)
            assert family.pmf(theta, x) @ family.score(theta, x)[:, 0] == pytest.approx(0.0, abs=1e-10)

    def test_pmf_sums_to_one(self, name, rng):
        family = get_family(name)
        for theta in self._thetas(name, rng, 20):
            x = truncated_support(family, theta, 1e-12)
            assert 1.0 - 1e-11 <= family.pmf(theta, x).sum() <= 1.0 + 1e-12

    def test_score_matches_finite_difference(self, name, rng):
        family = get_family(name)
        x = np.arange(8)
        for theta in self._thetas(name, rng, 10):
            h = 1e-6 * theta
            fd = (family.log_pmf(theta + h, x) - family.log_pmf(theta - h, x)) / (2 * h)
            assert family.score(theta, x)[:, 0] == pytest.approx(fd, rel=1e-6, abs=1e-6)

    def test_score_grad_matches_finite_difference(self, name, rng):
        family = get_family(name)
        x = np.arange(8)
        for theta in self._thetas(name, rng, 10):
            h = 1e-6 * theta
            fd = (family.score(theta + h, x) - family.score(theta - h, x))[:, 0] / (2 * h)
            assert family.score_grad(theta, x)[:, 0, 0] == pytest.approx(fd, rel=1e-5, abs=1e-5)

    def test_sampler_mean(self, name):
        family = get_family(name)
        theta = 0.4 if name == "geometric" else 3.0
        draws = family.sample(theta, 200_000, np.random.default_rng(7))
        assert draws.min() >= 0
        assert family.closed_form_mle(draws.mean())[0] == pytest.approx(theta, rel=0.02)

    def test_loose_tolerance_keeps_zero(self, name):
        family = get_family(name)
        theta = 0.5
        assert truncated_support(family, theta, 0.5)[0] == 0

    def test_observed_max_extends_support(self, name):
        family = get_family(name)
        x = truncated_support(family, 0.5, observed_max=200)
        assert x[-1] == 200


def test_unknown_family():
    with pytest.raises(BadParameter):
        get_family("binomial")


def test_tolerance_range(poisson):
    with pytest.raises(BadParameter):
        truncated_support(poisson, 1.0, 0.0)
