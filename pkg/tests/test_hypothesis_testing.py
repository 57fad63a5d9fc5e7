import math

import numpy as np
import pytest
from scipy import stats

from asymptotics import MIN_DRAWS, model_lsd
from divergence_core import derive_tuning
from errors import BadParameter
from estimation import FrequencyTable, minimize_lsd
from hypothesis_testing import (
    CHISQ1,
    TestingConfig,
    normalizing_constant,
    one_sample_test,
    pooled_estimate,
    power_approximation,
    signed_two_sample_test,
    simulate_estimator_distribution,
    simulate_test_level,
    two_sample_test,
)

OUTLIERS = {6, 7}
FAST = TestingConfig(draws=MIN_DRAWS, streams=4)


class TestPooledEstimate:
    @pytest.mark.parametrize(
        "beta,gamma,full_hat,deleted_hat",
        [(0.2, 0.0, 0.1240, 0.1229), (0.0, 0.2, 0.3607, 0.1444)],
    )
    def test_drosophila_pooled(self, control, treated, poisson, beta, gamma, full_hat, deleted_hat):
        t = derive_tuning(beta, gamma)
        assert pooled_estimate(control, treated, poisson, t).theta == pytest.approx(full_hat, abs=5e-4)
        deleted = treated.drop_cells(OUTLIERS)
        assert pooled_estimate(control, deleted, poisson, t).theta == pytest.approx(deleted_hat, abs=5e-4)

    def test_pooling_a_table_with_itself(self, drosophila_one, poisson):
        t = derive_tuning(0.3, 0.5)
        single = minimize_lsd(drosophila_one, poisson, t).theta
        assert pooled_estimate(drosophila_one, drosophila_one, poisson, t).theta == single


class TestOneSample:
    def test_null_value_at_the_mean(self, poisson):
        table = FrequencyTable.from_mapping({0: 10, 1: 10, 2: 10})
        result = one_sample_test(table, poisson, 1.0, derive_tuning(0.0, 0.0), config=FAST)
        assert result.statistic == pytest.approx(0.0, abs=1e-8)
        assert result.pvalue > 0.99
        assert not result.reject

    def test_far_null_is_rejected(self, poisson):
        table = FrequencyTable.from_mapping({0: 10, 1: 10, 2: 10})
        result = one_sample_test(table, poisson, 3.0, derive_tuning(0.0, 0.0), config=FAST)
        # 2n * LD(1, 3) = 60 * (log(1/3) + 2)
        assert result.statistic == pytest.approx(60 * (math.log(1 / 3) + 2), rel=1e-5)
        assert result.reject
        assert result.null_spec.rank == 1

    def test_robust_tuning_keeps_a_rank_one_null(self, drosophila_one, poisson):
        result = one_sample_test(drosophila_one, poisson, 0.2, derive_tuning(0.5, 0.3), config=FAST)
        assert result.null_spec.rank == 1
        assert 0.0 <= result.pvalue <= 1.0
        assert result.statistic >= 0


class TestTwoSample:
    def test_identical_tables(self, drosophila_one, poisson):
        result = two_sample_test(drosophila_one, drosophila_one, poisson, derive_tuning(0.3, 0.2), config=FAST)
        assert result.statistic == pytest.approx(0.0, abs=1e-10)
        assert result.pvalue > 0.999
        assert result.estimates[0] == result.estimates[1]

    def test_likelihood_ratio_cell(self, control, treated, poisson):
        result = two_sample_test(control, treated, poisson, derive_tuning(0.0, 0.0), config=FAST)
        assert result.estimates[0][0] == pytest.approx(21 / 177, abs=1e-6)
        assert result.estimates[1][0] == pytest.approx(34 / 128, abs=1e-6)
        assert result.statistic == pytest.approx(7.632, abs=0.01)
        assert result.pvalue == pytest.approx(stats.chi2.sf(result.statistic, 1), abs=0.002)

    def test_far_apart_poisson_samples(self, drosophila_one, poisson):
        far = FrequencyTable.from_mapping({75: 2, 78: 2, 80: 3, 82: 2, 85: 1})
        result = two_sample_test(far, drosophila_one, poisson, derive_tuning(0.0, 0.0), config=FAST)
        assert result.estimates[0][0] == pytest.approx(far.mean, abs=1e-6)
        assert math.isfinite(result.statistic) and result.statistic > 1000
        assert result.pvalue < 1e-3


class TestSignedTwoSample:
    def test_normalizing_constant_at_origin(self, poisson):
        assert normalizing_constant(poisson, 0.18, derive_tuning(0.0, 0.0)) == pytest.approx(1.0, rel=1e-6)

    def test_normalizing_constant_needs_scalar_parameter(self, poisson):
        class Pair:
            param_dim = 2

        with pytest.raises(BadParameter):
            normalizing_constant(Pair(), 0.1, derive_tuning(0.0, 0.0))

    def test_result_shape(self, control, treated, poisson):
        result = signed_two_sample_test(control, treated, poisson, derive_tuning(0.0, 0.0))
        assert result.null_spec == CHISQ1
        assert result.sides == "one-sided"
        assert len(result.estimates) == 3
        assert result.details["direction"] == 1.0
        assert result.details["zeta"] == pytest.approx(1.0, rel=1e-6)
        assert result.statistic == pytest.approx(result.details["raw_statistic"], rel=1e-6)

    def test_outliers_drive_the_likelihood_ratio(self, control, treated, poisson):
        t = derive_tuning(0.0, 0.0)
        full = signed_two_sample_test(control, treated, poisson, t)
        deleted = signed_two_sample_test(control, treated.drop_cells(OUTLIERS), poisson, t)
        assert full.pvalue == pytest.approx(0.003, abs=0.01)
        assert full.pvalue < 0.01 < deleted.pvalue

    @pytest.mark.parametrize("gamma", [-0.8, 0.0, 0.8])
    def test_beta_one_is_stable_under_outliers(self, control, treated, poisson, gamma):
        t = derive_tuning(1.0, gamma)
        full = signed_two_sample_test(control, treated, poisson, t)
        deleted = signed_two_sample_test(control, treated.drop_cells(OUTLIERS), poisson, t)
        assert full.pvalue == pytest.approx(0.831, abs=0.01)
        assert deleted.pvalue == pytest.approx(0.832, abs=0.01)

    def test_halved_tail_at_origin(self, control, treated, poisson):
        t = derive_tuning(0.0, 0.0)
        full = signed_two_sample_test(control, treated, poisson, t, convention="halved_tail")
        deleted = signed_two_sample_test(
            control, treated.drop_cells(OUTLIERS), poisson, t, convention="halved_tail"
        )
        assert full.pvalue == pytest.approx(0.003, abs=0.01)
        assert deleted.pvalue == pytest.approx(0.141, abs=0.01)

    def test_conventions_on_equal_samples(self, control, poisson):
        t = derive_tuning(0.2, 0.0)
        for convention, expected in (("chisq_tail", 1.0), ("signed_root", 0.5), ("halved_tail", 0.5)):
            result = signed_two_sample_test(control, control, poisson, t, convention=convention)
            assert result.pvalue == pytest.approx(expected, abs=1e-6)

    @pytest.mark.parametrize(
        "convention,forward_p,backward_p", [("chisq_tail", 0.0057, 1.0), ("halved_tail", 0.0029, 0.9992)]
    )
    def test_swapped_samples(self, control, treated, poisson, convention, forward_p, backward_p):
        t = derive_tuning(0.0, 0.0)
        forward = signed_two_sample_test(control, treated, poisson, t, convention=convention)
        backward = signed_two_sample_test(treated, control, poisson, t, convention=convention)
        assert backward.details["direction"] == -1.0
        assert forward.pvalue == pytest.approx(forward_p, abs=5e-4)
        assert backward.pvalue == pytest.approx(backward_p, abs=5e-4)

    def test_pvalue_falls_as_treated_counts_grow(self, control, poisson):
        t = derive_tuning(0.2, 0.0)
        base = control.as_dict()
        pvalues = []
        for extra in (0, 2, 4, 8, 16):
            treated = FrequencyTable.from_mapping({x: c + (extra if x >= 1 else 0) for x, c in base.items()})
            pvalues.append(signed_two_sample_test(control, treated, poisson, t, convention="signed_root").pvalue)
        assert pvalues[0] == pytest.approx(0.5, abs=1e-6)
        assert all(a >= b for a, b in zip(pvalues, pvalues[1:]))
        assert pvalues[-1] < 0.05

    def test_signed_root_direction(self, control, treated, poisson):
        t = derive_tuning(0.0, 0.0)
        forward = signed_two_sample_test(control, treated, poisson, t, convention="signed_root")
        backward = signed_two_sample_test(treated, control, poisson, t, convention="signed_root")
        assert forward.pvalue < 0.5 < backward.pvalue

    def test_unknown_convention(self, control, treated, poisson):
        with pytest.raises(BadParameter):
            signed_two_sample_test(control, treated, poisson, derive_tuning(0.0, 0.0), convention="exact")


class TestPowerApproximation:
    def test_rejects_null_value(self, poisson):
        with pytest.raises(BadParameter):
            power_approximation(1.0, 1.0, poisson, derive_tuning(0.0, 0.0), 50, config=FAST)

    def test_rejects_empty_sample(self, poisson):
        with pytest.raises(BadParameter):
            power_approximation(1.5, 1.0, poisson, derive_tuning(0.0, 0.0), 0, config=FAST)

    def test_grows_with_distance_from_null(self, poisson):
        t = derive_tuning(0.0, 0.0)
        powers = [power_approximation(s, 1.0, poisson, t, 50, config=FAST).power for s in (1.2, 1.5, 2.0)]
        assert powers == sorted(powers)
        assert powers[0] == pytest.approx(0.245, abs=0.02)
        assert powers[-1] > 0.99

    def test_likelihood_ratio_pieces(self, poisson):
        approx = power_approximation(1.5, 1.0, poisson, derive_tuning(0.0, 0.0), 50, config=FAST)
        assert approx.critical_value == pytest.approx(3.841, abs=0.05)
        assert approx.m_vec[0] == pytest.approx(math.log(1.5), rel=1e-6)
        assert approx.sigma == pytest.approx(math.log(1.5) * math.sqrt(1.5), rel=1e-5)

    def test_robust_tuning_anchor(self, poisson):
        t = derive_tuning(0.2, 0.0)
        approx = power_approximation(1.5, 1.0, poisson, t, 100, config=FAST)
        shift = model_lsd(poisson, 1.5, 1.0, t)
        expected = stats.norm.sf(10.0 / approx.sigma * (approx.critical_value / 200.0 - shift))
        assert approx.power == pytest.approx(expected, rel=1e-12)
        assert 0.8 < approx.power < 1.0
        powers = [power_approximation(1.5, 1.0, poisson, t, n, config=FAST).power for n in (50, 100, 200)]
        assert powers == sorted(powers)
        assert math.isclose(powers[1], approx.power)

    def test_tends_to_one_with_sample_size(self, poisson):
        t = derive_tuning(0.3, 0.5)
        assert power_approximation(1.2, 1.0, poisson, t, 5000, config=FAST).power > 0.999


class TestSimulation:
    def test_single_replicate_has_no_variance(self, poisson):
        sim = simulate_estimator_distribution(poisson, 1.0, derive_tuning(0.0, 0.0), 30, 1, seed=5)
        assert sim.successes == 1 and sim.failures == 0
        assert not sim.variance_defined
        assert sim.sandwich[0, 0] == pytest.approx(1.0, rel=1e-6)

    def test_replicates_are_reproducible(self, geometric):
        t = derive_tuning(0.3, 0.2)
        first = simulate_estimator_distribution(geometric, 0.4, t, 50, 20, seed=11)
        second = simulate_estimator_distribution(geometric, 0.4, t, 50, 20, seed=11)
        assert np.array_equal(first.estimates, second.estimates)
        assert first.variance_defined

    def test_bad_replicates(self, poisson):
        with pytest.raises(BadParameter):
            simulate_estimator_distribution(poisson, 1.0, derive_tuning(0.0, 0.0), 30, 0, seed=5)
        with pytest.raises(BadParameter):
            simulate_test_level(poisson, 1.0, derive_tuning(0.0, 0.0), 30, 0, config=FAST)

    @pytest.mark.slow
    @pytest.mark.parametrize("beta,gamma", [(0.0, 0.0), (0.3, 0.0), (0.3, 0.5)])
    def test_level_matches_nominal(self, poisson, beta, gamma):
        study = simulate_test_level(
            poisson, 2.0, derive_tuning(beta, gamma), 200, 2000, alpha=0.05, seed=99, config=FAST
        )
        assert study.failures == 0
        assert study.rejection_rate == pytest.approx(0.05, abs=0.02)
