import unittest
import warnings

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cf_parity.causal_models import AdditiveErrorModel, BinaryTreatmentGaussianModel, sample_cross_world
from cf_parity.errors import InputError
from cf_parity.predictors import (
    CoinFlip,
    LinearAX,
    LinearEquation,
    PathSpecific,
    PotentialOutcomeLinear,
    PredictorKind,
    RosenblattDp,
    Standardized,
    coin_flip_score,
    linear_cancellation_coefficients,
    monotone_dominance,
    path_specific_score,
    potential_outcome_score,
    predictor_from_config,
    rosenblatt_dp_score,
    standardized_score,
)


class TestStandardizedScore(unittest.TestCase):

    def setUp(self):
        self.model = BinaryTreatmentGaussianModel(mu0=1.0, mu1=3.0, sigma0=1.0, sigma1=2.0, rho=0.3, p1=0.4)

    def test_values(self):
        self.assertEqual(standardized_score(self.model, 0, 1.0), 0.0)
        self.assertEqual(standardized_score(self.model, 0, 2.0), 1.0)
        self.assertEqual(standardized_score(self.model, 1, 5.0), 1.0)

    def test_depends_on_arm_given_x(self):
        self.assertNotEqual(standardized_score(self.model, 0, 2.0), standardized_score(self.model, 1, 2.0))

    def test_each_arm_is_standard_gaussian(self):
        """The score given A=0 and given A=1 have the same law."""
        frame = sample_cross_world(self.model, 100_000, seed=1)
        score = standardized_score(self.model, frame["a"], frame["x"])
        arm0, arm1 = score[frame["a"] == 0], score[frame["a"] == 1]
        self.assertLess(stats.ks_2samp(arm0, arm1).statistic, 0.015)
        self.assertLess(stats.kstest(arm0, "norm").statistic, 0.01)
        self.assertLess(stats.kstest(arm1, "norm").statistic, 0.01)

    def test_invalid_arm(self):
        with self.assertRaises(InputError):
            standardized_score(self.model, 2, 0.0)


class TestLinearCancellation(unittest.TestCase):

    def test_coefficients(self):
        self.assertEqual(linear_cancellation_coefficients(1.0, 1.0), (-1.0, 1.0))
        self.assertEqual(linear_cancellation_coefficients(1.0, 0.0), (0.0, 1.0))
        self.assertEqual(linear_cancellation_coefficients(2.0, 1.0), (-0.5, 1.0))

    def test_score_uncorrelated_with_treatment(self):
        world = AdditiveErrorModel(slope=0.5, a_sd=np.sqrt(2.0))
        lambda1, lambda2 = linear_cancellation_coefficients(world.cov_aa, world.cov_ax)
        self.assertAlmostEqual(lambda1, -0.5)
        draws = world.sample(100_000, seed=9)
        score = LinearAX(lambda1, lambda2).score(draws["a"], draws["x"])
        self.assertLess(abs(np.cov(draws["a"], score)[0, 1]), 0.02)

    def test_degenerate_treatment(self):
        with self.assertRaises(InputError):
            linear_cancellation_coefficients(0.0, 1.0)


class TestRosenblattScore(unittest.TestCase):

    def setUp(self):
        self.model = BinaryTreatmentGaussianModel(mu0=0.0, mu1=2.0, sigma0=1.0, sigma1=0.5, rho=0.0)
        self.family = {0: stats.norm(0.0, 1.0), 1: stats.norm(2.0, 0.5)}

    def test_median_maps_to_half(self):
        self.assertAlmostEqual(rosenblatt_dp_score(self.family, 0, 0.0), 0.5)
        self.assertAlmostEqual(rosenblatt_dp_score(self.family, 1, 2.0), 0.5)

    def test_probit_reproduces_standardized_score(self):
        x = np.linspace(-2.0, 4.0, 25)
        for arm in (0, 1):
            np.testing.assert_allclose(
                rosenblatt_dp_score(self.family, arm, x, h=stats.norm.ppf),
                standardized_score(self.model, arm, x),
                atol=1e-9,
            )

    def test_pooled_transform_is_uniform(self):
        frame = sample_cross_world(self.model, 100_000, seed=3)
        u = rosenblatt_dp_score(self.family, frame["a"].to_numpy(), frame["x"].to_numpy())
        self.assertLess(stats.kstest(u, "uniform").statistic, 0.01)

    def test_outside_support_is_clamped(self):
        family = {0: stats.uniform(0.0, 1.0), 1: stats.uniform(1.0, 1.0)}
        with self.assertWarns(UserWarning):
            u = rosenblatt_dp_score(family, np.array([0, 1]), np.array([-3.0, 5.0]))
        np.testing.assert_array_equal(u, [0.0, 1.0])

    def test_missing_arm(self):
        with self.assertRaises(InputError):
            rosenblatt_dp_score({0: stats.norm()}, 1, 0.0)

    def test_threshold_inverts_score(self):
        predictor = RosenblattDp.from_model(self.model, h=stats.norm.ppf, h_inverse=stats.norm.cdf)
        t, increasing = predictor.threshold(1, 0.7)
        self.assertTrue(increasing)
        self.assertAlmostEqual(float(predictor.score(1, t)), 0.7)

    def test_non_identity_h_needs_inverse(self):
        predictor = RosenblattDp.from_model(self.model, h=stats.norm.ppf)
        with self.assertRaises(InputError):
            predictor.threshold(0, 0.1)


class TestPotentialOutcomeScore(unittest.TestCase):

    def test_values(self):
        self.assertEqual(potential_outcome_score(1.0, 1.0, 2.0, 4.0), 6.0)
        self.assertEqual(potential_outcome_score(1.0, 0.0, 2.0, 4.0), 2.0)

    def test_same_score_in_both_worlds(self):
        model = BinaryTreatmentGaussianModel(mu0=0.0, mu1=1.0, sigma0=1.0, sigma1=1.0, rho=0.2)
        frame = sample_cross_world(model, 1000, seed=4)
        predictor = PotentialOutcomeLinear(0.7, -1.3)
        np.testing.assert_array_equal(predictor.score_world(frame, 0), predictor.score_world(frame, 1))

    def test_not_defined_on_factual_pair(self):
        with self.assertRaises(InputError):
            PotentialOutcomeLinear(1.0, 1.0).score(0, 1.0)

    def test_positive_mode(self):
        with self.assertRaises(InputError):
            PotentialOutcomeLinear(1.0, 0.0, positive=True)


class TestMonotoneDominance(unittest.TestCase):

    def test_worked_pair(self):
        """Equal factual score 3: unit 1 scores 7 and unit 2 scores 5."""
        self.assertEqual(potential_outcome_score(1.0, 1.0, 3.0, 4.0), 7.0)
        self.assertEqual(potential_outcome_score(1.0, 1.0, 2.0, 3.0), 5.0)
        self.assertTrue(monotone_dominance(1.0, 1.0, (3.0, 4.0), (2.0, 3.0)))

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(0.01, 10.0), st.floats(0.01, 10.0),
        st.floats(-10.0, 10.0), st.floats(0.0, 5.0), st.floats(0.0, 5.0),
    )
    def test_dominance_holds(self, lambda1, lambda2, x, gap1, gap2):
        self.assertTrue(monotone_dominance(lambda1, lambda2, (x, x + gap1), (x - gap2, x)))

    def test_preconditions(self):
        with self.assertRaises(InputError):
            monotone_dominance(-1.0, 1.0, (3.0, 4.0), (2.0, 3.0))
        with self.assertRaises(InputError):
            monotone_dominance(1.0, 1.0, (3.0, 2.0), (2.0, 3.0))
        with self.assertRaises(InputError):
            monotone_dominance(1.0, 1.0, (3.0, 4.0), (1.0, 2.0))


class TestPathSpecificScore(unittest.TestCase):

    def setUp(self):
        self.f_x = LinearEquation(a=1.0, u=1.0)
        self.f_z = LinearEquation(a=1.0, x=1.0, u=1.0)

    def test_direct_edge_broken_at_baseline(self):
        self.assertEqual(path_specific_score(self.f_x, self.f_z, 1, 0.0, 0.0, baseline=0), 2.0)

    def test_baseline_equal_to_arm_keeps_factual_z(self):
        x = self.f_x(1, 0.4)
        z = self.f_z(1, -0.2, x)
        self.assertAlmostEqual(path_specific_score(self.f_x, self.f_z, 1, 0.4, -0.2, baseline=1), x + z)

    def test_direct_component_ignores_arm(self):
        """With u_x abducted from a factual (a, x), the score does not move when a changes."""
        x = 1.5
        scores = [path_specific_score(self.f_x, self.f_z, a, x - a, 0.3) for a in (0, 1)]
        self.assertEqual(scores[0], scores[1])
        self.assertAlmostEqual(scores[0], x + self.f_z(0, 0.3, x))

    def test_predictor_wrapper(self):
        predictor = PathSpecific(self.f_x, self.f_z)
        self.assertEqual(predictor.score_exogenous(1, 0.0, 0.0), 2.0)
        self.assertEqual(PathSpecific(self.f_x, self.f_z, baselines=(0, 1)).score_exogenous(1, 0.0, 0.0), 4.0)


class TestCoinFlip(unittest.TestCase):

    def test_degenerate_coins(self):
        self.assertTrue((coin_flip_score(0.0, seed=1, n=1000) == 0).all())
        self.assertTrue((coin_flip_score(1.0, seed=1, n=1000) == 1).all())
        self.assertIn(coin_flip_score(0.5, seed=1), (0, 1))

    def test_fair_coin_mean(self):
        self.assertAlmostEqual(coin_flip_score(0.5, seed=2, n=100_000).mean(), 0.5, delta=0.005)

    def test_invalid_p(self):
        with self.assertRaises(InputError):
            coin_flip_score(1.5, seed=0)
        with self.assertRaises(InputError):
            CoinFlip(-0.1)

    def test_coin_ignores_world(self):
        model = BinaryTreatmentGaussianModel(mu0=0.0, mu1=1.0, sigma0=1.0, sigma1=1.0, rho=0.0)
        frame = sample_cross_world(model, 500, seed=0)
        coin = CoinFlip(0.3).draw(len(frame), seed=5)
        predictor = CoinFlip(0.3)
        np.testing.assert_array_equal(predictor.score_world(frame, 0, coin), predictor.score_world(frame, 1, coin))


class TestPredictorFromConfig(unittest.TestCase):

    def setUp(self):
        self.model = BinaryTreatmentGaussianModel(mu0=0.0, mu1=1.0, sigma0=1.0, sigma1=1.0, rho=0.5)

    def test_every_kind(self):
        cases = {
            "predictor=standardized": Standardized,
            "predictor=linear_ax lambda1=-1 lambda2=1": LinearAX,
            "predictor=po_linear lambda1=1 lambda2=1": PotentialOutcomeLinear,
            "predictor=rosenblatt h=probit": RosenblattDp,
            "predictor=coin_flip p=0.5 seed=3": CoinFlip,
            "predictor=path_specific baseline=1": PathSpecific,
        }
        for text, cls in cases.items():
            self.assertIsInstance(predictor_from_config(text, self.model), cls, text)

    def test_identity_shorthand(self):
        self.assertEqual(predictor_from_config("identity"), LinearAX(0.0, 1.0, 0.0))

    def test_parameters_are_read(self):
        predictor = predictor_from_config("predictor=po_linear lambda1=2 lambda2=0.5")
        self.assertEqual(predictor.config(), {"predictor": "po_linear", "lambda1": 2.0, "lambda2": 0.5})
        self.assertEqual(predictor.kind, PredictorKind.PO_LINEAR)

    def test_errors(self):
        with self.assertRaises(InputError):
            predictor_from_config("predictor=oracle")
        with self.assertRaises(InputError):
            predictor_from_config("predictor=standardized")
        with self.assertRaises(InputError):
            predictor_from_config("predictor=po_linear lambda1=1")
        with self.assertRaises(InputError):
            predictor_from_config("predictor=rosenblatt h=logit", self.model)
        with self.assertRaises(InputError):
            predictor_from_config("lambda1=1")


if __name__ == "__main__":
    unittest.main()
