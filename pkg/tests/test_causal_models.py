import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from cf_parity.causal_models import (
    AdditiveErrorModel,
    BinaryTreatmentGaussianModel,
    SalaryModel,
    GaussianLaw,
    GpTreatmentModel,
    counterfactual_posterior,
    salary_cross_world,
    salary_fair_score,
    gp_cross_world_correlation,
    gp_observational_equivalence_check,
    iter_draws,
    model_from_config,
    model_to_config,
    monte_carlo_posterior,
    sample_cross_world,
    save_draws,
)
from cf_parity.errors import InputError, ModelError


class TestBinaryTreatmentGaussianModel(unittest.TestCase):

    def setUp(self):
        self.model = BinaryTreatmentGaussianModel(mu0=1.0, mu1=2.0, sigma0=1.0, sigma1=2.0, rho=0.5, p1=0.3)

    def test_invalid_parameters(self):
        """Non-positive scales, out-of-range rho or p1 and non-finite values are rejected."""
        bad = [
            dict(mu0=0, mu1=0, sigma0=0, sigma1=1, rho=0),
            dict(mu0=0, mu1=0, sigma0=1, sigma1=-1, rho=0),
            dict(mu0=0, mu1=0, sigma0=1, sigma1=1, rho=1.5),
            dict(mu0=0, mu1=0, sigma0=1, sigma1=1, rho=0, p1=1.2),
            dict(mu0=float("nan"), mu1=0, sigma0=1, sigma1=1, rho=0),
        ]
        for params in bad:
            with self.assertRaises(ModelError, msg=str(params)):
                BinaryTreatmentGaussianModel(**params)

    def test_config_round_trip(self):
        self.assertEqual(model_from_config(model_to_config(self.model)), self.model)

    def test_config_defaults_p1(self):
        model = model_from_config("mu0=1 mu1=1 sigma0=1 sigma1=1 rho=0")
        self.assertEqual(model.p1, 0.5)

    def test_config_errors(self):
        with self.assertRaises(InputError):
            model_from_config("mu0=1 mu1=1 sigma0=1 sigma1=1")
        with self.assertRaises(InputError):
            model_from_config("mu0=1 mu1=1 sigma0=1 sigma1=1 rho=0 tau=2")
        with self.assertRaises(InputError):
            model_from_config("mu0=one mu1=1 sigma0=1 sigma1=1 rho=0")

    def test_marginals(self):
        self.assertEqual(self.model.marginal(0), GaussianLaw(1.0, 1.0))
        self.assertEqual(self.model.marginal(1), GaussianLaw(2.0, 4.0))


class TestSampleCrossWorld(unittest.TestCase):

    def setUp(self):
        self.model = BinaryTreatmentGaussianModel(mu0=1.0, mu1=2.0, sigma0=1.0, sigma1=2.0, rho=0.5, p1=0.3)
        self.frame = sample_cross_world(self.model, 200_000, seed=7)

    def test_consistency(self):
        """The factual outcome is the potential outcome of the observed arm."""
        a = self.frame["a"].to_numpy()
        expected = np.where(a == 1, self.frame["x1"], self.frame["x0"])
        np.testing.assert_array_equal(self.frame["x"].to_numpy(), expected)

    def test_joint_law(self):
        f = self.frame
        self.assertAlmostEqual(f["a"].mean(), 0.3, delta=0.005)
        self.assertAlmostEqual(f["x0"].mean(), 1.0, delta=0.01)
        self.assertAlmostEqual(f["x1"].mean(), 2.0, delta=0.02)
        self.assertAlmostEqual(f["x0"].std(), 1.0, delta=0.01)
        self.assertAlmostEqual(f["x1"].std(), 2.0, delta=0.02)
        self.assertAlmostEqual(np.corrcoef(f["x0"], f["x1"])[0, 1], 0.5, delta=0.01)

    def test_observational_draws_do_not_depend_on_rho(self):
        for rho in (-0.99, 0.0, 1.0):
            other = sample_cross_world(
                BinaryTreatmentGaussianModel(1.0, 2.0, 1.0, 2.0, rho, 0.3), 200_000, seed=7
            )
            pd.testing.assert_frame_equal(other[["a", "x"]], self.frame[["a", "x"]])

    def test_degenerate_world_has_equal_potential_outcomes(self):
        model = BinaryTreatmentGaussianModel(mu0=1.0, mu1=1.0, sigma0=1.0, sigma1=1.0, rho=1.0)
        frame = sample_cross_world(model, 10_000, seed=8)
        np.testing.assert_array_equal(frame["x0"].to_numpy(), frame["x1"].to_numpy())

    def test_same_seed_same_draws(self):
        pd.testing.assert_frame_equal(sample_cross_world(self.model, 200_000, seed=7), self.frame)

    def test_iter_and_save_draws(self):
        draws = list(iter_draws(self.frame.head(5)))
        self.assertEqual(len(draws), 5)
        self.assertEqual(draws[0].x, draws[0].x1 if draws[0].a == 1 else draws[0].x0)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "draws.csv"
            save_draws(self.frame.head(5), path)
            self.assertEqual(path.read_text().splitlines()[0], "a,x0,x1,x")

    def test_inconsistent_draw(self):
        broken = self.frame.head(3).copy()
        broken.loc[0, "x"] = broken.loc[0, "x"] + 1.0
        with self.assertRaises(ModelError):
            list(iter_draws(broken))


class TestCounterfactualPosterior(unittest.TestCase):

    def setUp(self):
        self.base = dict(mu0=1.0, mu1=1.0, sigma0=1.0, sigma1=1.0)

    def test_closed_form(self):
        law = counterfactual_posterior(BinaryTreatmentGaussianModel(rho=0.5, **self.base), 0, 2.0)
        self.assertAlmostEqual(law.mean, 1.5)
        self.assertAlmostEqual(law.variance, 0.75)

    def test_degenerate_world_is_point_mass(self):
        law = counterfactual_posterior(BinaryTreatmentGaussianModel(rho=1.0, **self.base), 1, 2.5)
        self.assertTrue(law.is_point_mass)
        self.assertAlmostEqual(law.mean, 2.5)
        self.assertEqual(law.cdf(2.5), 1.0)
        self.assertEqual(law.cdf(2.4999), 0.0)

    def test_independent_world_is_marginal(self):
        law = counterfactual_posterior(BinaryTreatmentGaussianModel(rho=0.0, **self.base), 0, 3.0)
        self.assertEqual(law, GaussianLaw(1.0, 1.0))

    def test_rejection_sampler_agrees(self):
        """Rejection-sampled posterior cdf is within 0.01 of the closed form in sup-norm."""
        grid = [(rho, x) for rho in (-0.9, 0.0, 0.5, 0.9) for x in (0.0, 1.0, 2.0)]
        for i, (rho, x) in enumerate(grid):
            model = BinaryTreatmentGaussianModel(rho=rho, **self.base)
            law = counterfactual_posterior(model, 0, x)
            draws = monte_carlo_posterior(model, 0, x, n=10_000_000, seed=100 + i)
            self.assertGreater(draws.size, 40_000)
            self.assertLess(stats.kstest(draws, law.cdf).statistic, 0.01, msg=f"rho={rho} x={x}")

    def test_invalid_arm(self):
        with self.assertRaises(InputError):
            counterfactual_posterior(BinaryTreatmentGaussianModel(rho=0.0, **self.base), 2, 0.0)


class TestAdditiveErrorModel(unittest.TestCase):

    def test_potential_outcomes_share_the_error(self):
        world = AdditiveErrorModel(slope=2.0)
        draws = world.sample(1000, seed=3)
        np.testing.assert_allclose(draws["x"], 2.0 * draws["a"] + draws["eps"])
        shifted = world.cross_world(draws["a"] + 1.0, draws["eps"])
        np.testing.assert_allclose(shifted - draws["x"], 2.0)

    def test_binary_world(self):
        model = AdditiveErrorModel(slope=1.5, error_sd=2.0).binary_world(p1=0.4)
        self.assertEqual(model, BinaryTreatmentGaussianModel(0.0, 1.5, 2.0, 2.0, 1.0, 0.4))


class TestGpTreatmentModel(unittest.TestCase):

    def setUp(self):
        self.gp = GpTreatmentModel(variance=1.0, length_scale=1.0, treatment_grid=(0.0, 1.0, 2.0))

    def test_kernel_correlation(self):
        self.assertAlmostEqual(gp_cross_world_correlation(self.gp, 0.0, 1.0), math.exp(-0.5))
        self.assertAlmostEqual(self.gp.as_binary_model().rho, math.exp(-0.5))

    def test_invalid_grid(self):
        with self.assertRaises(ModelError):
            GpTreatmentModel(1.0, 1.0, (1.0, 0.0))
        with self.assertRaises(ModelError):
            GpTreatmentModel(1.0, 0.0, (0.0, 1.0))
        with self.assertRaises(ModelError):
            GpTreatmentModel(1.0, 1.0, ())

    def test_sample_errors(self):
        errors = self.gp.sample_errors(100_000, seed=5)
        self.assertEqual(errors.shape, (100_000, 3))
        self.assertAlmostEqual(np.corrcoef(errors[:, 0], errors[:, 1])[0, 1], math.exp(-0.5), delta=0.01)

    def test_observational_equivalence(self):
        """Shared and GP errors agree level by level while their cross-world correlations differ."""
        report = gp_observational_equivalence_check(
            GpTreatmentModel(1.0, 1.0, (0.0, 1.0)), n=100_000, seed=11
        )
        for level in report["levels"]:
            self.assertLess(level["ks_statistic"], 0.02)
        corr = report["cross_world_correlation"]
        self.assertEqual(corr["one_dimensional"][0][1], 1.0)
        self.assertAlmostEqual(corr["gaussian_process"][0][1], math.exp(-0.5))
        self.assertAlmostEqual(corr["gaussian_process_sample"][0][1], math.exp(-0.5), delta=0.01)


class TestSalaryModel(unittest.TestCase):

    def test_potential_outcomes_coincide(self):
        """Y_0 equals Y_1 exactly on every draw, with Y the potential outcome of the observed arm."""
        draws = SalaryModel().sample(100_000, seed=2)
        np.testing.assert_array_equal(draws["y0"].to_numpy(), draws["y1"].to_numpy())
        expected = np.where(draws["a"] == 1, draws["y1"], draws["y0"])
        np.testing.assert_array_equal(draws["y"].to_numpy(), expected)

    def test_fair_score_recovers_error(self):
        draws = SalaryModel(ux_dist=stats.laplace(), uy_dist=stats.t(df=3)).sample(100_000, seed=4)
        score = salary_fair_score(draws["a"], draws["x"])
        np.testing.assert_allclose(score, draws["u_x"], atol=1e-9)
        np.testing.assert_allclose(score, draws["a"] + draws["x"], atol=1e-9)

    def test_fair_score_is_the_same_in_both_worlds(self):
        draws = SalaryModel().sample(10_000, seed=6)
        flipped = 1 - draws["a"]
        x_flipped = -flipped + draws["u_x"]
        np.testing.assert_allclose(
            salary_fair_score(flipped, x_flipped), salary_fair_score(draws["a"], draws["x"]), atol=1e-9
        )

    def test_scalar_unit(self):
        y0, y1, x, y = salary_cross_world(1, 0.3, -0.2)
        self.assertEqual(y0, y1)
        self.assertAlmostEqual(x, -0.7)
        self.assertAlmostEqual(y, 0.1)


if __name__ == "__main__":
    unittest.main()
