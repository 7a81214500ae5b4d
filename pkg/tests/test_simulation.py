"""
Unit tests for data-generating processes and simulation experiments
"""

import unittest
from pathlib import Path
import sys

import numpy as np

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from core.errors import ConfigError, DataValidationError, SimulationError
from core.simulation import (
    PROPENSITY_KINDS,
    TILTED_KINDS,
    DGPConfig,
    consistency_experiment,
    generate,
    linear_propensity_coefficients,
    overlap_weighted_effect,
    population_moments,
    scenario,
    scenario_names,
    true_ate,
    true_propensity,
    weight_convergence_experiment,
)


class TestPropensityAlgebra(unittest.TestCase):
    """
    Test cases for linear propensities implied by group moments
    """

    def test_unit_example(self):
        """Test the scalar example with equal unit variances"""
        a0, a1 = linear_propensity_coefficients(0.5, [1.0], [0.0], np.eye(1), np.eye(1))
        self.assertAlmostEqual(a0, 0.4, delta=1e-12)
        np.testing.assert_allclose(a1, [0.2], atol=1e-12)

    def test_equal_means(self):
        """Test that equal group means give a constant propensity"""
        a0, a1 = linear_propensity_coefficients(0.3, [1.0, 2.0], [1.0, 2.0], np.eye(2), 2 * np.eye(2))
        self.assertAlmostEqual(a0, 0.3, delta=1e-12)
        np.testing.assert_allclose(a1, [0.0, 0.0], atol=1e-12)

    def test_recovers_linear_propensity(self):
        """Test that population moments of a linear propensity recover its coefficients"""
        config = DGPConfig(propensity_kind="linear", p=0.3, propensity_strength=0.6)
        moments = population_moments(config)
        a0, a1 = linear_propensity_coefficients(
            moments.p, moments.mean_treated, moments.mean_control, moments.cov_treated, moments.cov_control
        )
        # e(x) = 0.3 + 0.18 (x - 1) on [0, 2]
        self.assertAlmostEqual(a0, 0.12, delta=1e-8)
        np.testing.assert_allclose(a1, [0.18], atol=1e-8)


class TestDataGeneratingProcess(unittest.TestCase):
    """
    Test cases for DGP configurations and sampling
    """

    def test_propensities_within_bounds(self):
        """Test that every propensity kind stays inside [e_min, e_max] on the box"""
        grid = np.linspace(0.0, 2.0, 201).reshape(-1, 1)
        for kind in PROPENSITY_KINDS:
            p = {"tilted": 0.47, "tilted_control": 0.53}.get(kind, 0.5)
            config = DGPConfig(propensity_kind=kind, p=p)
            e = true_propensity(config, grid)
            self.assertGreaterEqual(float(e.min()), config.e_min)
            self.assertLessEqual(float(e.max()), config.e_max)

    def test_treated_share_matches_p(self):
        """Test that the population treated share equals p"""
        for kind, p in (
            ("constant", 0.45),
            ("linear", 0.45),
            ("inverse_linear", 0.45),
            ("inverse_linear_control", 0.45),
            ("logistic", 0.5),
        ):
            moments = population_moments(DGPConfig(propensity_kind=kind, p=p))
            self.assertAlmostEqual(moments.p, p, delta=1e-9)

    def test_tilted_equal_scaled_covariances(self):
        """Test p^2 Sigma_t = (1-p)^2 Sigma_c for both tilted constructions"""
        for kind, p in (("tilted", 0.47), ("tilted_control", 0.53)):
            moments = population_moments(DGPConfig(propensity_kind=kind, p=p))
            np.testing.assert_allclose(p * p * moments.cov_treated, (1 - p) ** 2 * moments.cov_control, atol=1e-10)

    def test_true_ate(self):
        """Test analytic average treatment effects"""
        centred = DGPConfig(low=-1.0, high=1.0, outcome_kind="linear_heterogeneous", tau0=1.0, delta=1.0)
        self.assertAlmostEqual(true_ate(centred), 1.0, delta=1e-12)
        curved = DGPConfig(outcome_kind="nonlinear", nonlinear_arm="treated")
        self.assertAlmostEqual(true_ate(curved), 1.0 + 4.0 / 3.0, delta=1e-12)
        both = DGPConfig(outcome_kind="nonlinear", nonlinear_arm="both")
        self.assertAlmostEqual(true_ate(both), 1.0, delta=1e-12)

    def test_overlap_weighted_effect(self):
        """Test the overlap-weighted contrast against its closed form"""
        config = scenario("uri_overlap")
        self.assertAlmostEqual(true_ate(config), 3.0, delta=1e-12)
        self.assertAlmostEqual(overlap_weighted_effect(config), 3.0 + 0.048 / 0.1992, delta=1e-9)
        constant = DGPConfig(outcome_kind="linear_heterogeneous")
        self.assertAlmostEqual(overlap_weighted_effect(constant), true_ate(constant), delta=1e-9)

    def test_invalid_configs(self):
        """Test configuration errors"""
        with self.assertRaises(ConfigError):
            DGPConfig(propensity_kind="tilted", k=2, p=0.47)
        with self.assertRaises(ConfigError):
            DGPConfig(propensity_kind="tilted", p=0.4)
        with self.assertRaises(ConfigError):
            DGPConfig(propensity_kind="tilted_control", p=0.5)
        with self.assertRaises(ConfigError):
            DGPConfig(propensity_kind="logistic", logistic_slope=5.0)
        with self.assertRaises(ConfigError):
            DGPConfig(propensity_kind="probit")
        with self.assertRaises(ConfigError):
            DGPConfig(k=2, beta=(1.0,))
        with self.assertRaises(ConfigError):
            scenario("mri_ix")

    def test_generate_is_seeded(self):
        """Test that the configured seed fixes the sample"""
        config = DGPConfig(k=3, propensity_kind="logistic", outcome_kind="nonlinear", seed=5)
        first = generate(config, 300)
        second = generate(config, 300)
        np.testing.assert_array_equal(first.dataset.covariates, second.dataset.covariates)
        np.testing.assert_array_equal(first.dataset.outcome, second.dataset.outcome)
        self.assertEqual(first.dataset.column_names, ("x1", "x2", "x3"))
        self.assertEqual(first.propensity.shape, (300,))

    def test_tilted_sample_in_box(self):
        """Test that tilted draws stay inside the covariate box"""
        for name in ("uri_i", "uri_ii"):
            sample = generate(scenario(name), 2000)
            x = sample.dataset.covariates
            self.assertGreaterEqual(float(x.min()), 0.0)
            self.assertLessEqual(float(x.max()), 2.0)

    def test_sample_size_limits(self):
        """Test small-n rejection and the redraw bound"""
        with self.assertRaises(DataValidationError):
            generate(DGPConfig(k=2), 7)
        rare = DGPConfig(p=0.02, e_min=0.01)
        with self.assertRaises(SimulationError):
            generate(rare, 6, max_attempts=2)

    def test_registry(self):
        """Test registered scenario names and overrides"""
        self.assertEqual(len(scenario_names("mri_")), 5)
        self.assertEqual(len(scenario_names("uri_")), 7)
        self.assertEqual(scenario("mri_iv", seed=9, noise_sd=0.5).noise_sd, 0.5)
        for name in scenario_names():
            self.assertEqual(scenario(name).name, name)
        self.assertEqual(set(TILTED_KINDS), {"tilted", "tilted_control"})


class TestExperiments(unittest.TestCase):
    """
    Test cases for convergence and consistency experiments
    """

    def test_worker_count_does_not_change_results(self):
        """Test that replications are reproducible across thread counts"""
        serial = weight_convergence_experiment("convergence_logistic", n_grid=(200, 400), replications=4)
        threaded = weight_convergence_experiment(
            "convergence_logistic", n_grid=(200, 400), replications=4, workers=3
        )
        self.assertTrue(np.array_equal(serial.records["estimate"].to_numpy(), threaded.records["estimate"].to_numpy()))
        self.assertTrue(
            np.array_equal(serial.records["sup_weight_error"].to_numpy(), threaded.records["sup_weight_error"].to_numpy())
        )

    def test_weights_approach_inverse_propensity(self):
        """Test that MRI weight error shrinks as n grows"""
        report = weight_convergence_experiment("convergence_inverse_linear", n_grid=(250, 4000), replications=10)
        small = report.summary_row("convergence_inverse_linear", "MRI", 250)
        large = report.summary_row("convergence_inverse_linear", "MRI", 4000)
        self.assertLess(large["median_sup_weight_error"], 0.6 * small["median_sup_weight_error"])
        self.assertEqual(int(large["replications"]), 10)

    def test_convergence_arguments(self):
        """Test arm and method validation"""
        with self.assertRaises(ConfigError):
            weight_convergence_experiment("convergence_logistic", n_grid=(100,), replications=1, arm="both")
        with self.assertRaises(ConfigError):
            weight_convergence_experiment("convergence_logistic", n_grid=(100,), replications=1, methods=["DR"])
        with self.assertRaises(ConfigError):
            weight_convergence_experiment("convergence_logistic", n_grid=(100,), replications=0)

    def test_tilted_metadata(self):
        """Test that tilted experiments record their construction"""
        report = weight_convergence_experiment("convergence_uri_tilted", n_grid=(200,), replications=2)
        self.assertIn("tilted_construction", report.metadata)
        self.assertEqual(set(report.records["estimator"]), {"MRI", "URI"})

    def test_overlap_gap(self):
        """Test that URI converges to the overlap-weighted contrast and MRI to the ATE"""
        report = consistency_experiment(["uri_overlap"], n_grid=(4000,), replications=20)
        uri = report.summary_row("uri_overlap", "URI", 4000)
        mri = report.summary_row("uri_overlap", "MRI", 4000)
        self.assertLess(uri["abs_mean_gap_to_reference"], 0.05)
        self.assertGreater(uri["abs_mean_bias"], 0.15)
        self.assertLess(mri["abs_mean_bias"], 0.05)
        self.assertEqual(len(report.summary), 2)
        with self.assertRaises(ConfigError):
            report.summary_row("uri_overlap", "DR", 4000)

    def test_consistency_records(self):
        """Test the record layout of a consistency run"""
        report = consistency_experiment(["mri_iii", "mri_iv"], n_grid=(300, 600), replications=3, seed=11)
        self.assertEqual(len(report.records), 2 * 2 * 3 * 2)
        self.assertEqual(len(report.summary), 2 * 2 * 2)
        for column in ("bias", "gap_to_reference", "sup_weight_error"):
            self.assertIn(column, report.records.columns)
        self.assertEqual(report.to_dict()["n_grid"], [300, 600])
        with self.assertRaises(ConfigError):
            consistency_experiment([], n_grid=(300,), replications=1)


class TestFullScaleExperiments(unittest.TestCase):
    """
    Test cases for convergence and consistency at n up to 16000 over 50 replications
    """

    def test_inverse_linear_error_halves(self):
        """Test that the MRI weight error falls across the grid and halves from n=1000 to n=16000"""
        name = "convergence_inverse_linear"
        report = weight_convergence_experiment(name, n_grid=(1000, 4000, 16000), replications=50, workers=4)
        errors = [report.summary_row(name, "MRI", n)["median_sup_weight_error"] for n in (1000, 4000, 16000)]
        self.assertGreater(errors[0], errors[1])
        self.assertGreater(errors[1], errors[2])
        self.assertLess(errors[2], 0.5 * errors[0])

    def test_logistic_error_does_not_halve(self):
        """Test that a logistic propensity keeps the MRI weight error from halving"""
        name = "convergence_logistic"
        report = weight_convergence_experiment(name, n_grid=(1000, 16000), replications=50, workers=4)
        small = report.summary_row(name, "MRI", 1000)["median_sup_weight_error"]
        large = report.summary_row(name, "MRI", 16000)["median_sup_weight_error"]
        self.assertGreaterEqual(large, 0.5 * small)

    def test_mri_consistent_scenarios(self):
        """Test the MRI bias bound at n=16000 for linear outcome means"""
        names = ["mri_iii", "mri_iv"]
        report = consistency_experiment(names, n_grid=(16000,), replications=50, workers=4)
        for name in names:
            ate = true_ate(scenario(name))
            bias = report.summary_row(name, "MRI", 16000)["abs_mean_bias"]
            self.assertLessEqual(bias, 0.02 * abs(ate) + 0.02, name)

    def test_uri_tends_to_overlap_weighted_effect(self):
        """Test that URI lands within 0.02 of the overlap-weighted contrast and away from the ATE"""
        report = consistency_experiment(["uri_overlap"], n_grid=(16000,), replications=50, workers=4)
        uri = report.summary_row("uri_overlap", "URI", 16000)
        self.assertLess(uri["abs_mean_gap_to_reference"], 0.02)
        self.assertGreater(uri["abs_mean_bias"], 0.02)


if __name__ == '__main__':
    unittest.main()
