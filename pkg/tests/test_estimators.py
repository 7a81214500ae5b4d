"""
Unit tests for Hajek estimates, direct regression oracles and influence
"""

import unittest
from pathlib import Path
import sys

import numpy as np
from scipy import linalg

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from core.dataset import CovariateProfile, Dataset, profile
from core.errors import DataValidationError, DegenerateLeverageError, MissingOutcomeError, SingularityError
from core.estimators import (
    dr_estimate_direct,
    hajek_estimate,
    least_squares_fit,
    leave_one_out_sic,
    mri_estimate_direct,
    multivalued_estimate_direct,
    qr_fit,
    sample_influence,
    scaled_influence,
    uri_estimate_direct,
    wmri_estimate_direct,
    wuri_estimate_direct,
)
from core.linalg import dependent_column, equilibrated_reciprocal_condition
from core.weights import (
    Estimand,
    Method,
    dr_weights,
    mri_weights,
    multivalued_weights,
    normalize_within_groups,
    uri_weights,
    wmri_weights,
    wuri_weights,
)


def random_dataset(rng, n, k, base=False):
    """Gaussian covariates, heterogeneous effects and a random split"""
    x = rng.normal(size=(n, k))
    n_t = int(rng.integers(k + 3, n - k - 2))
    z = rng.permutation(np.r_[np.ones(n_t, dtype=int), np.zeros(n - n_t, dtype=int)])
    y = 1.0 + x @ rng.normal(size=k) + z * (1.0 + x[:, 0]) + rng.normal(size=n)
    weights = rng.uniform(0.5, 2.0, size=n) if base else None
    return Dataset.from_arrays(x, z, outcome=y, base_weights=weights)


def earnings_dataset(rng, n_treated=185, n_control=2490):
    """Lalonde-sized sample with dollar-scale earnings next to indicators"""
    n = n_treated + n_control
    re74 = rng.gamma(2.0, 6000.0, size=n)
    x = np.column_stack(
        [
            rng.normal(33.0, 10.0, size=n),
            rng.normal(11.0, 3.0, size=n),
            rng.binomial(1, 0.5, size=n),
            rng.binomial(1, 0.3, size=n),
            rng.binomial(1, 0.5, size=n),
            rng.binomial(1, 0.4, size=n),
            re74,
            0.8 * re74 + rng.gamma(2.0, 2000.0, size=n),
        ]
    )
    z = np.r_[np.ones(n_treated, dtype=int), np.zeros(n_control, dtype=int)]
    y = 1500.0 * z + 0.4 * x[:, 7] + 200.0 * x[:, 1] + rng.normal(0.0, 5000.0, size=n)
    names = ["age", "education", "black", "hispanic", "married", "nodegree", "re74", "re75"]
    return Dataset.from_arrays(x, z, outcome=y, column_names=names)


class TestWeightingEquivalence(unittest.TestCase):
    """
    Test cases for the weighting / regression equivalence
    """

    def setUp(self):
        """Set up test fixtures"""
        self.rng = np.random.default_rng(101)

    def assertClose(self, weighted, direct):
        self.assertLessEqual(abs(weighted - direct), 1e-9 * (1.0 + abs(direct)))

    def test_uri_matches_pooled_fit(self):
        """Test that the URI Hajek estimate is the pooled Z coefficient"""
        for _ in range(200):
            d = random_dataset(self.rng, int(self.rng.integers(20, 401)), int(self.rng.integers(1, 9)))
            self.assertClose(hajek_estimate(d, uri_weights(d)).value, uri_estimate_direct(d).value)

    def test_mri_matches_imputation(self):
        """Test MRI ATE, ATT, ATC and CATE against imputation refits"""
        for _ in range(200):
            d = random_dataset(self.rng, int(self.rng.integers(20, 401)), int(self.rng.integers(1, 9)))
            for kind, estimand in (
                ("full_mean", Estimand.ATE),
                ("treated_mean", Estimand.ATT),
                ("control_mean", Estimand.ATC),
            ):
                w = mri_weights(d, profile(d, kind))
                self.assertIs(w.estimand, estimand)
                self.assertClose(hajek_estimate(d, w).value, mri_estimate_direct(d, estimand).value)
            x = CovariateProfile(self.rng.normal(size=d.k), "custom")
            self.assertClose(
                hajek_estimate(d, mri_weights(d, x)).value, mri_estimate_direct(d, Estimand.CATE, x).value
            )

    def test_base_weighted_refits(self):
        """Test WURI, WMRI and DR against their weighted refits"""
        for _ in range(30):
            d = random_dataset(self.rng, int(self.rng.integers(30, 300)), int(self.rng.integers(1, 6)), base=True)
            self.assertClose(hajek_estimate(d, wuri_weights(d)).value, wuri_estimate_direct(d).value)
            self.assertClose(hajek_estimate(d, wmri_weights(d)).value, wmri_estimate_direct(d).value)
            normalized = normalize_within_groups(d, d.base_weights)
            self.assertClose(hajek_estimate(d, dr_weights(d, normalized)).value, dr_estimate_direct(d).value)

    def test_multivalued_refits(self):
        """Test multi-valued URI and MRI against direct fits"""
        for _ in range(10):
            n, k = 120, 2
            x = self.rng.normal(size=(n, k))
            z = self.rng.permutation(np.tile([1, 2, 3], n // 3))
            y = x.sum(axis=1) + z * (1.0 + x[:, 0]) + self.rng.normal(size=n)
            d = Dataset.from_arrays(x, z, outcome=y, multivalued=True)
            for v in (2, 3):
                for method in (Method.MULTI_URI, Method.MULTI_MRI):
                    weighted = hajek_estimate(d, multivalued_weights(d, v, method)).value
                    self.assertClose(weighted, multivalued_estimate_direct(d, v, method).value)

    def test_sample_bounded_flag(self):
        """Test that nonnegative MRI weights give sample-bounded group means"""
        d = Dataset.from_arrays([1, 2, 1, 2], [1, 1, 0, 0], outcome=[1.0, 3.0, 0.0, 2.0])
        result = hajek_estimate(d, mri_weights(d, profile(d, "full_mean")))
        self.assertAlmostEqual(result.value, 1.0, delta=1e-12)
        self.assertTrue(all(result.sample_bounded.values()))

    def test_missing_outcome(self):
        """Test that estimation without outcomes fails clearly"""
        d = Dataset.from_arrays([1, 2, 1, 2], [1, 1, 0, 0])
        with self.assertRaises(MissingOutcomeError):
            hajek_estimate(d, uri_weights(d))


class TestLeastSquares(unittest.TestCase):
    """
    Test cases for the QR least-squares helper
    """

    def test_exact_fit(self):
        """Test that a noiseless response is recovered exactly"""
        design = np.column_stack([np.ones(5), np.arange(5.0)])
        fit = qr_fit(design, 2.0 + 3.0 * np.arange(5.0))
        np.testing.assert_allclose(fit.coefficients, [2.0, 3.0], atol=1e-12)
        np.testing.assert_allclose(fit.residuals, np.zeros(5), atol=1e-12)
        self.assertAlmostEqual(float(fit.leverages.sum()), 2.0, delta=1e-12)

    def test_weighted_fit(self):
        """Test that case weights match the normal equations"""
        rng = np.random.default_rng(2)
        design = np.column_stack([np.ones(30), rng.normal(size=30)])
        y = rng.normal(size=30)
        weights = rng.uniform(0.5, 2.0, size=30)
        expected = np.linalg.solve(design.T @ (design * weights[:, None]), design.T @ (weights * y))
        np.testing.assert_allclose(least_squares_fit(design, y, weights), expected, atol=1e-10)

    def test_rank_deficient_design_names_column(self):
        """Test that a collinear column is named"""
        x = np.arange(6.0)
        design = np.column_stack([np.ones(6), x, 2 * x])
        with self.assertRaises(SingularityError) as ctx:
            qr_fit(design, x, column_names=("intercept", "age", "age2"))
        self.assertEqual(ctx.exception.column, "age2")

    def test_dollar_scale_design_is_full_rank(self):
        """Test that earnings in dollars next to indicators pass the rank check"""
        d = earnings_dataset(np.random.default_rng(74))
        direct = uri_estimate_direct(d).value
        weighted = hajek_estimate(d, uri_weights(d)).value
        self.assertLessEqual(abs(weighted - direct), 1e-9 * (1.0 + abs(direct)))
        ate = profile(d, "full_mean")
        self.assertLessEqual(
            abs(hajek_estimate(d, mri_weights(d, ate)).value - mri_estimate_direct(d).value), 1e-9 * (1.0 + abs(direct))
        )

    def test_rank_check_ignores_column_scale(self):
        """Test that rescaling a column leaves the equilibrated condition unchanged"""
        rng = np.random.default_rng(8)
        design = np.column_stack([np.ones(50), rng.normal(size=50), rng.normal(size=50)])
        rescaled = design * np.array([1.0, 1e6, 1e-4])
        base, _ = equilibrated_reciprocal_condition(design)
        scaled, _ = equilibrated_reciprocal_condition(rescaled)
        self.assertAlmostEqual(base, scaled, delta=1e-12)
        _, r = linalg.qr(rescaled, mode="economic")
        self.assertIsNone(dependent_column(r, np.linalg.norm(rescaled, axis=0)))


class TestInfluence(unittest.TestCase):
    """
    Test cases for sample influence curves
    """

    def setUp(self):
        """Set up test fixtures"""
        self.rng = np.random.default_rng(33)

    def test_closed_form_matches_leave_one_out(self):
        """Test that the closed-form SIC equals the scaled leave-one-out change"""
        for _ in range(50):
            d = random_dataset(self.rng, int(self.rng.integers(20, 61)), int(self.rng.integers(1, 4)))
            for method in (Method.URI, Method.MRI):
                closed = sample_influence(d, method).sic
                brute = leave_one_out_sic(d, method)
                np.testing.assert_allclose(closed, brute, atol=1e-8)

    def test_dollar_scale_influence(self):
        """Test closed-form influence on earnings-scale covariates"""
        d = earnings_dataset(self.rng, n_treated=40, n_control=300)
        for method in (Method.URI, Method.MRI):
            closed = sample_influence(d, method).sic
            brute = leave_one_out_sic(d, method)
            np.testing.assert_allclose(closed, brute, rtol=1e-6, atol=1e-7 * float(np.abs(brute).max()))

    def test_scaled_influence(self):
        """Test scaling by the largest magnitude"""
        np.testing.assert_allclose(scaled_influence(np.array([1.0, -4.0, 2.0])), [0.25, 1.0, 0.5])
        np.testing.assert_array_equal(scaled_influence(np.zeros(3)), np.zeros(3))

    def test_degenerate_leverage(self):
        """Test that a unit with leverage one is named"""
        x = np.column_stack([self.rng.normal(size=20), np.zeros(20)])
        x[3, 1] = 1.0
        d = Dataset.from_arrays(x, np.repeat([1, 0], 10), outcome=self.rng.normal(size=20))
        with self.assertRaises(DegenerateLeverageError) as ctx:
            sample_influence(d, Method.URI)
        self.assertEqual(ctx.exception.unit, 3)

    def test_small_groups(self):
        """Test that MRI influence needs k+3 units per group"""
        d = Dataset.from_arrays([0, 1, 2, 0, 2, 4], [1, 1, 1, 0, 0, 0], outcome=[1, 2, 3, 0, 1, 0])
        with self.assertRaises(DataValidationError):
            sample_influence(d, Method.MRI)


if __name__ == '__main__':
    unittest.main()
