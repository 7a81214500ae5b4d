"""
Unit tests for the KKT certification oracle
"""

import unittest
from pathlib import Path
import sys

import numpy as np

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from core.dataset import CovariateProfile, Dataset, profile
from core.errors import CertificationError, ConfigError, DataValidationError, SingularKKTError, UnsupportedFeatureError
from core.qp_oracle import (
    BalanceQP,
    certify,
    feasible_perturbations,
    multiplier_gap,
    objective,
    solve_balance_qp,
)
from core.weights import (
    Method,
    WeightSet,
    dr_weights,
    mri_weights,
    multivalued_weights,
    normalize_within_groups,
    uri_weights,
    wmri_weights,
    wuri_weights,
)


def random_dataset(rng, n, k):
    x = rng.normal(size=(n, k))
    n_t = int(rng.integers(k + 3, n - k - 2))
    z = rng.permutation(np.r_[np.ones(n_t, dtype=int), np.zeros(n - n_t, dtype=int)])
    return Dataset.from_arrays(x, z, base_weights=rng.uniform(0.5, 2.0, size=n))


class TestBalanceQP(unittest.TestCase):
    """
    Test cases for single balancing problems
    """

    def setUp(self):
        """Set up test fixtures"""
        self.rng = np.random.default_rng(17)
        self.rows = self.rng.normal(size=(25, 2))
        self.base = np.full(25, 1 / 25)
        self.target = CovariateProfile([0.1, -0.2], "custom")

    def test_constraints_hold(self):
        """Test that the KKT solution is normalized and balanced"""
        problem = BalanceQP(self.rows, self.base, np.ones(25), self.target)
        solution = solve_balance_qp(problem)
        self.assertAlmostEqual(float(solution.weights.sum()), 1.0, delta=1e-10)
        np.testing.assert_allclose(solution.weights @ self.rows, self.target.values, atol=1e-10)
        self.assertLessEqual(solution.kkt_residual, 1e-8 * solution.problem_scale)
        self.assertLess(multiplier_gap(problem, solution), 1e-8)

    def test_feasible_perturbations_do_not_improve(self):
        """Test optimality along feasible directions"""
        problem = BalanceQP(self.rows, self.base, self.rng.uniform(0.5, 2.0, size=25), self.target)
        solution = solve_balance_qp(problem)
        best = solution.objective
        for direction in feasible_perturbations(problem, 20, self.rng):
            np.testing.assert_allclose(problem.constraint_matrix() @ direction, np.zeros(3), atol=1e-10)
            self.assertGreaterEqual(objective(problem, solution.weights + 1e-3 * direction), best)

    def test_approximate_balance_rejected(self):
        """Test that a positive tolerance is outside the supported problem"""
        with self.assertRaises(UnsupportedFeatureError):
            BalanceQP(self.rows, self.base, np.ones(25), self.target, delta=np.array([0.1, 0.1]))

    def test_unnormalized_base(self):
        """Test that base weights must sum to one"""
        with self.assertRaises(DataValidationError):
            BalanceQP(self.rows, np.ones(25), np.ones(25), self.target)

    def test_too_few_units(self):
        """Test that fewer units than constraints is a singular KKT system"""
        problem = BalanceQP(self.rows[:2], np.full(2, 0.5), np.ones(2), self.target)
        with self.assertRaises(SingularKKTError):
            solve_balance_qp(problem)

    def test_collinear_rows(self):
        """Test that collinear covariates make the KKT system singular"""
        rows = np.column_stack([self.rows[:, 0], 2 * self.rows[:, 0]])
        problem = BalanceQP(rows, self.base, np.ones(25), self.target)
        with self.assertRaises(SingularKKTError):
            solve_balance_qp(problem)


class TestCertification(unittest.TestCase):
    """
    Test cases for certifying closed-form weights
    """

    def setUp(self):
        """Set up test fixtures"""
        self.rng = np.random.default_rng(23)

    def test_closed_forms_pass(self):
        """Test WURI, WMRI and DR weights against the KKT solve on seeded instances"""
        for _ in range(100):
            d = random_dataset(self.rng, int(self.rng.integers(20, 120)), int(self.rng.integers(1, 5)))
            normalized = normalize_within_groups(d, d.base_weights)
            for w in (wuri_weights(d), wmri_weights(d), dr_weights(d, normalized)):
                report = certify(w, d)
                self.assertTrue(report.passed, report.to_dict())
                self.assertLessEqual(report.max_discrepancy, 1e-8)

    def test_uri_and_mri_pass(self):
        """Test the unweighted closed forms"""
        d = random_dataset(self.rng, 80, 3)
        for w in (uri_weights(d), mri_weights(d, profile(d, "treated_mean"))):
            report = certify(w, d)
            self.assertEqual(report.to_dict()["verdict"], "PASS")

    def test_tampered_weights_fail(self):
        """Test that perturbed weights fail and can raise"""
        d = random_dataset(self.rng, 60, 2)
        w = uri_weights(d)
        tampered = WeightSet(
            method=w.method,
            weights=w.weights + 1e-4 * self.rng.normal(size=d.n),
            target=w.target,
            group_sums=w.group_sums,
            estimand=w.estimand,
            treatment=w.treatment,
        )
        with self.assertLogs("core.qp_oracle", level="WARNING"):
            report = certify(tampered, d)
        self.assertFalse(report.passed)
        self.assertEqual(report.to_dict()["verdict"], "FAIL")
        with self.assertRaises(CertificationError):
            certify(tampered, d, raise_on_failure=True)

    def test_multivalued_not_certified(self):
        """Test that certification is limited to binary balancing methods"""
        x = self.rng.normal(size=(30, 1))
        d = Dataset.from_arrays(x, np.tile([1, 2, 3], 10), multivalued=True)
        with self.assertRaises(ConfigError):
            certify(multivalued_weights(d, 2, Method.MULTI_MRI), d)


if __name__ == '__main__':
    unittest.main()
