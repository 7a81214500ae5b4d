"""
Equality-constrained balancing quadratic programs

Solves

    minimize   sum_i (w_i - base_i)^2 / scale_i
    subject to sum_i w_i = 1,  sum_i w_i X_i = target

through its full KKT system with a dense LU factorization, independently of
the closed forms in core.weights, and certifies weight sets against it.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy import linalg

from .dataset import CovariateProfile, Dataset
from .errors import (
    CertificationError,
    ConfigError,
    DataValidationError,
    SingularKKTError,
    UnsupportedFeatureError,
)
from .linalg import compensated_mean, compensated_sum
from .weights import Method, WeightSet, normalize_within_groups

logger = logging.getLogger(__name__)

KKT_TOLERANCE = 1e-8
BASE_SUM_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class BalanceQP:
    """One group's balancing problem; delta must stay zero (exact balance)"""

    rows: np.ndarray
    base: np.ndarray
    scale: np.ndarray
    target: CovariateProfile
    delta: Optional[np.ndarray] = None
    group: Optional[int] = None

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim == 1:
            rows = rows.reshape(-1, 1)
        base = np.array(self.base, dtype=float).reshape(-1)
        scale = np.array(self.scale, dtype=float).reshape(-1)
        m, k = rows.shape
        if base.shape[0] != m or scale.shape[0] != m:
            raise DataValidationError(f"Balance problem has {m} rows, {base.shape[0]} base and {scale.shape[0]} scale weights")
        if self.target.values.shape[0] != k:
            raise DataValidationError(f"Target has length {self.target.values.shape[0]}, rows have k={k}")
        if abs(compensated_sum(base) - 1.0) > BASE_SUM_TOLERANCE:
            raise DataValidationError(f"Base weights sum to {compensated_sum(base)!r}, not 1")
        if np.any(~np.isfinite(scale) | (scale <= 0)):
            raise DataValidationError("Scale weights must be strictly positive")
        delta = np.zeros(k) if self.delta is None else np.array(self.delta, dtype=float).reshape(-1)
        if np.any(delta != 0):
            raise UnsupportedFeatureError("Approximate balance (delta > 0) is not supported; only exact balance is")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "delta", delta)

    @property
    def size(self) -> int:
        return int(self.rows.shape[0])

    @property
    def k(self) -> int:
        return int(self.rows.shape[1])

    def constraint_matrix(self) -> np.ndarray:
        """(k+1) x m matrix of the constraints [1^T; X^T]"""
        return np.vstack([np.ones(self.size), self.rows.T])


@dataclass(frozen=True, eq=False)
class QPSolution:
    weights: np.ndarray
    multipliers: np.ndarray
    kkt_residual: float
    problem_scale: float
    objective: float

    @property
    def normalization_multiplier(self) -> float:
        return float(self.multipliers[0])

    @property
    def balance_multipliers(self) -> np.ndarray:
        return self.multipliers[1:]


def objective(problem: BalanceQP, weights: np.ndarray) -> float:
    """Sum of (w - base)^2 / scale"""
    gap = np.asarray(weights, dtype=float) - problem.base
    return compensated_sum(gap * gap / problem.scale)


def solve_balance_qp(problem: BalanceQP) -> QPSolution:
    """
    Solve the KKT system of a balancing problem

    [ 2 diag(1/scale)  1  X ] [ w   ]   [ 2 base/scale ]
    [ 1^T              0  0 ] [ l_1 ] = [ 1            ]
    [ X^T              0  0 ] [ l_2 ]   [ target       ]

    Raises:
        SingularKKTError: the system cannot be factored (scale-weighted scatter singular)
    """
    m, k = problem.size, problem.k
    dim = m + k + 1
    kkt = np.zeros((dim, dim))
    kkt[np.arange(m), np.arange(m)] = 2.0 / problem.scale
    constraints = problem.constraint_matrix()
    kkt[:m, m:] = constraints.T
    kkt[m:, :m] = constraints
    rhs = np.concatenate([2.0 * problem.base / problem.scale, [1.0], problem.target.values])

    where = f" for group {problem.group}" if problem.group is not None else ""
    if m < k + 1:
        raise SingularKKTError(f"KKT system{where} is singular: {m} units for {k + 1} constraints")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            solution = linalg.solve(kkt, rhs)
    except (linalg.LinAlgError, linalg.LinAlgWarning) as e:
        raise SingularKKTError(f"KKT system{where} is singular: {e}") from e

    residual = float(np.max(np.abs(kkt @ solution - rhs)))
    scale = max(1.0, float(np.max(np.abs(kkt))) * float(np.max(np.abs(solution))), float(np.max(np.abs(rhs))))
    weights = solution[:m]
    logger.debug(f"KKT solve{where}: residual {residual:.3e}, scale {scale:.3e}")
    return QPSolution(
        weights=weights,
        multipliers=solution[m:],
        kkt_residual=residual,
        problem_scale=scale,
        objective=objective(problem, weights),
    )


def multiplier_gap(problem: BalanceQP, solution: QPSolution) -> float:
    """|l_1 + l_2^T mean_scale|, zero at an exact optimum"""
    scale_mean = compensated_mean(problem.rows, problem.scale)
    return abs(solution.normalization_multiplier + float(solution.balance_multipliers @ scale_mean))


def feasible_perturbations(problem: BalanceQP, count: int, rng: np.random.Generator) -> np.ndarray:
    """
    Random directions that keep both constraints satisfied

    Returns:
        count x m array whose rows lie in the null space of [1^T; X^T]
    """
    basis = linalg.null_space(problem.constraint_matrix())
    if basis.shape[1] == 0:
        return np.zeros((count, problem.size))
    return (basis @ rng.standard_normal((basis.shape[1], count))).T


@dataclass(frozen=True)
class GroupCertificate:
    group: int
    size: int
    max_discrepancy: float
    kkt_residual: float
    problem_scale: float
    multiplier_gap: float
    passed: bool

    def to_dict(self) -> Dict[str, object]:
        return {
            "group": self.group,
            "size": self.size,
            "max_discrepancy": self.max_discrepancy,
            "kkt_residual": self.kkt_residual,
            "problem_scale": self.problem_scale,
            "multiplier_gap": self.multiplier_gap,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class CertificationReport:
    method: Method
    tolerance: float
    groups: List[GroupCertificate] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.groups)

    @property
    def max_discrepancy(self) -> float:
        return max((g.max_discrepancy for g in self.groups), default=0.0)

    def to_dict(self) -> Dict[str, object]:
        return {
            "method": self.method.value,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "verdict": "PASS" if self.passed else "FAIL",
            "max_discrepancy": self.max_discrepancy,
            "groups": [g.to_dict() for g in self.groups],
        }


def balance_problems(w: WeightSet, d: Dataset) -> Dict[int, BalanceQP]:
    """
    Rebuild the per-group balancing problems a weight set should solve

    URI and MRI use uniform base and unit scale; WURI and WMRI use the
    within-group normalized base with the raw base as scale; DR uses the
    supplied normalized base with unit scale.
    """
    if w.method not in (Method.URI, Method.MRI, Method.WURI, Method.WMRI, Method.DR):
        raise ConfigError(f"Certification covers URI, MRI, WURI, WMRI and DR weights, not {w.method.value}")
    w.check_aligned(d)
    if w.method in (Method.WURI, Method.WMRI, Method.DR) and w.base is None:
        raise ConfigError(f"{w.method.value} weight set carries no base weights to certify against")

    normalized = normalize_within_groups(d, w.base) if w.method in (Method.WURI, Method.WMRI) else None
    problems = {}
    for group in d.levels:
        mask = d.mask(group)
        size = int(np.count_nonzero(mask))
        if w.method in (Method.URI, Method.MRI):
            base, scale = np.full(size, 1.0 / size), np.ones(size)
        elif w.method is Method.DR:
            base, scale = w.base[mask], np.ones(size)  # type: ignore[index]
        else:
            base, scale = normalized[mask], w.base[mask]  # type: ignore[index]
        problems[group] = BalanceQP(d.covariates[mask], base, scale, w.target, group=group)
    return problems


def certify(
    w: WeightSet,
    d: Dataset,
    tolerance: float = KKT_TOLERANCE,
    raise_on_failure: bool = False,
) -> CertificationReport:
    """
    Compare a weight set with the KKT optimum of each group's problem

    Args:
        w: URI, MRI, WURI, WMRI or DR weights
        d: dataset the weights were computed on
        tolerance: entrywise discrepancy bound and relative KKT residual bound
        raise_on_failure: raise CertificationError instead of returning a failed report
    """
    certificates = []
    for group, problem in balance_problems(w, d).items():
        solution = solve_balance_qp(problem)
        discrepancy = float(np.max(np.abs(solution.weights - w.weights[d.mask(group)])))
        gap = multiplier_gap(problem, solution)
        passed = discrepancy <= tolerance and solution.kkt_residual <= tolerance * solution.problem_scale
        certificates.append(
            GroupCertificate(
                group=group,
                size=problem.size,
                max_discrepancy=discrepancy,
                kkt_residual=solution.kkt_residual,
                problem_scale=solution.problem_scale,
                multiplier_gap=gap,
                passed=passed,
            )
        )
    report = CertificationReport(w.method, tolerance, certificates)
    if report.passed:
        logger.info(f"{w.method.value} weights certified: max discrepancy {report.max_discrepancy:.3e}")
    else:
        logger.warning(f"{w.method.value} weights failed certification: max discrepancy {report.max_discrepancy:.3e}")
        if raise_on_failure:
            raise CertificationError(
                f"{w.method.value} weights differ from the KKT optimum by {report.max_discrepancy:.3e} (tolerance {tolerance:.1e})"
            )
    return report
