"""
Shared linear algebra helpers

Compensated moment accumulation, reciprocal condition numbers and
Cholesky solves against scatter matrices. Inverses are never formed.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .errors import SingularityError

logger = logging.getLogger(__name__)

# Smallest-to-largest singular value ratio below which a matrix is singular
SINGULARITY_THRESHOLD = 1e-10


def compensated_sum(values: np.ndarray) -> float:
    """Exactly rounded sum, independent of summation order"""
    return math.fsum(np.asarray(values, dtype=float).tolist())


def compensated_mean(rows: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Column means of a row matrix with compensated summation

    Args:
        rows: m x k matrix
        weights: optional length-m weights; the mean is normalized by their sum

    Returns:
        Length-k vector of (weighted) column means
    """
    rows = np.asarray(rows, dtype=float)
    if weights is None:
        total = float(rows.shape[0])
        return np.array([compensated_sum(rows[:, j]) / total for j in range(rows.shape[1])])
    weights = np.asarray(weights, dtype=float)
    total = compensated_sum(weights)
    weighted = rows * weights[:, None]
    return np.array([compensated_sum(weighted[:, j]) / total for j in range(rows.shape[1])])


def compensated_scatter(
    rows: np.ndarray,
    center: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Sum of (weighted) outer products of centered rows

    The upper triangle is accumulated with compensated sums and mirrored,
    so the result is exactly symmetric.
    """
    centered = np.asarray(rows, dtype=float) - np.asarray(center, dtype=float)
    if weights is not None:
        scaled = centered * np.asarray(weights, dtype=float)[:, None]
    else:
        scaled = centered
    k = centered.shape[1]
    scatter = np.empty((k, k))
    for a in range(k):
        for b in range(a, k):
            value = compensated_sum(scaled[:, a] * centered[:, b])
            scatter[a, b] = value
            scatter[b, a] = value
    return scatter


def compensated_cross(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Sum over rows of left_i right_i^T for already centered rows"""
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    cross = np.empty((left.shape[1], right.shape[1]))
    for a in range(left.shape[1]):
        for b in range(right.shape[1]):
            cross[a, b] = compensated_sum(left[:, a] * right[:, b])
    return cross


def reciprocal_condition(matrix: np.ndarray) -> float:
    """Ratio of smallest to largest singular value (0 for a zero matrix)"""
    singular_values = linalg.svdvals(np.atleast_2d(matrix))
    largest = float(singular_values.max()) if singular_values.size else 0.0
    if largest == 0.0 or not np.isfinite(largest):
        return 0.0
    return float(singular_values.min()) / largest


def symmetric_residual(matrix: np.ndarray) -> float:
    """Max-abs entry of M - M^T relative to max-abs entry of M"""
    scale = float(np.max(np.abs(matrix))) if matrix.size else 0.0
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(matrix - matrix.T))) / scale


def offending_column(
    matrix: np.ndarray,
    column_names: Optional[Sequence[str]],
    threshold: float = SINGULARITY_THRESHOLD,
) -> Optional[str]:
    """Name of the first column whose diagonal entry is negligible, if any"""
    diagonal = np.abs(np.diag(matrix))
    scale = float(diagonal.max()) if diagonal.size else 0.0
    for j, value in enumerate(diagonal):
        if value <= threshold * scale or scale == 0.0:
            if column_names is not None and j < len(column_names):
                return str(column_names[j])
            return f"column {j}"
    return None


def check_conditioning(
    matrix: np.ndarray,
    what: str,
    threshold: float = SINGULARITY_THRESHOLD,
    group: Optional[object] = None,
    column_names: Optional[Sequence[str]] = None,
) -> float:
    """
    Raise SingularityError when the reciprocal condition is below threshold

    Returns:
        The reciprocal condition number
    """
    rcond = reciprocal_condition(matrix)
    logger.debug(f"{what}: reciprocal condition {rcond:.3e}")
    if rcond < threshold:
        column = offending_column(matrix, column_names, threshold)
        where = f" in group {group}" if group is not None else ""
        detail = f"constant column '{column}'" if column else "near-collinear covariates"
        raise SingularityError(
            f"{what}{where} is singular (reciprocal condition {rcond:.3e} < {threshold:.1e}): {detail}",
            group=group,
            column=column,
            reciprocal_condition=rcond,
        )
    return rcond


def factor_scatter(
    matrix: np.ndarray,
    what: str,
    threshold: float = SINGULARITY_THRESHOLD,
    group: Optional[object] = None,
    column_names: Optional[Sequence[str]] = None,
) -> Tuple[np.ndarray, bool]:
    """Check conditioning and return a Cholesky factorization of a scatter"""
    check_conditioning(matrix, what, threshold, group, column_names)
    try:
        return linalg.cho_factor(matrix)
    except linalg.LinAlgError as e:
        raise SingularityError(f"{what} is not positive definite: {e}", group=group) from e


def solve_scatter(
    matrix: np.ndarray,
    rhs: np.ndarray,
    what: str,
    threshold: float = SINGULARITY_THRESHOLD,
    group: Optional[object] = None,
    column_names: Optional[Sequence[str]] = None,
) -> np.ndarray:
    """Solve matrix @ x = rhs for a symmetric positive definite scatter"""
    factor = factor_scatter(matrix, what, threshold, group, column_names)
    return linalg.cho_solve(factor, np.asarray(rhs, dtype=float))


def equilibrated_reciprocal_condition(design: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Gram reciprocal condition of a design after scaling its columns to unit norm

    Returns:
        The reciprocal condition and the column norms (a zero norm gives 0.0)
    """
    design = np.atleast_2d(np.asarray(design, dtype=float))
    norms = np.linalg.norm(design, axis=0)
    if norms.size == 0 or np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        return 0.0, norms
    return reciprocal_condition(design / norms) ** 2, norms


def dependent_column(r: np.ndarray, norms: np.ndarray, threshold: float = SINGULARITY_THRESHOLD) -> Optional[int]:
    """
    First column whose distance to the span of earlier columns is negligible

    |R_jj| / ||d_j|| is the sine of the angle between column j and the
    earlier columns; None when no column falls below sqrt(threshold).
    """
    diagonal = np.abs(np.diag(r))
    for j, (value, norm) in enumerate(zip(diagonal, norms)):
        if norm == 0.0 or value <= math.sqrt(threshold) * norm:
            return j
    return None


def economic_qr(
    design: np.ndarray,
    what: str,
    threshold: float = SINGULARITY_THRESHOLD,
    column_names: Optional[Sequence[str]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Thin QR factorization of a full-column-rank design

    The threshold applies to the Gram matrix of the column-equilibrated
    design, so rescaling a covariate never changes the verdict.

    Raises:
        SingularityError: rank-deficient design, naming the first dependent column when one exists
    """
    design = np.asarray(design, dtype=float)
    n, p = design.shape
    if n < p:
        raise SingularityError(f"{what} has {n} rows for {p} columns")
    q, r = linalg.qr(design, mode="economic")
    rcond, norms = equilibrated_reciprocal_condition(design)
    logger.debug(f"{what}: equilibrated Gram reciprocal condition {rcond:.3e}")
    if rcond < threshold:
        dependent = dependent_column(r, norms, threshold)
        column = None
        if dependent is not None and column_names is not None and dependent < len(column_names):
            column = str(column_names[dependent])
        elif dependent is not None:
            column = f"column {dependent}"
        detail = f": column '{column}' is collinear with earlier columns" if column else ": near-collinear columns"
        raise SingularityError(
            f"{what} is rank deficient (reciprocal condition {rcond:.3e} < {threshold:.1e}){detail}",
            column=column,
            reciprocal_condition=rcond,
        )
    return q, r


def linear_functional(q: np.ndarray, r: np.ndarray, contrast: np.ndarray) -> np.ndarray:
    """
    Unit coefficients a with a^T y = contrast^T beta_hat for every response y

    With D = QR, a = Q R^{-T} contrast.
    """
    u = linalg.solve_triangular(r, np.asarray(contrast, dtype=float), trans="T")
    return q @ u
