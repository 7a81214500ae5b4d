"""
Hajek estimation and direct regression oracles

Features:
- Weighted-contrast estimates from any WeightSet
- QR least squares with leverages and a normal-equation self-check
- Direct URI, MRI, WURI, WMRI, DR, multi-valued and pair-difference fits
- Closed-form sample influence curves and their leave-one-out oracle
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy import linalg

from .dataset import (
    CONTROL,
    TREATED,
    CovariateProfile,
    Dataset,
    MatchedPairs,
    full_mean,
    profile,
)
from .errors import (
    ConfigError,
    DataValidationError,
    DegenerateLeverageError,
    MissingOutcomeError,
    NumericalError,
)
from .linalg import SINGULARITY_THRESHOLD, compensated_mean, compensated_sum, economic_qr
from .weights import (
    Estimand,
    Method,
    PairWeightSet,
    WeightSet,
    estimand_for_profile,
    mri_weights,
    normalize_within_groups,
    uri_weights,
)

logger = logging.getLogger(__name__)

LSTSQ_RESIDUAL_TOLERANCE = 1e-10
LEVERAGE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class EstimateResult:
    """
    A point estimate and, for weighting estimates, its per-group weighted means
    """

    estimand: Estimand
    value: float
    method: str
    weighted_means: Dict[int, float] = field(default_factory=dict)
    sample_bounded: Dict[int, bool] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {
            "estimand": self.estimand.value,
            "method": self.method,
            "value": self.value,
            "weighted_means": {str(g): v for g, v in self.weighted_means.items()},
            "sample_bounded": {str(g): v for g, v in self.sample_bounded.items()},
        }


@dataclass(frozen=True, eq=False)
class InfluenceVector:
    """Scaled sample influence of every unit with the fit quantities behind it"""

    method: Method
    sic: np.ndarray
    residuals: np.ndarray
    leverages: np.ndarray


@dataclass(frozen=True, eq=False)
class LeastSquaresFit:
    coefficients: np.ndarray
    residuals: np.ndarray
    leverages: np.ndarray


def _require_outcome(d: Dataset) -> np.ndarray:
    if d.outcome is None:
        raise MissingOutcomeError("This operation needs an outcome column")
    return d.outcome


def qr_fit(
    design: np.ndarray,
    response: np.ndarray,
    case_weights: Optional[np.ndarray] = None,
    threshold: float = SINGULARITY_THRESHOLD,
    column_names: Optional[Sequence[str]] = None,
    tolerance: float = LSTSQ_RESIDUAL_TOLERANCE,
) -> LeastSquaresFit:
    """
    Weighted least squares through one thin QR factorization

    Args:
        design: n x p design matrix
        response: length-n response
        case_weights: optional positive case weights
        threshold: reciprocal-condition threshold on the Gram matrix
        column_names: names used in rank-deficiency messages
        tolerance: relative bound on the normal-equation residual

    Returns:
        Coefficients, unweighted residuals and (weighted) hat-matrix diagonal
    """
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    if case_weights is None:
        root = np.ones(design.shape[0])
    else:
        case_weights = np.asarray(case_weights, dtype=float)
        if np.any(~np.isfinite(case_weights) | (case_weights <= 0)):
            raise DataValidationError("Case weights must be positive and finite")
        root = np.sqrt(case_weights)
    scaled_design = design * root[:, None]
    scaled_response = response * root

    q, r = economic_qr(scaled_design, "Regression design", threshold, column_names)
    coefficients = linalg.solve_triangular(r, q.T @ scaled_response)

    scaled_residuals = scaled_response - scaled_design @ coefficients
    normal = np.max(np.abs(scaled_design.T @ scaled_residuals))
    bound = tolerance * np.linalg.norm(scaled_design) * np.linalg.norm(scaled_response)
    logger.debug(f"Normal-equation residual {normal:.3e} (bound {bound:.3e})")
    if normal > bound:
        raise NumericalError(f"Least-squares self-check failed: normal-equation residual {normal:.3e} > {bound:.3e}")

    leverages = np.einsum("ij,ij->i", q, q)
    return LeastSquaresFit(coefficients, response - design @ coefficients, leverages)


def least_squares_fit(
    design: np.ndarray,
    response: np.ndarray,
    case_weights: Optional[np.ndarray] = None,
    threshold: float = SINGULARITY_THRESHOLD,
) -> np.ndarray:
    """Coefficients minimizing the (weighted) residual sum of squares"""
    return qr_fit(design, response, case_weights, threshold).coefficients


def _with_intercept(rows: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(rows.shape[0]), rows])


def _bounded(value: float, outcomes: np.ndarray) -> bool:
    slack = 1e-12 * max(1.0, float(np.max(np.abs(outcomes))))
    return bool(outcomes.min() - slack <= value <= outcomes.max() + slack)


def hajek_estimate(d: Dataset, w: WeightSet) -> EstimateResult:
    """
    Weighted treated-minus-control outcome contrast

    For MRI-ATT the treated mean is the plain outcome mean; for multi-valued
    weights the active group is contrasted with all other groups.
    """
    y = _require_outcome(d)
    w.check_aligned(d)
    if w.estimand in (Estimand.ATT, Estimand.ATC) and w.method not in (Method.MRI, Method.WMRI):
        raise ConfigError(f"{w.estimand.value} is defined for MRI-type weights, not {w.method.value}")

    means: Dict[int, float] = {}
    for group in d.levels:
        mask = d.mask(group)
        means[group] = compensated_sum(w.weights[mask] * y[mask])
    if w.method is Method.MRI and w.estimand is Estimand.ATT:
        means[TREATED] = float(compensated_mean(y[d.mask(TREATED)].reshape(-1, 1))[0])
    if w.method is Method.MRI and w.estimand is Estimand.ATC:
        means[CONTROL] = float(compensated_mean(y[d.mask(CONTROL)].reshape(-1, 1))[0])

    active = w.active_label
    others = [means[g] for g in d.levels if g != active]
    value = means[active] - compensated_sum(np.array(others))
    bounded = {g: _bounded(means[g], y[d.mask(g)]) for g in w.normalized_groups()}
    return EstimateResult(w.estimand, value, w.method.value, means, bounded)


def _uri_design(d: Dataset) -> np.ndarray:
    return np.column_stack([np.ones(d.n), d.covariates, d.treatment.astype(float)])


def uri_estimate_direct(d: Dataset, base: Optional[np.ndarray] = None) -> EstimateResult:
    """Z-coefficient of the (weighted) pooled fit of Y on (1, X, Z)"""
    y = _require_outcome(d)
    fit = qr_fit(
        _uri_design(d), y, base, d.rcond_threshold, ("intercept",) + d.column_names + ("treatment",)
    )
    method = Method.URI if base is None else Method.WURI
    return EstimateResult(Estimand.ATE, float(fit.coefficients[-1]), method.value)


def wuri_estimate_direct(d: Dataset, base: Optional[Sequence[float]] = None) -> EstimateResult:
    """Z-coefficient of the weighted pooled fit with the base weights as case weights"""
    values = _base_or_dataset(d, base)
    return uri_estimate_direct(d, values)


def _base_or_dataset(d: Dataset, base: Optional[Sequence[float]]) -> np.ndarray:
    source = base if base is not None else d.base_weights
    if source is None:
        raise ConfigError("Base weights are required; supply them or a base-weight column")
    return np.asarray(source, dtype=float)


def _group_fit(d: Dataset, group: int, case_weights: Optional[np.ndarray] = None) -> LeastSquaresFit:
    y = _require_outcome(d)
    mask = d.mask(group)
    return qr_fit(
        _with_intercept(d.covariates[mask]),
        y[mask],
        case_weights,
        d.rcond_threshold,
        ("intercept",) + d.column_names,
    )


def _predict(coefficients: np.ndarray, rows: np.ndarray) -> np.ndarray:
    return _with_intercept(np.atleast_2d(rows)) @ coefficients


def _mean(values: np.ndarray) -> float:
    return compensated_sum(values) / values.shape[0]


def mri_estimate_direct(
    d: Dataset,
    estimand: Estimand = Estimand.ATE,
    x: Optional[CovariateProfile] = None,
) -> EstimateResult:
    """
    Imputation estimate from separate per-group fits

    ATE averages m1(X_i) - m0(X_i) over all units, ATT is mean Y_t minus the
    treated average of m0(X_i), ATC mirrors ATT, CATE evaluates both fits at x.
    """
    y = _require_outcome(d)
    beta_t = _group_fit(d, TREATED).coefficients
    beta_c = _group_fit(d, CONTROL).coefficients
    if estimand is Estimand.ATE:
        value = _mean(_predict(beta_t, d.covariates) - _predict(beta_c, d.covariates))
    elif estimand is Estimand.ATT:
        treated = d.mask(TREATED)
        value = _mean(y[treated]) - _mean(_predict(beta_c, d.covariates[treated]))
    elif estimand is Estimand.ATC:
        control = d.mask(CONTROL)
        value = _mean(_predict(beta_t, d.covariates[control])) - _mean(y[control])
    elif estimand is Estimand.CATE:
        if x is None:
            raise ConfigError("CATE needs a target profile")
        value = float(_predict(beta_t, x.values)[0] - _predict(beta_c, x.values)[0])
    else:
        raise ConfigError(f"MRI does not estimate {estimand.value} on binary data")
    return EstimateResult(estimand, float(value), Method.MRI.value)


def wmri_estimate_direct(
    d: Dataset,
    base: Optional[Sequence[float]] = None,
    x: Optional[CovariateProfile] = None,
) -> EstimateResult:
    """Difference of per-group weighted fits evaluated at profile x"""
    _require_outcome(d)
    values = _base_or_dataset(d, base)
    x = x if x is not None else profile(d, "full_mean")
    predictions = {}
    for group in (TREATED, CONTROL):
        beta = _group_fit(d, group, values[d.mask(group)]).coefficients
        predictions[group] = float(_predict(beta, x.values)[0])
    estimand = estimand_for_profile(d, x)
    return EstimateResult(estimand, predictions[TREATED] - predictions[CONTROL], Method.WMRI.value)


def dr_estimate_direct(d: Dataset, base: Optional[Sequence[float]] = None) -> EstimateResult:
    """
    Bias-corrected doubly robust estimate computed from its definition

    Per arm: the full-sample mean of the arm's OLS predictions plus the
    base-weighted mean of the arm's residuals.
    """
    y = _require_outcome(d)
    values = _base_or_dataset(d, base)
    normalized = normalize_within_groups(d, values)
    arms = {}
    for group in (TREATED, CONTROL):
        mask = d.mask(group)
        beta = _group_fit(d, group).coefficients
        residuals = y[mask] - _predict(beta, d.covariates[mask])
        arms[group] = _mean(_predict(beta, d.covariates)) + compensated_sum(normalized[mask] * residuals)
    return EstimateResult(Estimand.ATE, arms[TREATED] - arms[CONTROL], Method.DR.value, arms)


def multivalued_estimate_direct(d: Dataset, v: int, method: Method) -> EstimateResult:
    """
    Effect of level v against level 1 by direct fits

    URI reads the level-v indicator coefficient of the pooled fit; MRI
    differences the level-v and level-1 fits at the full-sample mean.
    """
    y = _require_outcome(d)
    if not d.multivalued or v not in d.levels or v == 1:
        raise ConfigError(f"Level {v} is not an active level of a multi-valued dataset")
    if method in (Method.URI, Method.MULTI_URI):
        design = np.column_stack(
            [np.ones(d.n), d.covariates] + [(d.treatment == r).astype(float) for r in d.levels[1:]]
        )
        fit = qr_fit(design, y, None, d.rcond_threshold)
        return EstimateResult(Estimand.ATE_V1, float(fit.coefficients[1 + d.k + (v - 2)]), Method.MULTI_URI.value)
    if method in (Method.MRI, Method.MULTI_MRI):
        xbar = full_mean(d)
        values = {g: float(_predict(_group_fit(d, g).coefficients, xbar)[0]) for g in (v, 1)}
        return EstimateResult(Estimand.ATE_V1, values[v] - values[1], Method.MULTI_MRI.value)
    raise ConfigError(f"Multi-valued estimates support URI and MRI, not {method.value}")


def pair_difference_estimate(pairs: MatchedPairs) -> EstimateResult:
    """Intercept of the regression of pair outcome differences on (1, X_d)"""
    differences = pairs.outcome_differences
    if differences is None:
        raise MissingOutcomeError("Matched pairs carry no outcomes")
    fit = qr_fit(_with_intercept(pairs.differences), differences, None, pairs.rcond_threshold)
    return EstimateResult(Estimand.ATT, float(fit.coefficients[0]), "MATCHED")


def pair_weighted_estimate(pairs: MatchedPairs, w: PairWeightSet) -> EstimateResult:
    """Weighted mean of pair outcome differences"""
    differences = pairs.outcome_differences
    if differences is None:
        raise MissingOutcomeError("Matched pairs carry no outcomes")
    if w.pair_weights.shape[0] != pairs.size:
        raise DataValidationError(f"{w.pair_weights.shape[0]} pair weights for {pairs.size} pairs")
    treated = compensated_sum(w.pair_weights * pairs.treated_outcome)
    control = compensated_sum(w.pair_weights * pairs.control_outcome)
    return EstimateResult(Estimand.ATT, treated - control, "MATCHED", {TREATED: treated, CONTROL: control})


def _check_leverage(leverages: np.ndarray, units: np.ndarray) -> None:
    degenerate = np.flatnonzero(1.0 - leverages <= LEVERAGE_TOLERANCE)
    if degenerate.size:
        unit = int(units[degenerate[0]])
        raise DegenerateLeverageError(
            f"Unit {unit} has leverage {leverages[degenerate[0]]:.12g}; leaving it out is undefined", unit
        )


def sample_influence(d: Dataset, method: Method) -> InfluenceVector:
    """
    Closed-form sample influence curves

    URI: SIC_i = (n-1)(2Z_i-1) e_i w_i / (1-h_ii) with the pooled-design leverage.
    MRI: SIC_i = (n_g-1) e_i w_i / (1-h_ii,g) with the group-design leverage, for
    the group's imputed mean at the full-sample covariate mean.
    """
    y = _require_outcome(d)
    if not d.is_binary:
        raise ConfigError("Sample influence is defined for binary treatment")
    units = np.arange(d.n)
    residuals = np.empty(d.n)
    leverages = np.empty(d.n)

    if method is Method.URI:
        if d.n < d.k + 3:
            raise DataValidationError(f"URI influence needs n >= k+3={d.k + 3}, got {d.n}")
        fit = qr_fit(_uri_design(d), y, None, d.rcond_threshold)
        residuals[:] = fit.residuals
        leverages[:] = fit.leverages
        _check_leverage(leverages, units)
        weights = uri_weights(d).weights
        sign = 2.0 * d.treatment - 1.0
        sic = (d.n - 1) * sign * residuals * weights / (1.0 - leverages)
    elif method is Method.MRI:
        weights = mri_weights(d, profile(d, "full_mean")).weights
        scale = np.empty(d.n)
        for group in (TREATED, CONTROL):
            mask = d.mask(group)
            size = int(np.count_nonzero(mask))
            if size < d.k + 3:
                raise DataValidationError(f"MRI influence needs n_g >= k+3={d.k + 3}; group {group} has {size}")
            fit = _group_fit(d, group)
            residuals[mask] = fit.residuals
            leverages[mask] = fit.leverages
            scale[mask] = size - 1
        _check_leverage(leverages, units)
        sic = scale * residuals * weights / (1.0 - leverages)
    else:
        raise ConfigError(f"Sample influence supports URI and MRI, not {method.value}")
    return InfluenceVector(method, sic, residuals, leverages)


def leave_one_out_sic(d: Dataset, method: Method) -> np.ndarray:
    """
    Influence by brute-force refits: (m-1)(estimate - estimate without unit i)

    m is n for URI and the unit's group size for MRI; the MRI refit keeps
    the full-sample covariate mean as its evaluation point.
    """
    _require_outcome(d)
    sic = np.empty(d.n)
    if method is Method.URI:
        full = uri_estimate_direct(d).value
        for i in range(d.n):
            sic[i] = (d.n - 1) * (full - uri_estimate_direct(d.drop(i)).value)
        return sic
    if method is Method.MRI:
        xbar = full_mean(d)
        for group in (TREATED, CONTROL):
            mask = d.mask(group)
            rows, y = d.covariates[mask], d.outcome[mask]  # type: ignore[index]
            size = rows.shape[0]
            full = float(_predict(qr_fit(_with_intercept(rows), y, None, d.rcond_threshold).coefficients, xbar)[0])
            for position, unit in enumerate(np.flatnonzero(mask)):
                keep = np.arange(size) != position
                beta = qr_fit(_with_intercept(rows[keep]), y[keep], None, d.rcond_threshold).coefficients
                sic[unit] = (size - 1) * (full - float(_predict(beta, xbar)[0]))
        return sic
    raise ConfigError(f"Leave-one-out influence supports URI and MRI, not {method.value}")


def scaled_influence(sic: np.ndarray) -> np.ndarray:
    """|SIC| divided by its maximum; an all-zero vector stays zero"""
    magnitude = np.abs(np.asarray(sic, dtype=float))
    top = float(magnitude.max()) if magnitude.size else 0.0
    if top == 0.0:
        return magnitude
    return magnitude / top
