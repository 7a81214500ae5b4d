"""
Implied weights of regression estimators

Features:
- URI (pooled regression) and MRI (per-group regression) closed forms
- Base-weighted variants WURI, WMRI and the doubly robust correction
- Multi-valued treatments through the pooled linear functional
- Matched-pair and no-intercept weights

Weights are design-stage objects: nothing in this module reads outcomes.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Sequence

import numpy as np

from .dataset import (
    CONTROL,
    TREATED,
    CovariateProfile,
    Dataset,
    MatchedPairs,
    full_mean,
    group_design_conditioning,
    check_group_designs,
    group_mean,
    group_moments,
    profile,
    weighted_moments,
)
from .errors import (
    AlignmentError,
    ConfigError,
    DataValidationError,
    NumericalError,
    UnsupportedEstimandError,
)
from .linalg import (
    compensated_cross,
    compensated_mean,
    compensated_scatter,
    compensated_sum,
    economic_qr,
    linear_functional,
    solve_scatter,
)

logger = logging.getLogger(__name__)

WEIGHT_SUM_TOLERANCE = 1e-8
BASE_NORMALIZATION_TOLERANCE = 1e-8


class Method(str, Enum):
    URI = "URI"
    MRI = "MRI"
    WURI = "WURI"
    WMRI = "WMRI"
    DR = "DR"
    MULTI_URI = "MULTI_URI"
    MULTI_MRI = "MULTI_MRI"
    NO_INTERCEPT_URI = "NO_INTERCEPT_URI"
    NO_INTERCEPT_MRI = "NO_INTERCEPT_MRI"

    @classmethod
    def parse(cls, text: str) -> "Method":
        key = text.strip().upper().replace("-", "_")
        try:
            return cls[key]
        except KeyError:
            raise ConfigError(f"Unknown method '{text}'") from None

    @property
    def is_multivalued(self) -> bool:
        return self in (Method.MULTI_URI, Method.MULTI_MRI)

    @property
    def is_no_intercept(self) -> bool:
        return self in (Method.NO_INTERCEPT_URI, Method.NO_INTERCEPT_MRI)

    @property
    def needs_base(self) -> bool:
        return self in (Method.WURI, Method.WMRI, Method.DR)


class Estimand(str, Enum):
    ATE = "ATE"
    ATT = "ATT"
    ATC = "ATC"
    CATE = "CATE"
    ATE_V1 = "ATE_v1"

    @classmethod
    def parse(cls, text: str) -> "Estimand":
        for member in cls:
            if member.value.lower() == text.strip().lower():
                return member
        raise ConfigError(f"Unknown estimand '{text}'")


ATC_NOTE = "ATC is the control-side mirror of the MRI ATT representation"


@dataclass(frozen=True, eq=False)
class WeightSet:
    """
    Per-unit implied weights aligned to dataset rows

    Attributes:
        method: weighting method
        weights: length-n weights (treated and control blocks in row positions)
        target: profile both weighted groups are balanced toward
        group_sums: per-group sums of the weights
        estimand: estimand the weights represent
        treatment: treatment labels the weights were computed for
        active_label: group whose weighted mean enters with a plus sign
        base: base weights used, if any
        metadata: convention notes carried into reports
    """

    method: Method
    weights: np.ndarray
    target: CovariateProfile
    group_sums: Dict[int, float]
    estimand: Estimand
    treatment: np.ndarray
    active_label: int = TREATED
    reference_label: int = CONTROL
    base: Optional[np.ndarray] = None
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        if not np.all(np.isfinite(weights)):
            raise NumericalError(f"{self.method.value} weights contain non-finite values")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return int(self.weights.shape[0])

    def group_weights(self, group: int) -> np.ndarray:
        return self.weights[self.treatment == group]

    def check_aligned(self, d: Dataset) -> None:
        """Raise AlignmentError unless the weights belong to the dataset rows"""
        if self.n != d.n:
            raise AlignmentError(f"{self.n} weights for a dataset with {d.n} rows")
        mismatch = np.flatnonzero(self.treatment != d.treatment)
        if mismatch.size:
            raise AlignmentError(f"Weight table group differs from dataset at row {mismatch[0]}")

    def check_normalization(self, tolerance: float = WEIGHT_SUM_TOLERANCE) -> None:
        """Raise NumericalError unless normalized groups sum to one"""
        for group in self.normalized_groups():
            total = self.group_sums[group]
            if abs(total - 1.0) > tolerance:
                raise NumericalError(
                    f"{self.method.value} weights in group {group} sum to {total!r}, not 1 (tolerance {tolerance:.1e})"
                )

    def normalized_groups(self) -> Sequence[int]:
        """Groups whose weights must sum to one"""
        if self.method is Method.NO_INTERCEPT_URI:
            return (self.active_label,)
        if self.method is Method.NO_INTERCEPT_MRI:
            return ()
        return (self.active_label, self.reference_label)


def weighted_sum(rows: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Compensated sum of w_i X_i over rows"""
    return np.array([compensated_sum(weights * rows[:, j]) for j in range(rows.shape[1])])


def _group_sums(weights: np.ndarray, treatment: np.ndarray, levels: Sequence[int]) -> Dict[int, float]:
    return {int(g): compensated_sum(weights[treatment == g]) for g in levels}


def _finish(
    d: Dataset,
    method: Method,
    weights: np.ndarray,
    target: CovariateProfile,
    estimand: Estimand,
    active: int = TREATED,
    reference: int = CONTROL,
    base: Optional[np.ndarray] = None,
    metadata: Optional[Dict[str, str]] = None,
) -> WeightSet:
    result = WeightSet(
        method=method,
        weights=weights,
        target=target,
        group_sums=_group_sums(weights, d.treatment, d.levels),
        estimand=estimand,
        treatment=d.treatment,
        active_label=active,
        reference_label=reference,
        base=base,
        metadata=dict(metadata or {}),
    )
    result.check_normalization()
    logger.info(f"Computed {method.value} weights ({estimand.value}): group sums {result.group_sums}")
    return result


def _require_binary(d: Dataset, what: str) -> None:
    if not d.is_binary:
        raise ConfigError(f"{what} needs binary 0/1 treatment; use the multi-valued methods")


def _pooled_scatter(d: Dataset):
    treated = group_moments(d, TREATED, require_invertible=False)
    control = group_moments(d, CONTROL, require_invertible=False)
    return treated, control, treated.scatter + control.scatter


def uri_implied_profile(d: Dataset) -> CovariateProfile:
    """x* = S_c (S_t+S_c)^{-1} mean_t + S_t (S_t+S_c)^{-1} mean_c"""
    _require_binary(d, "URI")
    treated, control, pooled = _pooled_scatter(d)
    what = "Pooled scatter S_t + S_c"
    pull_t = solve_scatter(pooled, treated.mean, what, d.rcond_threshold, column_names=d.column_names)
    pull_c = solve_scatter(pooled, control.mean, what, d.rcond_threshold, column_names=d.column_names)
    return CovariateProfile(control.scatter @ pull_t + treated.scatter @ pull_c, "uri_implied")


def uri_weights(d: Dataset) -> WeightSet:
    """
    Implied weights of the pooled regression of Y on (1, X, Z)

    Args:
        d: binary-treatment dataset

    Returns:
        WeightSet toward the URI implied profile, estimand ATE
    """
    _require_binary(d, "URI")
    treated, control, pooled = _pooled_scatter(d)
    what = "Pooled scatter S_t + S_c"
    xbar = full_mean(d)
    n, n_t, n_c = d.n, treated.size, control.size

    shift_t = solve_scatter(pooled, xbar - treated.mean, what, d.rcond_threshold, column_names=d.column_names)
    shift_c = solve_scatter(pooled, xbar - control.mean, what, d.rcond_threshold, column_names=d.column_names)

    weights = np.empty(n)
    mask_t = d.mask(TREATED)
    mask_c = ~mask_t
    weights[mask_t] = 1.0 / n_t + (n / n_c) * ((d.covariates[mask_t] - treated.mean) @ shift_t)
    weights[mask_c] = 1.0 / n_c + (n / n_t) * ((d.covariates[mask_c] - control.mean) @ shift_c)
    return _finish(d, Method.URI, weights, uri_implied_profile(d), Estimand.ATE)


_LABEL_ESTIMANDS = {"full_mean": Estimand.ATE, "treated_mean": Estimand.ATT, "control_mean": Estimand.ATC}


def estimand_for_profile(d: Dataset, x: CovariateProfile) -> Estimand:
    """Named profiles keep their estimand; unnamed ones are matched by value"""
    if x.label in _LABEL_ESTIMANDS:
        return _LABEL_ESTIMANDS[x.label]
    if np.array_equal(x.values, full_mean(d)):
        return Estimand.ATE
    if np.array_equal(x.values, group_mean(d, TREATED)):
        return Estimand.ATT
    if np.array_equal(x.values, group_mean(d, CONTROL)):
        return Estimand.ATC
    return Estimand.CATE


def _check_profile(d: Dataset, x: CovariateProfile) -> None:
    if x.values.shape[0] != d.k:
        raise ConfigError(f"Profile '{x.label}' has length {x.values.shape[0]}, dataset has k={d.k}")


def _mri_block(d: Dataset, group: int, x: np.ndarray) -> np.ndarray:
    moments = group_moments(d, group)
    direction = solve_scatter(
        moments.scatter, x - moments.mean, "Group scatter", d.rcond_threshold, group, d.column_names
    )
    return 1.0 / moments.size + (d.rows(group) - moments.mean) @ direction


def mri_weights(d: Dataset, x: CovariateProfile, estimand: Optional[Estimand] = None) -> WeightSet:
    """
    Implied weights of separate per-group regressions imputed at profile x

    Args:
        d: binary-treatment dataset
        x: target profile; the full mean gives ATE, the treated mean ATT,
            the control mean ATC, anything else CATE(x)
        estimand: explicit estimand tag, inferred from x when omitted
    """
    _require_binary(d, "MRI")
    _check_profile(d, x)
    weights = np.empty(d.n)
    for group in (TREATED, CONTROL):
        weights[d.mask(group)] = _mri_block(d, group, x.values)
    tag = estimand or estimand_for_profile(d, x)
    metadata = {"estimand_note": ATC_NOTE} if tag is Estimand.ATC else {}
    return _finish(d, Method.MRI, weights, x, tag, metadata=metadata)


def normalize_within_groups(d: Dataset, base: Sequence[float]) -> np.ndarray:
    """Rescale positive base weights to sum to one within each group"""
    values = _positive_base(d, base)
    normalized = np.empty(d.n)
    for group in d.levels:
        mask = d.mask(group)
        normalized[mask] = values[mask] / compensated_sum(values[mask])
    return normalized


def _positive_base(d: Dataset, base: Optional[Sequence[float]]) -> np.ndarray:
    if base is None:
        if d.base_weights is None:
            raise ConfigError("Base weights are required; supply them or a base-weight column")
        return np.asarray(d.base_weights, dtype=float)
    values = np.asarray(base, dtype=float).reshape(-1)
    if values.shape[0] != d.n:
        raise DataValidationError(f"{values.shape[0]} base weights for {d.n} rows")
    bad = np.flatnonzero(~(np.isfinite(values) & (values > 0)))
    if bad.size:
        raise DataValidationError(f"Non-positive base weight {values[bad[0]]} at row {bad[0]}")
    return values


def _balanced_block(
    d: Dataset,
    group: int,
    base: np.ndarray,
    scale: np.ndarray,
    target: np.ndarray,
) -> np.ndarray:
    """
    Minimizer of sum (w - base)^2 / scale subject to sum w = 1, sum w X = target

    Closed form: w = base + scale * (X - mean_scale)^T M^{-1} (target - mean_base),
    with M the scale-weighted scatter divided by n_g.
    """
    rows = d.rows(group)
    moments = weighted_moments(d, group, scale)
    base_mean = compensated_mean(rows, base)
    direction = solve_scatter(
        moments.scatter / rows.shape[0],
        target - base_mean,
        "Scale-weighted scatter",
        d.rcond_threshold,
        group,
        d.column_names,
    )
    return base + scale * ((rows - moments.mean) @ direction)


def wuri_implied_profile(d: Dataset, base: Optional[Sequence[float]] = None) -> CovariateProfile:
    """Base-weighted analog of the URI implied profile"""
    _require_binary(d, "WURI")
    values = _positive_base(d, base)
    means, mats = {}, {}
    for group in (TREATED, CONTROL):
        mask = d.mask(group)
        moments = weighted_moments(d, group, values[mask])
        means[group] = moments.mean
        mats[group] = moments.scatter / int(np.count_nonzero(mask))
    pooled = mats[TREATED] + mats[CONTROL]
    what = "Pooled base-weighted scatter"
    pull_t = solve_scatter(pooled, means[TREATED], what, d.rcond_threshold, column_names=d.column_names)
    pull_c = solve_scatter(pooled, means[CONTROL], what, d.rcond_threshold, column_names=d.column_names)
    return CovariateProfile(mats[CONTROL] @ pull_t + mats[TREATED] @ pull_c, "wuri_implied")


def wuri_weights(d: Dataset, base: Optional[Sequence[float]] = None) -> WeightSet:
    """
    Implied weights of the weighted pooled regression of Y on (1, X, Z)

    Args:
        d: binary-treatment dataset
        base: positive case weights; defaults to the dataset's base weights
    """
    _require_binary(d, "WURI")
    values = _positive_base(d, base)
    target = wuri_implied_profile(d, values)
    normalized = normalize_within_groups(d, values)
    weights = np.empty(d.n)
    for group in (TREATED, CONTROL):
        mask = d.mask(group)
        weights[mask] = _balanced_block(d, group, normalized[mask], values[mask], target.values)
    return _finish(d, Method.WURI, weights, target, Estimand.ATE, base=values)


def wmri_weights(
    d: Dataset,
    base: Optional[Sequence[float]] = None,
    x: Optional[CovariateProfile] = None,
    estimand: Optional[Estimand] = None,
) -> WeightSet:
    """Implied weights of per-group weighted regressions imputed at profile x"""
    _require_binary(d, "WMRI")
    values = _positive_base(d, base)
    x = x if x is not None else profile(d, "full_mean")
    _check_profile(d, x)
    normalized = normalize_within_groups(d, values)
    weights = np.empty(d.n)
    for group in (TREATED, CONTROL):
        mask = d.mask(group)
        weights[mask] = _balanced_block(d, group, normalized[mask], values[mask], x.values)
    tag = estimand or estimand_for_profile(d, x)
    return _finish(d, Method.WMRI, weights, x, tag, base=values)


def dr_weights(
    d: Dataset,
    base: Optional[Sequence[float]] = None,
    tolerance: float = BASE_NORMALIZATION_TOLERANCE,
) -> WeightSet:
    """
    Implied weights of the bias-corrected doubly robust estimator

    Args:
        d: binary-treatment dataset
        base: base weights already normalized within each group
        tolerance: allowed deviation of each group's base sum from one
    """
    _require_binary(d, "DR")
    values = _positive_base(d, base)
    for group in (TREATED, CONTROL):
        total = compensated_sum(values[d.mask(group)])
        if abs(total - 1.0) > tolerance:
            raise DataValidationError(
                f"DR base weights in group {group} sum to {total!r}; normalize them within each group first"
            )
    target = profile(d, "full_mean")
    weights = np.empty(d.n)
    for group in (TREATED, CONTROL):
        mask = d.mask(group)
        weights[mask] = _balanced_block(d, group, values[mask], np.ones(int(np.count_nonzero(mask))), target.values)
    return _finish(d, Method.DR, weights, target, Estimand.ATE, base=values)


def _check_active_level(d: Dataset, v: int) -> None:
    if not d.multivalued:
        raise ConfigError("Multi-valued weights need a dataset loaded with multi-valued labels 1..V")
    if v not in d.levels or v == 1:
        raise ConfigError(f"Active level {v} must be one of {list(d.levels[1:])}; level 1 is the reference")


def multivalued_weights(d: Dataset, v: int, method: Method, strict_designs: bool = False) -> WeightSet:
    """
    Weights for the effect of level v against reference level 1

    URI uses the pooled regression on (1, X, indicators of levels 2..V) and puts
    weight on every group; MRI uses groups v and 1 only, each toward the full mean.

    Args:
        d: multi-valued dataset
        v: active level in 2..V
        method: Method.MULTI_URI or Method.MULTI_MRI (URI/MRI accepted)
        strict_designs: under URI, raise instead of warn on a singular group design
    """
    _check_active_level(d, v)
    if method in (Method.URI, Method.MULTI_URI):
        return _multivalued_uri(d, v, strict_designs)
    if method in (Method.MRI, Method.MULTI_MRI):
        return _multivalued_mri(d, v)
    raise ConfigError(f"Multi-valued weights support URI and MRI, not {method.value}")


def _multivalued_uri(d: Dataset, v: int, strict_designs: bool) -> WeightSet:
    metadata: Dict[str, str] = {}
    if strict_designs:
        check_group_designs(d)
    else:
        conditioning = group_design_conditioning(d)
        singular = [g for g, rcond in conditioning.items() if rcond < d.rcond_threshold]
        if singular:
            logger.warning(
                f"Design of group(s) {singular} is not invertible; URI for level {v} extrapolates through linearity"
            )
            metadata["singular_group_designs"] = ",".join(str(g) for g in singular)

    indicators = [f"level_{r}" for r in d.levels[1:]]
    design = np.column_stack(
        [np.ones(d.n), d.covariates] + [(d.treatment == r).astype(float) for r in d.levels[1:]]
    )
    q, r = economic_qr(
        design,
        "Pooled design (1, X, level indicators)",
        d.rcond_threshold,
        ("intercept",) + d.column_names + tuple(indicators),
    )
    contrast = np.zeros(design.shape[1])
    contrast[1 + d.k + (v - 2)] = 1.0
    functional = linear_functional(q, r, contrast)
    weights = np.where(d.treatment == v, functional, -functional)

    active = d.mask(v)
    target = CovariateProfile(
        weighted_sum(d.covariates[active], weights[active]),
        "multi_uri_implied",
    )
    return _finish(
        d, Method.MULTI_URI, weights, target, Estimand.ATE_V1, active=v, reference=1, metadata=metadata
    )


def _multivalued_mri(d: Dataset, v: int) -> WeightSet:
    check_group_designs(d, groups=(v, 1))
    xbar = full_mean(d)
    weights = np.zeros(d.n)
    for group in (v, 1):
        weights[d.mask(group)] = _mri_block(d, group, xbar)
    return _finish(
        d, Method.MULTI_MRI, weights, profile(d, "full_mean"), Estimand.ATE_V1, active=v, reference=1
    )


@dataclass(frozen=True, eq=False)
class PairWeightSet:
    """One weight per matched pair and the profile both arms are balanced toward"""

    pair_weights: np.ndarray
    implied_profile: CovariateProfile
    weight_sum: float


def matched_pair_weights(pairs: MatchedPairs) -> PairWeightSet:
    """
    Weights of the regression of pair outcome differences on (1, X_d)

    Args:
        pairs: matched sample with at least k+2 pairs
    """
    size, k = pairs.size, pairs.k
    if size < k + 2:
        raise DataValidationError(f"{size} matched pairs; at least k+2={k + 2} are needed")
    diffs = pairs.differences
    mean_d = compensated_mean(diffs)
    scatter_d = compensated_scatter(diffs, mean_d)
    pull = solve_scatter(
        scatter_d, mean_d, "Pair-difference scatter S_d", pairs.rcond_threshold, column_names=pairs.column_names
    )
    weights = 1.0 / size - (diffs - mean_d) @ pull

    mean_t = compensated_mean(pairs.treated)
    mean_c = compensated_mean(pairs.control)
    centered_t = pairs.treated - mean_t
    centered_c = pairs.control - mean_c
    s_mt = compensated_cross(centered_t, centered_t)
    s_mc = compensated_cross(centered_c, centered_c)
    s_mtc = compensated_cross(centered_t, centered_c)
    what = "Pair-difference scatter S_d"
    implied = (s_mc - s_mtc.T) @ solve_scatter(scatter_d, mean_t, what, pairs.rcond_threshold) + (
        s_mt - s_mtc
    ) @ solve_scatter(scatter_d, mean_c, what, pairs.rcond_threshold)

    total = compensated_sum(weights)
    if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise NumericalError(f"Pair weights sum to {total!r}, not 1")
    logger.info(f"Computed matched-pair weights for {size} pairs")
    weights.setflags(write=False)
    return PairWeightSet(weights, CovariateProfile(implied, "matched_implied"), total)


def no_intercept_weights(d: Dataset, method: Method, x: Optional[CovariateProfile] = None) -> WeightSet:
    """
    Weights of regressions fitted without an intercept

    URI: Y on (X, Z); the treated weights sum to one and weighted covariate
    sums balance between groups. MRI: per-group Y on X imputed at x, with
    each group's weighted covariate sum equal to x.
    """
    _require_binary(d, "No-intercept weights")
    if method in (Method.URI, Method.NO_INTERCEPT_URI):
        design = np.column_stack([d.covariates, d.treatment.astype(float)])
        q, r = economic_qr(design, "No-intercept design (X, Z)", d.rcond_threshold, d.column_names + ("treatment",))
        contrast = np.zeros(d.k + 1)
        contrast[-1] = 1.0
        functional = linear_functional(q, r, contrast)
        weights = np.where(d.treatment == TREATED, functional, -functional)
        treated = d.mask(TREATED)
        target = CovariateProfile(
            weighted_sum(d.covariates[treated], weights[treated]),
            "no_intercept_uri_sum",
        )
        return _finish(
            d, Method.NO_INTERCEPT_URI, weights, target, Estimand.ATE,
            metadata={"balance": "weighted covariate sums, not means"},
        )
    if method in (Method.MRI, Method.NO_INTERCEPT_MRI):
        x = x if x is not None else profile(d, "full_mean")
        _check_profile(d, x)
        weights = np.empty(d.n)
        for group in (TREATED, CONTROL):
            rows = d.rows(group)
            q, r = economic_qr(rows, "No-intercept group design X_g", d.rcond_threshold, d.column_names)
            weights[d.mask(group)] = linear_functional(q, r, x.values)
        return _finish(
            d, Method.NO_INTERCEPT_MRI, weights, x, estimand_for_profile(d, x),
            metadata={"balance": "weighted covariate sums, not means"},
        )
    raise ConfigError(f"No-intercept weights support URI and MRI, not {method.value}")


def compute_weights(
    d: Dataset,
    method: Method,
    estimand: Estimand = Estimand.ATE,
    x: Optional[CovariateProfile] = None,
    base: Optional[Sequence[float]] = None,
    active_level: Optional[int] = None,
) -> WeightSet:
    """
    Dispatch a method/estimand request to the matching weight operation

    Raises:
        UnsupportedEstimandError: URI-type methods asked for ATT, ATC or CATE
    """
    if method in (Method.URI, Method.WURI, Method.DR, Method.NO_INTERCEPT_URI) and estimand is not Estimand.ATE:
        raise UnsupportedEstimandError(f"{method.value} has no {estimand.value} representation; use MRI")
    if method.is_multivalued:
        if estimand not in (Estimand.ATE, Estimand.ATE_V1):
            raise UnsupportedEstimandError(f"{method.value} estimates ATE_v1 only")
        return multivalued_weights(d, active_level if active_level is not None else 2, method)
    if estimand is Estimand.ATE_V1:
        raise UnsupportedEstimandError("ATE_v1 needs a multi-valued method")

    if method in (Method.MRI, Method.WMRI, Method.NO_INTERCEPT_MRI):
        if estimand is Estimand.CATE and x is None:
            raise ConfigError("CATE needs a target profile")
        if estimand is not Estimand.CATE:
            x = profile(d, {Estimand.ATE: "full_mean", Estimand.ATT: "treated_mean", Estimand.ATC: "control_mean"}[estimand])

    if method is Method.URI:
        return uri_weights(d)
    if method is Method.MRI:
        return mri_weights(d, x, estimand)  # type: ignore[arg-type]
    if method is Method.WURI:
        return wuri_weights(d, base)
    if method is Method.WMRI:
        return wmri_weights(d, base, x, estimand)
    if method is Method.DR:
        return dr_weights(d, base)
    return no_intercept_weights(d, method, x)
