"""
Design-stage diagnostics for implied weights

Features:
- Balance tables (ASMD between weighted groups, TASMD against a target)
- Modified Kish effective sample size for signed weights
- Weight dispersion with closed-form variances for URI and MRI
- Extrapolation flags and sample-boundedness checks
- Long-format plot data (love, density, bubble, influence)
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .dataset import CONTROL, TREATED, CovariateProfile, Dataset, full_mean, group_moments
from .errors import ConfigError, DataValidationError, DegenerateLeverageError
from .estimators import sample_influence, scaled_influence
from .linalg import compensated_sum, solve_scatter
from .weights import Estimand, Method, WeightSet, weighted_sum

logger = logging.getLogger(__name__)

DEFAULT_EXTREME_MULTIPLE = 10.0
PLOT_KINDS = ("love", "density", "bubble", "influence")

ASMD_CONVENTION = "unweighted pooled sd sqrt((s_t^2 + s_c^2) / 2)"
TASMD_CONVENTION = "unweighted sd of the target sample: full sample for ATE/CATE, treated for ATT, control for ATC"


@dataclass(frozen=True)
class BalanceRow:
    name: str
    asmd: Optional[float]
    tasmd_treated: Optional[float]
    tasmd_control: Optional[float]
    asmd_unadjusted: Optional[float]
    tasmd_treated_unadjusted: Optional[float]
    tasmd_control_unadjusted: Optional[float]
    computable: bool = True


@dataclass(frozen=True, eq=False)
class BalanceTable:
    rows: List[BalanceRow]
    target: CovariateProfile
    metadata: Dict[str, str] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows])

    def max_asmd(self) -> float:
        return max((row.asmd for row in self.rows if row.asmd is not None), default=0.0)

    def max_tasmd(self) -> float:
        values = [v for row in self.rows for v in (row.tasmd_treated, row.tasmd_control) if v is not None]
        return max(values, default=0.0)


def _sd(values: np.ndarray) -> float:
    if values.shape[0] < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def _reference_sample(d: Dataset, w: WeightSet) -> np.ndarray:
    if w.estimand is Estimand.ATT:
        return d.mask(TREATED)
    if w.estimand is Estimand.ATC:
        return d.mask(CONTROL)
    return np.ones(d.n, dtype=bool)


def _ratio(numerator: float, denominator: float) -> Optional[float]:
    if denominator <= 0.0:
        return None
    return abs(numerator) / denominator


def balance_table(
    d: Dataset,
    w: WeightSet,
    target: Optional[CovariateProfile] = None,
    transformed: Optional[np.ndarray] = None,
    transformed_names: Optional[Sequence[str]] = None,
) -> BalanceTable:
    """
    ASMD and TASMD of every covariate after weighting

    Args:
        d: Dataset the weights belong to
        w: weight set
        target: profile for TASMD; defaults to the weight set's target, or to the
            reference-sample mean of the transformed columns
        transformed: optional n x q matrix of transformed covariates to check instead
        transformed_names: names of the transformed columns

    Returns:
        BalanceTable; zero-variance columns are flagged non-computable
    """
    w.check_aligned(d)
    reference = _reference_sample(d, w)
    if transformed is None:
        columns = d.covariates
        names = list(d.column_names)
        target = target if target is not None else w.target
    else:
        columns = np.asarray(transformed, dtype=float)
        if columns.ndim == 1:
            columns = columns.reshape(-1, 1)
        if columns.shape[0] != d.n:
            raise DataValidationError(f"Transformed covariates have {columns.shape[0]} rows for {d.n} units")
        names = list(transformed_names) if transformed_names else [f"t{j + 1}" for j in range(columns.shape[1])]
        if target is None:
            target = CovariateProfile(columns[reference].mean(axis=0), "reference_sample_mean")
    if target.values.shape[0] != columns.shape[1]:
        raise ConfigError(f"Target has length {target.values.shape[0]}, table has {columns.shape[1]} columns")

    active, other = w.active_label, w.reference_label
    mask_a, mask_o = d.mask(active), d.mask(other)
    adjusted_a = weighted_sum(columns[mask_a], w.weights[mask_a])
    adjusted_o = weighted_sum(columns[mask_o], w.weights[mask_o])
    raw_a = columns[mask_a].mean(axis=0)
    raw_o = columns[mask_o].mean(axis=0)

    rows = []
    for j, name in enumerate(names):
        pooled = float(np.sqrt((_sd(columns[mask_a, j]) ** 2 + _sd(columns[mask_o, j]) ** 2) / 2.0))
        spread = _sd(columns[reference, j])
        computable = pooled > 0.0 and spread > 0.0
        goal = target.values[j]
        rows.append(
            BalanceRow(
                name=name,
                asmd=_ratio(adjusted_a[j] - adjusted_o[j], pooled),
                tasmd_treated=_ratio(adjusted_a[j] - goal, spread),
                tasmd_control=_ratio(adjusted_o[j] - goal, spread),
                asmd_unadjusted=_ratio(raw_a[j] - raw_o[j], pooled),
                tasmd_treated_unadjusted=_ratio(raw_a[j] - goal, spread),
                tasmd_control_unadjusted=_ratio(raw_o[j] - goal, spread),
                computable=computable,
            )
        )
        if not computable:
            logger.warning(f"Covariate '{name}' has zero variance; its balance entries are not computable")
    metadata = {"asmd_denominator": ASMD_CONVENTION, "tasmd_denominator": TASMD_CONVENTION}
    return BalanceTable(rows, target, metadata)


def effective_sample_size(weights: Sequence[float]) -> float:
    """
    Modified Kish effective sample size (sum |w|)^2 / sum w^2

    Raises:
        DataValidationError: all weights are zero
    """
    values = np.asarray(weights, dtype=float)
    squares = compensated_sum(values * values)
    if squares == 0.0:
        raise DataValidationError("Effective sample size is undefined for all-zero weights")
    absolute = compensated_sum(np.abs(values))
    return absolute * absolute / squares


def total_dispersion(weights: Sequence[float]) -> float:
    """Sum over the full sample of (w_i - 2/n)^2"""
    values = np.asarray(weights, dtype=float)
    gap = values - 2.0 / values.shape[0]
    return compensated_sum(gap * gap)


def _population_variance(values: np.ndarray) -> float:
    centre = compensated_sum(values) / values.shape[0]
    gap = values - centre
    return compensated_sum(gap * gap) / values.shape[0]


def closed_form_weight_variance(d: Dataset, w: WeightSet) -> Dict[int, float]:
    """
    Per-group weight variances from their closed forms (URI and MRI only)

    URI treated: n^2 / (n_t n_c^2) d_t^T S^{-1} S_t S^{-1} d_t with d_t = mean - mean_t
    and S = S_t + S_c; control mirrors it. MRI at x: (x - mean_g)^T S_g^{-1} (x - mean_g) / n_g.
    Other methods return an empty mapping.
    """
    if not d.is_binary or w.method not in (Method.URI, Method.MRI):
        return {}
    xbar = full_mean(d)
    moments = {g: group_moments(d, g, require_invertible=w.method is Method.MRI) for g in (TREATED, CONTROL)}
    result = {}
    if w.method is Method.URI:
        pooled = moments[TREATED].scatter + moments[CONTROL].scatter
        n = d.n
        for group, other in ((TREATED, CONTROL), (CONTROL, TREATED)):
            shift = solve_scatter(pooled, xbar - moments[group].mean, "Pooled scatter S_t + S_c", d.rcond_threshold)
            quadratic = float(shift @ moments[group].scatter @ shift)
            size, other_size = moments[group].size, moments[other].size
            result[group] = n * n / (size * other_size * other_size) * quadratic
    else:
        for group in (TREATED, CONTROL):
            offset = w.target.values - moments[group].mean
            direction = solve_scatter(moments[group].scatter, offset, "Group scatter", d.rcond_threshold, group)
            result[group] = float(offset @ direction) / moments[group].size
    return result


@dataclass(frozen=True)
class GroupWeightStats:
    group: int
    size: int
    ess: Optional[float]
    variance: float
    negative_count: int
    min: float
    max: float
    sum: float
    sum_abs: float
    closed_form_variance: Optional[float] = None
    variance_discrepancy: Optional[float] = None


@dataclass(frozen=True)
class WeightDiagnostics:
    groups: Dict[int, GroupWeightStats]
    sample_bounded: Dict[int, bool]
    total_dispersion: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(stats) for stats in self.groups.values()])


def _weighted_outcome_bounded(d: Dataset, w: WeightSet) -> Dict[int, bool]:
    if d.outcome is None:
        return {}
    result = {}
    for group in w.normalized_groups():
        mask = d.mask(group)
        y = d.outcome[mask]
        mean = compensated_sum(w.weights[mask] * y)
        slack = 1e-12 * max(1.0, float(np.max(np.abs(y))))
        result[group] = bool(y.min() - slack <= mean <= y.max() + slack)
    return result


def weight_diagnostics(d: Dataset, w: WeightSet) -> WeightDiagnostics:
    """
    Per-group dispersion, ESS, extremes and negative counts

    Groups whose weights are all zero, such as the inactive levels of a
    multi-valued weight set, have no ESS.

    URI and MRI weight sets also carry their closed-form variances and the
    absolute gap to the empirical ones.
    """
    w.check_aligned(d)
    closed = closed_form_weight_variance(d, w)
    stats = {}
    for group in d.levels:
        values = w.weights[d.mask(group)]
        nonzero = np.any(values != 0.0)
        variance = _population_variance(values)
        cf = closed.get(group)
        stats[group] = GroupWeightStats(
            group=group,
            size=int(values.shape[0]),
            ess=effective_sample_size(values) if nonzero else None,
            variance=variance,
            negative_count=int(np.count_nonzero(values < 0)),
            min=float(values.min()),
            max=float(values.max()),
            sum=compensated_sum(values),
            sum_abs=compensated_sum(np.abs(values)),
            closed_form_variance=cf,
            variance_discrepancy=None if cf is None else abs(variance - cf),
        )
    return WeightDiagnostics(stats, _weighted_outcome_bounded(d, w), total_dispersion(w.weights))


@dataclass(frozen=True, eq=False)
class ExtrapolationReport:
    """
    Units with negative or extreme weights and per-group boundedness

    guaranteed_bounded holds when a group has no negative weights; sample_bounded
    is the observed check on the outcome and is empty without outcomes.
    """

    flags: pd.DataFrame
    guaranteed_bounded: Dict[int, bool]
    sample_bounded: Dict[int, bool]
    extreme_multiple: float

    @property
    def flagged_units(self) -> List[int]:
        return [int(i) for i in self.flags["index"].tolist()]


def extrapolation_report(
    d: Dataset,
    w: WeightSet,
    extreme_multiple: float = DEFAULT_EXTREME_MULTIPLE,
) -> ExtrapolationReport:
    """
    Flag negative weights and weights above extreme_multiple times uniform

    Args:
        d: Dataset
        w: weight set
        extreme_multiple: |w_i| > extreme_multiple / n_g flags unit i
    """
    if extreme_multiple <= 0:
        raise ConfigError(f"Extreme-weight multiple must be positive, got {extreme_multiple}")
    w.check_aligned(d)
    records = []
    guaranteed = {}
    for group in d.levels:
        indices = d.indices(group)
        values = w.weights[indices]
        limit = extreme_multiple / indices.shape[0]
        negative = values < 0
        extreme = np.abs(values) > limit
        guaranteed[group] = not bool(np.any(negative))
        for position in np.flatnonzero(negative | extreme):
            records.append(
                {
                    "index": int(indices[position]),
                    "group": group,
                    "weight": float(values[position]),
                    "negative": bool(negative[position]),
                    "extreme": bool(extreme[position]),
                }
            )
    flags = pd.DataFrame(records, columns=["index", "group", "weight", "negative", "extreme"])
    flags = flags.sort_values("index", kind="mergesort").reset_index(drop=True)
    if not flags.empty:
        logger.warning(
            f"{w.method.value} weights: {int(flags['negative'].sum())} negative, "
            f"{int(flags['extreme'].sum())} beyond {extreme_multiple:g}x uniform"
        )
    return ExtrapolationReport(flags, guaranteed, _weighted_outcome_bounded(d, w), extreme_multiple)


def plot_data(
    d: Dataset,
    w: WeightSet,
    kind: str,
    covariate: Optional[str] = None,
    table: Optional[BalanceTable] = None,
) -> pd.DataFrame:
    """
    Long-format data for diagnostic plots

    Args:
        d: Dataset
        w: weight set
        kind: love, density, bubble or influence
        covariate: covariate shown on the bubble plot (first column by default)
        table: precomputed balance table for the love plot
    """
    w.check_aligned(d)
    if kind == "love":
        table = table if table is not None else balance_table(d, w)
        records = []
        for row in table.rows:
            for statistic in ("asmd", "tasmd_treated", "tasmd_control"):
                for adjustment, value in (
                    ("unadjusted", getattr(row, f"{statistic}_unadjusted")),
                    ("adjusted", getattr(row, statistic)),
                ):
                    records.append(
                        {"covariate": row.name, "statistic": statistic, "adjustment": adjustment, "value": value}
                    )
        return pd.DataFrame(records, columns=["covariate", "statistic", "adjustment", "value"])
    if kind == "density":
        return pd.DataFrame({"group": d.treatment, "weight": w.weights})
    if kind == "bubble":
        name = covariate if covariate is not None else d.column_names[0]
        if name not in d.column_names:
            raise ConfigError(f"Unknown bubble-plot covariate '{name}'")
        values = d.covariates[:, d.column_names.index(name)]
        return pd.DataFrame(
            {
                "index": np.arange(d.n),
                "group": d.treatment,
                "covariate": name,
                "value": values,
                "weight": w.weights,
                "sign": np.where(w.weights < 0, "negative", "nonnegative"),
            }
        )
    if kind == "influence":
        if w.method not in (Method.URI, Method.MRI):
            raise ConfigError(f"Influence data is available for URI and MRI, not {w.method.value}")
        influence = sample_influence(d, w.method)
        return pd.DataFrame(
            {"index": np.arange(d.n), "group": d.treatment, "scaled_sic": scaled_influence(influence.sic)}
        )
    raise ConfigError(f"Unknown plot kind '{kind}'; expected one of {', '.join(PLOT_KINDS)}")


@dataclass(frozen=True, eq=False)
class DiagnosticsReport:
    balance: BalanceTable
    weights: WeightDiagnostics
    extrapolation: ExtrapolationReport
    influence: Optional[pd.DataFrame] = None

    def summary(self) -> Dict[str, object]:
        return {
            "balance": {
                "max_asmd": self.balance.max_asmd(),
                "max_tasmd": self.balance.max_tasmd(),
                "target": self.balance.target.to_dict(),
                "conventions": dict(self.balance.metadata),
            },
            "weights": {
                "groups": {str(g): asdict(s) for g, s in self.weights.groups.items()},
                "sample_bounded": {str(g): v for g, v in self.weights.sample_bounded.items()},
                "total_dispersion": self.weights.total_dispersion,
            },
            "extrapolation": {
                "flagged_units": len(self.extrapolation.flags),
                "negative_units": int(self.extrapolation.flags["negative"].sum()),
                "extreme_units": int(self.extrapolation.flags["extreme"].sum()),
                "extreme_multiple": self.extrapolation.extreme_multiple,
                "guaranteed_bounded": {str(g): v for g, v in self.extrapolation.guaranteed_bounded.items()},
                "sample_bounded": {str(g): v for g, v in self.extrapolation.sample_bounded.items()},
            },
        }


def diagnose(
    d: Dataset,
    w: WeightSet,
    extreme_multiple: float = DEFAULT_EXTREME_MULTIPLE,
) -> DiagnosticsReport:
    """All diagnostics for one weight set; influence only with outcomes and URI/MRI"""
    table = balance_table(d, w)
    influence = None
    if d.outcome is not None and d.is_binary and w.method in (Method.URI, Method.MRI):
        try:
            influence = plot_data(d, w, "influence")
        except (DataValidationError, DegenerateLeverageError) as e:
            logger.warning(f"Skipping influence diagnostics: {e}")
    return DiagnosticsReport(table, weight_diagnostics(d, w), extrapolation_report(d, w, extreme_multiple), influence)
