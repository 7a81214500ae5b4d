"""
Study data container and group-level moments

Features:
- Delimiter-separated ingestion with a column-role schema
- Validation of treatment labels, base weights and finiteness
- Cached per-group means and scatters with compensated summation
- Weighted (scale) moments, covariate profiles and matched pairs
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import DataValidationError, OutputError, SingularityError, ConfigError
from .linalg import (
    SINGULARITY_THRESHOLD,
    check_conditioning,
    compensated_mean,
    compensated_scatter,
    equilibrated_reciprocal_condition,
    offending_column,
    reciprocal_condition,
)

logger = logging.getLogger(__name__)

TREATED = 1
CONTROL = 0

PROFILE_KINDS = ("full_mean", "treated_mean", "control_mean", "custom")


@dataclass(frozen=True, eq=False)
class CovariateProfile:
    """Target covariate means that weighted groups are balanced toward"""

    values: np.ndarray
    label: str

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise DataValidationError(f"Profile '{self.label}' has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def to_dict(self) -> Dict[str, object]:
        return {"label": self.label, "values": self.values.tolist()}


@dataclass(frozen=True, eq=False)
class GroupMoments:
    group: int
    size: int
    mean: np.ndarray
    scatter: np.ndarray
    reciprocal_condition: float


@dataclass(frozen=True, eq=False)
class WeightedMoments:
    group: int
    mean: np.ndarray
    scatter: np.ndarray
    reciprocal_condition: float


@dataclass(frozen=True)
class DatasetSchema:
    """
    Column roles for load_dataset

    Attributes:
        treatment: treatment column name
        outcome: optional outcome column
        base_weight: optional base-weight column
        covariates: explicit covariate list; None means every remaining numeric column
        multivalued: labels are 1..V instead of 0/1
        delimiter: field separator
    """

    treatment: str
    outcome: Optional[str] = None
    base_weight: Optional[str] = None
    covariates: Optional[Tuple[str, ...]] = None
    multivalued: bool = False
    delimiter: str = ","


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Validated study data

    Group moments are cached on first use and shared read-only; replacing
    any field through dataclasses.replace starts a fresh cache.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: Optional[np.ndarray] = None
    base_weights: Optional[np.ndarray] = None
    column_names: Tuple[str, ...] = ()
    multivalued: bool = False
    rcond_threshold: float = SINGULARITY_THRESHOLD
    _cache: Dict[object, object] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        covariates = np.array(self.covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates.reshape(-1, 1)
        if covariates.ndim != 2:
            raise DataValidationError("Covariates must be an n x k matrix")
        n, k = covariates.shape
        if n < 2 or k < 1:
            raise DataValidationError(f"Need n >= 2 and k >= 1, got n={n}, k={k}")

        names = tuple(self.column_names) if self.column_names else tuple(f"x{j + 1}" for j in range(k))
        if len(names) != k:
            raise DataValidationError(f"{len(names)} column names for {k} covariates")
        for j in range(k):
            bad = np.flatnonzero(~np.isfinite(covariates[:, j]))
            if bad.size:
                raise DataValidationError(f"Non-finite value in column '{names[j]}' at row {bad[0]}")

        treatment = self._validate_treatment(np.asarray(self.treatment), n)

        outcome = None
        if self.outcome is not None:
            outcome = np.array(self.outcome, dtype=float).reshape(-1)
            if outcome.shape[0] != n:
                raise DataValidationError(f"Outcome has {outcome.shape[0]} entries for {n} rows")
            bad = np.flatnonzero(~np.isfinite(outcome))
            if bad.size:
                raise DataValidationError(f"Non-finite outcome at row {bad[0]}")
            outcome = _frozen(outcome)

        base = None
        if self.base_weights is not None:
            base = np.array(self.base_weights, dtype=float).reshape(-1)
            if base.shape[0] != n:
                raise DataValidationError(f"Base weights have {base.shape[0]} entries for {n} rows")
            bad = np.flatnonzero(~(np.isfinite(base) & (base > 0)))
            if bad.size:
                raise DataValidationError(f"Non-positive base weight {base[bad[0]]} at row {bad[0]}")
            base = _frozen(base)

        object.__setattr__(self, "covariates", _frozen(covariates))
        object.__setattr__(self, "treatment", _frozen(treatment))
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "base_weights", base)
        object.__setattr__(self, "column_names", names)

    def _validate_treatment(self, raw: np.ndarray, n: int) -> np.ndarray:
        raw = raw.reshape(-1)
        if raw.shape[0] != n:
            raise DataValidationError(f"Treatment has {raw.shape[0]} entries for {n} rows")
        try:
            values = raw.astype(float)
        except (TypeError, ValueError) as e:
            raise DataValidationError(f"invalid treatment label: {e}") from e
        finite = np.isfinite(values)
        bad = np.flatnonzero(~finite | (np.where(finite, values, 0.0) != np.floor(np.where(finite, values, 0.0))))
        if bad.size:
            raise DataValidationError(f"invalid treatment label {raw[bad[0]]!r} at row {bad[0]}")
        labels = values.astype(np.int64)
        if self.multivalued:
            top = int(labels.max())
            if labels.min() < 1 or top < 2:
                row = int(np.flatnonzero(labels < 1)[0]) if labels.min() < 1 else 0
                raise DataValidationError(f"invalid treatment label {labels[row]} at row {row}: levels must be 1..V with V >= 2")
            expected = range(1, top + 1)
        else:
            bad = np.flatnonzero((labels != 0) & (labels != 1))
            if bad.size:
                raise DataValidationError(f"invalid treatment label {labels[bad[0]]} at row {bad[0]}: binary labels are 0 and 1")
            expected = (CONTROL, TREATED)
        present = set(np.unique(labels).tolist())
        for level in expected:
            if level not in present:
                raise DataValidationError(f"Treatment group {level} is empty")
        return labels

    @classmethod
    def from_arrays(
        cls,
        covariates: np.ndarray,
        treatment: Sequence[int],
        outcome: Optional[Sequence[float]] = None,
        base_weights: Optional[Sequence[float]] = None,
        column_names: Optional[Sequence[str]] = None,
        multivalued: bool = False,
        rcond_threshold: float = SINGULARITY_THRESHOLD,
    ) -> "Dataset":
        """Build a validated dataset from in-memory arrays"""
        return cls(
            covariates=np.asarray(covariates, dtype=float),
            treatment=np.asarray(treatment),
            outcome=None if outcome is None else np.asarray(outcome, dtype=float),
            base_weights=None if base_weights is None else np.asarray(base_weights, dtype=float),
            column_names=tuple(column_names) if column_names is not None else (),
            multivalued=multivalued,
            rcond_threshold=rcond_threshold,
        )

    @property
    def n(self) -> int:
        return int(self.covariates.shape[0])

    @property
    def k(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def levels(self) -> Tuple[int, ...]:
        if self.multivalued:
            return tuple(range(1, int(self.treatment.max()) + 1))
        return (CONTROL, TREATED)

    @property
    def is_binary(self) -> bool:
        return not self.multivalued

    @property
    def has_outcome(self) -> bool:
        return self.outcome is not None

    def mask(self, group: int) -> np.ndarray:
        if group not in self.levels:
            raise ConfigError(f"Unknown treatment group {group}; levels are {list(self.levels)}")
        return self.treatment == group

    def indices(self, group: int) -> np.ndarray:
        return np.flatnonzero(self.mask(group))

    def group_size(self, group: int) -> int:
        return int(np.count_nonzero(self.mask(group)))

    def group_sizes(self) -> Dict[int, int]:
        return {g: self.group_size(g) for g in self.levels}

    def rows(self, group: int) -> np.ndarray:
        return self.covariates[self.mask(group)]

    def drop(self, unit: int) -> "Dataset":
        """Copy of the dataset without one row"""
        keep = np.ones(self.n, dtype=bool)
        keep[unit] = False
        return replace(
            self,
            covariates=self.covariates[keep],
            treatment=self.treatment[keep],
            outcome=None if self.outcome is None else self.outcome[keep],
            base_weights=None if self.base_weights is None else self.base_weights[keep],
        )

    def with_outcome(self, outcome: Optional[Sequence[float]]) -> "Dataset":
        return replace(self, outcome=None if outcome is None else np.asarray(outcome, dtype=float))

    def with_base_weights(self, base_weights: Optional[Sequence[float]]) -> "Dataset":
        return replace(self, base_weights=None if base_weights is None else np.asarray(base_weights, dtype=float))


def _raw_moments(d: Dataset, group: int) -> Tuple[int, np.ndarray, np.ndarray, float]:
    key = ("moments", group)
    cached = d._cache.get(key)
    if cached is None:
        rows = d.rows(group)
        mean = _frozen(compensated_mean(rows))
        scatter = _frozen(compensated_scatter(rows, mean))
        cached = (rows.shape[0], mean, scatter, reciprocal_condition(scatter))
        d._cache[key] = cached
    return cached  # type: ignore[return-value]


def group_mean(d: Dataset, group: int) -> np.ndarray:
    """Arithmetic mean of a group's covariate rows"""
    return _raw_moments(d, group)[1]


def full_mean(d: Dataset) -> np.ndarray:
    key = ("moments", "all")
    cached = d._cache.get(key)
    if cached is None:
        cached = _frozen(compensated_mean(d.covariates))
        d._cache[key] = cached
    return cached  # type: ignore[return-value]


def group_moments(d: Dataset, group: int, require_invertible: bool = True) -> GroupMoments:
    """
    Mean and scatter of one treatment group

    Args:
        d: Dataset
        group: treatment label
        require_invertible: raise when the scatter is singular

    Returns:
        GroupMoments with the scatter's reciprocal condition

    Raises:
        SingularityError: group smaller than k+1 or scatter below threshold
    """
    size, mean, scatter, rcond = _raw_moments(d, group)
    if not require_invertible:
        return GroupMoments(group=group, size=size, mean=mean, scatter=scatter, reciprocal_condition=rcond)
    if size < d.k + 1:
        raise SingularityError(
            f"Group {group} has {size} units, fewer than k+1={d.k + 1}; its scatter is singular",
            group=group,
            reciprocal_condition=rcond,
        )
    if rcond < d.rcond_threshold:
        check_conditioning(scatter, "Group scatter", d.rcond_threshold, group, d.column_names)
    return GroupMoments(group=group, size=size, mean=mean, scatter=scatter, reciprocal_condition=rcond)


def weighted_moments(d: Dataset, group: int, weights: np.ndarray) -> WeightedMoments:
    """
    Scale-weighted mean and scatter of one group

    The scatter is n_g times the weighted sum of centered outer products, so
    uniform weights reproduce group_moments.

    Args:
        d: Dataset
        group: treatment label
        weights: length-n_g nonnegative weights in group row order
    """
    rows = d.rows(group)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if weights.shape[0] != rows.shape[0]:
        raise DataValidationError(f"Group {group} has {rows.shape[0]} units but {weights.shape[0]} weights were given")
    bad = np.flatnonzero(~np.isfinite(weights) | (weights < 0))
    if bad.size:
        raise DataValidationError(f"Weight {weights[bad[0]]} for unit {bad[0]} of group {group} is negative or non-finite")
    if not np.any(weights > 0):
        raise DataValidationError(f"All weights in group {group} are zero")

    if np.all(weights == weights[0]):
        moments = group_moments(d, group)
        factor = rows.shape[0] * float(weights[0])
        # n_g * (1/n_g) can miss 1.0 by an ulp
        uniform = abs(factor - 1.0) <= 4.0 * np.finfo(float).eps
        scatter = moments.scatter if uniform else _frozen(moments.scatter * factor)
        return WeightedMoments(group, moments.mean, scatter, moments.reciprocal_condition)

    mean = compensated_mean(rows, weights)
    scatter = rows.shape[0] * compensated_scatter(rows, mean, weights)
    rcond = check_conditioning(scatter, "Weighted group scatter", d.rcond_threshold, group, d.column_names)
    return WeightedMoments(group=group, mean=_frozen(mean), scatter=_frozen(scatter), reciprocal_condition=rcond)


def profile(d: Dataset, kind: str, values: Optional[Sequence[float]] = None) -> CovariateProfile:
    """
    Named covariate profile of a dataset

    Args:
        d: Dataset
        kind: one of full_mean, treated_mean, control_mean, custom
        values: the vector for kind=custom
    """
    if kind == "full_mean":
        return CovariateProfile(full_mean(d), "full_mean")
    if kind in ("treated_mean", "control_mean"):
        if not d.is_binary:
            raise ConfigError(f"Profile '{kind}' needs binary treatment")
        group = TREATED if kind == "treated_mean" else CONTROL
        return CovariateProfile(group_mean(d, group), kind)
    if kind == "custom":
        if values is None:
            raise ConfigError("Custom profile needs a vector")
        vector = np.asarray(values, dtype=float).reshape(-1)
        if vector.shape[0] != d.k:
            raise ConfigError(f"Custom profile has length {vector.shape[0]}, dataset has k={d.k}")
        return CovariateProfile(vector, "custom")
    raise ConfigError(f"Unknown profile kind '{kind}'; expected one of {', '.join(PROFILE_KINDS)}")


def group_design_conditioning(d: Dataset) -> Dict[int, float]:
    """Reciprocal condition of each group's [1, X_g]^T [1, X_g] with unit-norm design columns"""
    result = {}
    for g in d.levels:
        rows = d.rows(g)
        design = np.column_stack([np.ones(rows.shape[0]), rows])
        if rows.shape[0] < design.shape[1]:
            result[g] = 0.0
        else:
            result[g] = equilibrated_reciprocal_condition(design)[0]
    return result


def check_group_designs(d: Dataset, groups: Optional[Sequence[int]] = None) -> Dict[int, float]:
    """
    Raise SingularityError for the first group whose design is not invertible

    Returns:
        The reciprocal conditions of the checked groups
    """
    conditioning = group_design_conditioning(d)
    checked = {}
    for g in groups if groups is not None else d.levels:
        rcond = conditioning[g]
        checked[g] = rcond
        if rcond < d.rcond_threshold:
            scatter = _raw_moments(d, g)[2]
            column = offending_column(scatter, d.column_names, d.rcond_threshold)
            detail = f", column '{column}' is constant" if column else ""
            raise SingularityError(
                f"Design X'X of group {g} is not invertible (reciprocal condition {rcond:.3e}){detail}",
                group=g,
                column=column,
                reciprocal_condition=rcond,
            )
    return checked


@dataclass(frozen=True, eq=False)
class MatchedPairs:
    """One row per matched treated/control pair"""

    treated: np.ndarray
    control: np.ndarray
    treated_outcome: Optional[np.ndarray] = None
    control_outcome: Optional[np.ndarray] = None
    column_names: Tuple[str, ...] = ()
    rcond_threshold: float = SINGULARITY_THRESHOLD

    def __post_init__(self):
        treated = np.array(self.treated, dtype=float)
        control = np.array(self.control, dtype=float)
        if treated.ndim == 1:
            treated = treated.reshape(-1, 1)
        if control.ndim == 1:
            control = control.reshape(-1, 1)
        if treated.shape != control.shape:
            raise DataValidationError(f"Treated rows {treated.shape} and control rows {control.shape} differ")
        if not (np.all(np.isfinite(treated)) and np.all(np.isfinite(control))):
            raise DataValidationError("Matched covariates must be finite")
        object.__setattr__(self, "treated", _frozen(treated))
        object.__setattr__(self, "control", _frozen(control))
        if (self.treated_outcome is None) != (self.control_outcome is None):
            raise DataValidationError("Matched outcomes must be given for both arms or neither")
        if self.treated_outcome is not None:
            for name in ("treated_outcome", "control_outcome"):
                values = np.array(getattr(self, name), dtype=float).reshape(-1)
                if values.shape[0] != treated.shape[0] or not np.all(np.isfinite(values)):
                    raise DataValidationError(f"{name} must be finite with one entry per pair")
                object.__setattr__(self, name, _frozen(values))
        if not self.column_names:
            object.__setattr__(self, "column_names", tuple(f"x{j + 1}" for j in range(treated.shape[1])))

    @property
    def size(self) -> int:
        return int(self.treated.shape[0])

    @property
    def k(self) -> int:
        return int(self.treated.shape[1])

    @property
    def differences(self) -> np.ndarray:
        return self.treated - self.control

    @property
    def outcome_differences(self) -> Optional[np.ndarray]:
        if self.treated_outcome is None:
            return None
        return self.treated_outcome - self.control_outcome

    @classmethod
    def from_dataset(cls, d: Dataset, pair_ids: Sequence[object]) -> "MatchedPairs":
        """
        Build pairs from a per-row pair identifier

        Every identifier must label exactly one treated and one control row;
        pairs are ordered by first appearance.
        """
        if not d.is_binary:
            raise DataValidationError("Matched pairs need binary treatment")
        ids = list(pair_ids)
        if len(ids) != d.n:
            raise DataValidationError(f"{len(ids)} pair ids for {d.n} rows")
        members: Dict[object, Dict[int, List[int]]] = {}
        for i, pid in enumerate(ids):
            members.setdefault(pid, {TREATED: [], CONTROL: []})[int(d.treatment[i])].append(i)
        treated_rows, control_rows = [], []
        for pid, arms in members.items():
            if len(arms[TREATED]) != 1 or len(arms[CONTROL]) != 1:
                raise DataValidationError(
                    f"Pair {pid!r} has {len(arms[TREATED])} treated and {len(arms[CONTROL])} control rows; expected one each"
                )
            treated_rows.append(arms[TREATED][0])
            control_rows.append(arms[CONTROL][0])
        y = d.outcome
        return cls(
            treated=d.covariates[treated_rows],
            control=d.covariates[control_rows],
            treated_outcome=None if y is None else y[treated_rows],
            control_outcome=None if y is None else y[control_rows],
            column_names=d.column_names,
            rcond_threshold=d.rcond_threshold,
        )


def _parse_numeric(frame: pd.DataFrame, column: str, strict: bool = True) -> Optional[np.ndarray]:
    raw = frame[column]
    parsed = pd.to_numeric(raw.str.strip(), errors="coerce")
    bad = np.flatnonzero(parsed.isna().to_numpy())
    if bad.size:
        if not strict and bad.size == len(raw):
            return None
        row = int(bad[0])
        # +2: one for the header, one for 1-based line numbers
        raise DataValidationError(
            f"Non-numeric cell {raw.iloc[row]!r} in column '{column}' at line {row + 2}"
        )
    return parsed.to_numpy(dtype=float)


def load_dataset(
    source: Union[str, Path, IO[str]],
    schema: DatasetSchema,
    rcond_threshold: float = SINGULARITY_THRESHOLD,
) -> Dataset:
    """
    Load and validate a delimiter-separated table

    Args:
        source: path or text stream with a header row (UTF-8)
        schema: column roles
        rcond_threshold: singularity threshold stored on the dataset

    Returns:
        Validated Dataset, covariates in file column order
    """
    try:
        frame = pd.read_csv(
            source,
            sep=schema.delimiter,
            header=None,
            dtype=str,
            keep_default_na=False,
            encoding="utf-8",
            skip_blank_lines=True,
        )
    except pd.errors.EmptyDataError as e:
        raise DataValidationError("Input table is empty; a header row is required") from e
    except pd.errors.ParserError as e:
        raise DataValidationError(f"Malformed input table: {e}") from e
    except (OSError, UnicodeDecodeError) as e:
        raise OutputError(f"Cannot read input {source}: {e}") from e

    header = [str(name).strip() for name in frame.iloc[0].tolist()]
    for position, name in enumerate(header):
        if not name:
            raise DataValidationError(f"Missing header name for column {position + 1}")
    seen = set()
    for name in header:
        if name in seen:
            raise DataValidationError(f"Duplicate header name '{name}'")
        seen.add(name)
    frame = frame.iloc[1:].reset_index(drop=True)
    frame.columns = header
    if frame.empty:
        raise DataValidationError("Input table has a header but no data rows")

    roles = [schema.treatment, schema.outcome, schema.base_weight]
    for name in roles + list(schema.covariates or ()):
        if name is not None and name not in header:
            raise DataValidationError(f"Missing column '{name}' in header")

    treatment = _parse_numeric(frame, schema.treatment)
    outcome = _parse_numeric(frame, schema.outcome) if schema.outcome else None
    base = _parse_numeric(frame, schema.base_weight) if schema.base_weight else None

    columns: List[str] = []
    blocks: List[np.ndarray] = []
    if schema.covariates is not None:
        for name in schema.covariates:
            if name in roles:
                raise ConfigError(f"Column '{name}' cannot be both a covariate and a role column")
            columns.append(name)
            blocks.append(_parse_numeric(frame, name))  # type: ignore[arg-type]
    else:
        for name in header:
            if name in roles:
                continue
            values = _parse_numeric(frame, name, strict=False)
            if values is None:
                logger.info(f"Skipping non-numeric column '{name}'")
                continue
            columns.append(name)
            blocks.append(values)
    if not columns:
        raise DataValidationError("No covariate columns found")

    dataset = Dataset.from_arrays(
        np.column_stack(blocks),
        treatment,  # type: ignore[arg-type]
        outcome=outcome,
        base_weights=base,
        column_names=columns,
        multivalued=schema.multivalued,
        rcond_threshold=rcond_threshold,
    )
    logger.info(f"Loaded dataset: n={dataset.n}, k={dataset.k}, group sizes {dataset.group_sizes()}")
    return dataset
