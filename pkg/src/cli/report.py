"""
Report and table serialization
Renders every number at a fixed count of significant digits so repeated runs
produce byte-identical artifacts
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np
import pandas as pd

from core import __version__
from core.dataset import CovariateProfile, Dataset
from core.errors import AlignmentError, DataValidationError, OutputError
from core.weights import Estimand, Method, WeightSet

logger = logging.getLogger(__name__)

DEFAULT_DIGITS = 12
WEIGHT_COLUMNS = ["index", "group", "weight"]

PathLike = Union[str, Path]


def round_significant(value: float, digits: int = DEFAULT_DIGITS) -> Optional[float]:
    """Round to a number of significant digits; NaN and infinities become None"""
    if not math.isfinite(value):
        return None
    return float(f"{value:.{digits}g}")


def to_serializable(value: object, digits: int = DEFAULT_DIGITS) -> object:
    """Recursively convert numpy scalars, arrays and frames into rounded JSON values"""
    if isinstance(value, Mapping):
        return {str(key): to_serializable(item, digits) for key, item in value.items()}
    if isinstance(value, pd.DataFrame):
        return [to_serializable(row, digits) for row in value.to_dict(orient="records")]
    if isinstance(value, (list, tuple)):
        return [to_serializable(item, digits) for item in value]
    if isinstance(value, np.ndarray):
        return [to_serializable(item, digits) for item in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return round_significant(float(value), digits)
    if value is None or isinstance(value, str):
        return value
    return str(value)


def emit_report(
    path: PathLike,
    command: str,
    config: Mapping[str, object],
    sections: Optional[Mapping[str, object]] = None,
    digits: int = DEFAULT_DIGITS,
) -> Dict[str, object]:
    """
    Write a structured JSON report

    Args:
        path: output file
        command: command that produced the report
        config: run configuration echoed into the report
        sections: result payloads keyed by section name; may be empty
        digits: significant digits for every float

    Returns:
        The document as written
    """
    document = {
        "version": __version__,
        "command": command,
        "config": to_serializable(config, digits),
        "results": to_serializable(dict(sections or {}), digits),
    }
    text = json.dumps(document, indent=2, sort_keys=True, allow_nan=False) + "\n"
    _write_text(path, text)
    logger.info(f"Report written to {path}")
    return document


def _write_text(path: PathLike, text: str) -> None:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
    except OSError as e:
        raise OutputError(f"Cannot write {target}: {e}") from e


def write_table(
    frame: pd.DataFrame,
    path: PathLike,
    delimiter: str = ",",
    digits: int = DEFAULT_DIGITS,
    comments: Optional[Mapping[str, str]] = None,
) -> None:
    """Write a long-format table; comments become leading '# key: value' lines"""
    lines = [f"# {key}: {value}\n" for key, value in (comments or {}).items()]
    body = frame.to_csv(index=False, sep=delimiter, float_format=f"%.{digits}g", lineterminator="\n")
    _write_text(path, "".join(lines) + body)
    logger.debug(f"Table with {len(frame)} rows written to {path}")


def _profile_text(target: CovariateProfile, names, digits: int) -> str:
    return ";".join(f"{name}={value:.{digits}g}" for name, value in zip(names, target.values))


def write_weight_table(
    path: PathLike,
    d: Dataset,
    w: WeightSet,
    delimiter: str = ",",
    digits: int = DEFAULT_DIGITS,
) -> None:
    """
    Write a weight table with its method, estimand and target profile inline

    Columns are index, group and weight, one row per dataset row.
    """
    w.check_aligned(d)
    frame = pd.DataFrame({"index": np.arange(d.n), "group": d.treatment, "weight": w.weights})
    comments = {
        "method": w.method.value,
        "estimand": w.estimand.value,
        "active_label": str(w.active_label),
        "target": _profile_text(w.target, d.column_names, digits),
        "target_label": w.target.label,
        "group_sums": ";".join(f"{g}={s:.{digits}g}" for g, s in sorted(w.group_sums.items())),
    }
    write_table(frame, path, delimiter, digits, comments)


@dataclass(frozen=True, eq=False)
class WeightTable:
    """A weight table read back from disk"""

    frame: pd.DataFrame
    metadata: Dict[str, str] = field(default_factory=dict)

    def check_aligned(self, d: Dataset) -> None:
        """
        Raises:
            AlignmentError: row count or group labels differ from the dataset
        """
        if len(self.frame) != d.n:
            raise AlignmentError(f"Weight table has {len(self.frame)} rows, dataset has {d.n}")
        groups = self.frame["group"].to_numpy()
        mismatch = np.flatnonzero(groups != d.treatment)
        if mismatch.size:
            raise AlignmentError(f"Weight table group differs from dataset at row {mismatch[0]}")

    def to_weight_set(self, d: Dataset) -> WeightSet:
        """Rebuild a WeightSet aligned to a dataset"""
        self.check_aligned(d)
        names, values = [], []
        for item in filter(None, self.metadata.get("target", "").split(";")):
            name, _, number = item.partition("=")
            names.append(name)
            values.append(float(number))
        if tuple(names) != d.column_names:
            raise AlignmentError(f"Weight table target names {names} do not match dataset covariates")
        weights = self.frame["weight"].to_numpy(dtype=float)
        sums = {g: float(np.sum(weights[d.mask(g)])) for g in d.levels}
        return WeightSet(
            method=Method.parse(self.metadata.get("method", "URI")),
            weights=weights,
            target=CovariateProfile(np.array(values), self.metadata.get("target_label", "custom")),
            group_sums=sums,
            estimand=Estimand.parse(self.metadata.get("estimand", "ATE")),
            treatment=d.treatment,
            active_label=int(self.metadata.get("active_label", "1")),
            reference_label=int(d.levels[0]) if d.multivalued else 0,
        )

    def as_base_weights(self, d: Dataset) -> Dataset:
        """
        The dataset with the table's weights as its base weights

        Raises:
            AlignmentError: the table does not belong to the dataset
            DataValidationError: a weight is not positive
        """
        self.check_aligned(d)
        return d.with_base_weights(self.frame["weight"].to_numpy(dtype=float))


def read_weight_table(path: PathLike, delimiter: str = ",") -> WeightTable:
    """
    Read a table written by write_weight_table

    Raises:
        OutputError: the file cannot be read
        DataValidationError: columns are missing or weights are not numeric
    """
    metadata: Dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as handle:
            for line in handle:
                if not line.startswith("#"):
                    break
                key, _, value = line[1:].strip().partition(":")
                metadata[key.strip()] = value.strip()
        frame = pd.read_csv(path, sep=delimiter, comment="#")
    except OSError as e:
        raise OutputError(f"Cannot read weight table {path}: {e}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataValidationError(f"Malformed weight table {path}: {e}") from e

    missing = [name for name in WEIGHT_COLUMNS if name not in frame.columns]
    if missing:
        raise DataValidationError(f"Weight table {path} lacks columns {missing}")
    if not pd.api.types.is_numeric_dtype(frame["weight"]):
        raise DataValidationError(f"Weight table {path} has non-numeric weights")
    return WeightTable(frame, metadata)
