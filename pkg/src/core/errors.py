"""
Exception hierarchy for the implied weights toolkit

Every error carries the process exit code the CLI reports for it:
- 2: configuration problems
- 3: data validation problems
- 4: numerical problems (singular matrices, degenerate leverage, KKT failures)
- 5: input/output failures
"""

from typing import Optional


class ImpliedWeightsError(Exception):
    """Base class for all toolkit errors"""

    exit_code = 1

    @property
    def kind(self) -> str:
        return type(self).__name__


class ConfigError(ImpliedWeightsError):
    """Inconsistent command line or settings"""

    exit_code = 2


class UnsupportedEstimandError(ConfigError):
    """Estimand that the requested method does not define (e.g. URI-ATT)"""


class UnsupportedFeatureError(ConfigError):
    """Feature outside the implemented scope (e.g. approximate balance)"""


class DataValidationError(ImpliedWeightsError):
    """Input data violates the dataset schema or invariants"""

    exit_code = 3


class AlignmentError(DataValidationError):
    """Weights or base weights not aligned with the dataset rows"""


class MissingOutcomeError(DataValidationError):
    """Outcome-dependent operation invoked on a dataset without outcomes"""


class SimulationError(DataValidationError):
    """Data-generating process could not produce a usable sample"""


class NumericalError(ImpliedWeightsError):
    """Numerical failure in a factorization or solve"""

    exit_code = 4


class SingularityError(NumericalError):
    """A scatter or design matrix is singular at the configured threshold"""

    def __init__(
        self,
        message: str,
        group: Optional[object] = None,
        column: Optional[str] = None,
        reciprocal_condition: Optional[float] = None,
    ):
        super().__init__(message)
        self.group = group
        self.column = column
        self.reciprocal_condition = reciprocal_condition


class DegenerateLeverageError(NumericalError):
    """A unit has leverage one, so leaving it out is undefined"""

    def __init__(self, message: str, unit: int):
        super().__init__(message)
        self.unit = unit


class SingularKKTError(NumericalError):
    """The KKT system of a balancing problem cannot be solved"""


class CertificationError(NumericalError):
    """A weight set does not match its quadratic-program optimum"""


class OutputError(ImpliedWeightsError):
    """Reading an input or writing an artifact failed"""

    exit_code = 5
