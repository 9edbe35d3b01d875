"""Exception taxonomy for copulameta.

Exit-code mapping used by the CLI: validation problems (DomainError,
DatasetParseError, DatasetValidationError) -> 1, convergence failures
(ConvergenceError) -> 2, internal numeric failures (NumericOverflowError,
LikelihoodEvaluationError) -> 3.
"""


class CopulaMetaError(Exception):
    """Base class for all copulameta errors."""


class DomainError(CopulaMetaError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class NumericOverflowError(CopulaMetaError, ArithmeticError):
    """A closed-form evaluation overflowed; message carries the inputs."""


class LikelihoodEvaluationError(CopulaMetaError, ArithmeticError):
    """A likelihood evaluation produced a non-finite study contribution."""


class ConvergenceError(CopulaMetaError, RuntimeError):
    """An optimizer failed to converge where a result is required."""


class DegenerateComparisonError(CopulaMetaError, ValueError):
    """Vuong comparison between models with identical per-study terms."""


class DatasetParseError(CopulaMetaError, ValueError):
    """Malformed input file; message carries the offending line number."""


class DatasetValidationError(CopulaMetaError, ValueError):
    """Structurally valid input that violates count invariants."""
