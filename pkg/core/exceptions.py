"""
Error hierarchy for CCC Fiducial.

Every error carries the CLI exit code it maps to and a JSON-ready payload.
"""

from typing import Any, Dict, List, Optional, Sequence

from config.constants import EXIT_RUNTIME, EXIT_USAGE


class AgreementError(Exception):
    """Base class for all library errors."""

    exit_code = EXIT_RUNTIME

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"error": type(self).__name__, "message": self.message}
        payload.update(self.details)
        return payload


# =============================================================================
# INPUT AND USAGE
# =============================================================================

class ConfigError(AgreementError):
    """Invalid run configuration or command-line usage."""
    exit_code = EXIT_USAGE


class UnknownScenario(ConfigError):
    """Scenario name not present in the catalog."""

    def __init__(self, name: str, catalog: Sequence[str]):
        super().__init__(f"Unknown scenario '{name}'. Available: {', '.join(catalog)}", scenario=name, catalog=list(catalog))


class ParseError(AgreementError):
    """Malformed dataset or config file."""
    exit_code = EXIT_USAGE

    def __init__(self, message: str, line: Optional[int] = None):
        text = f"line {line}: {message}" if line is not None else message
        super().__init__(text, line=line)
        self.line = line


class UnbalancedDesign(AgreementError):
    """Dataset does not contain every (subject, time, replicate, rater) cell exactly once."""
    exit_code = EXIT_USAGE

    def __init__(self, missing: List[tuple], duplicates: List[tuple]):
        parts = []
        if duplicates:
            parts.append(f"duplicate cells {duplicates[:10]}")
        if missing:
            parts.append(f"missing cells {missing[:10]}")
        super().__init__("Unbalanced design: " + "; ".join(parts),
                         missing=[list(c) for c in missing], duplicates=[list(c) for c in duplicates])
        self.missing = missing
        self.duplicates = duplicates


class DomainError(AgreementError):
    """Value outside the response or mean domain of the family."""


class InsufficientRaters(AgreementError):
    """Agreement needs at least two raters."""
    exit_code = EXIT_USAGE


# =============================================================================
# NUMERICAL
# =============================================================================

class NotPositiveDefinite(AgreementError):
    """Cholesky factorization failed."""


class SingularDesign(AgreementError):
    """Fixed-effect design or data carry no estimable variation."""


class NonConvergence(AgreementError):
    """Iterative fit stopped without meeting its tolerance."""

    def __init__(self, message: str, trace: Optional[List[float]] = None, **details: Any):
        super().__init__(message, trace=list(trace or []), **details)
        self.trace = list(trace or [])


class InsufficientDF(AgreementError):
    """Residual degrees of freedom are not positive."""


class DegenerateScatter(AgreementError):
    """Wishart scatter matrix is not positive definite."""


class RankDeficientScatter(DegenerateScatter):
    """Too few subjects for a full-rank predictor scatter matrix."""


class SolverFailure(AgreementError):
    """Variance-component recovery did not converge; carries the best point found."""

    def __init__(self, message: str, result: Any = None):
        super().__init__(message)
        self.result = result


class ZeroDenominator(AgreementError):
    """CCC or bound denominator vanished."""


class OverflowGuard(AgreementError):
    """Exponent too large for a closed-form moment."""


class TooFewSamples(AgreementError):
    """Not enough samples to form an interval."""


class DegenerateVariance(AgreementError):
    """Fisher-Z variance undefined at |CCC| = 1."""


# =============================================================================
# PIPELINE
# =============================================================================

class FitFailure(AgreementError):
    """Model fit failed inside an interval pipeline."""

    def __init__(self, message: str, cause: Optional[BaseException] = None, **details: Any):
        if cause is not None:
            details.setdefault("cause", type(cause).__name__)
            details.setdefault("cause_message", str(cause))
        super().__init__(message, **details)
        self.cause = cause


class ExcessiveDrawFailures(AgreementError):
    """Too many fiducial draws failed to converge."""


class CoverageAborted(AgreementError):
    """Too many coverage replications failed."""
