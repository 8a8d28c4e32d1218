"""Exception hierarchy shared by all solver modules."""


class EbsdeLabError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(EbsdeLabError):
    """Invalid user input: config files, empty control grids, bad schedules."""


class InvalidModelError(EbsdeLabError):
    """Model data violates its contract (e.g. non-finite drift output)."""


class NumericalError(EbsdeLabError):
    """Linear algebra failure inside a solver step."""


class DivergenceError(EbsdeLabError):
    """A simulated state crossed the blow-up guard."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class BasisError(EbsdeLabError):
    """Regression basis unusable: too many features or ill-conditioned Gram."""


class ConvergenceFailureError(EbsdeLabError):
    """Vanishing-discount schedule did not settle; carries the schedule record."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class ContractViolationError(EbsdeLabError):
    """A closed-form evaluator was used outside its applicability contract."""


class EvaluationError(EbsdeLabError):
    """Cost/control handle returned a non-finite value."""


class OracleError(EbsdeLabError):
    """Grid oracle failure: non-convergent policy iteration or bad density."""


class ResolutionError(EbsdeLabError):
    """Quadrature or truncation resolution insufficient (aliasing detected)."""
