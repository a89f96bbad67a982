class DpilqrError(Exception):
    """Base class for library errors."""


class ConfigurationError(DpilqrError, ValueError):
    """Inconsistent dimensions, invalid parameters or malformed scenario files."""


class SolverError(DpilqrError, RuntimeError):
    """The trajectory optimizer could not produce a usable iterate."""


class InfeasibleScenarioError(DpilqrError):
    """Random scenario generation could not satisfy the separation constraints."""
