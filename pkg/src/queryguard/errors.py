"""Exception types shared across the package."""


class QueryGuardError(Exception):
    """Base class for all queryguard errors."""


class ConfigError(QueryGuardError):
    """Invalid detector configuration (violates parameter constraints)."""


class InputTooSmall(QueryGuardError):
    """Image has fewer pixel elements than one hashing window."""


class CapacityExceeded(QueryGuardError):
    """Fingerprint store hit its budget; the reset policy is misconfigured."""


class DomainError(QueryGuardError):
    """Combinatorial parameters outside their valid domain."""


class MissingLabels(QueryGuardError):
    """A verdict lacks the label information needed to compute metrics."""


class BudgetInfeasible(QueryGuardError):
    """Attack-trace perturbation budget below one intensity unit."""


class FormatError(QueryGuardError):
    """Malformed or truncated file content."""


class UnsupportedFormat(FormatError):
    """File magic or image encoding not handled by this tool."""
