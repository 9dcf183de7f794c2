"""Exception types shared across the package."""


class CpSelectError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CpSelectError, ValueError):
    """Invalid configuration or distribution parameters."""


class DomainError(CpSelectError, ValueError):
    """Argument outside the mathematical domain of a model (e.g. beta >= 1)."""


class ContractError(CpSelectError, ValueError):
    """Caller violated an operation precondition."""


class InfeasibleError(CpSelectError):
    """No feasible solution exists for the requested experiment."""
