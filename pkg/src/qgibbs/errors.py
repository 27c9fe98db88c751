"""Exception hierarchy shared by all modules."""


class QGibbsError(Exception):
    """Base class for library errors."""


class ContractError(QGibbsError, ValueError):
    """Arguments violate an operation's preconditions (shapes, kinds, spins)."""


class DomainError(QGibbsError, ValueError):
    """A physical parameter lies outside the admissible range."""


class CapacityError(QGibbsError):
    """The requested basis or matrix exceeds a configured size cap."""


class NumericalError(QGibbsError, ArithmeticError):
    """Overflow, non-convergence or step-size underflow."""


class UnsupportedModelError(ContractError):
    """The model does not belong to the class an engine can handle."""


class ConfigError(QGibbsError):
    """Invalid experiment configuration."""
