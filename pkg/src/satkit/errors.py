"""Exception hierarchy shared by all satkit modules."""


class SatkitError(Exception):
    """Base class for all errors raised by satkit."""


class ConfigError(SatkitError):
    """Invalid configuration value (bad epsilon, batch size, fraction, ...)."""


class ShapeMismatchError(SatkitError):
    """Operands have incompatible shapes for the requested operation."""


class DomainError(SatkitError):
    """Input outside the mathematical domain of an operation (e.g. log of <= 0)."""


class NumericalError(SatkitError):
    """An operation produced a non-finite value; overflow is an error, never silent."""


class GraphError(SatkitError):
    """Misuse of the autodiff tape: non-scalar loss, detached graph, missing gradient."""


class DataError(SatkitError):
    """Malformed data file or dataset invariant violation."""


class GroupError(SatkitError):
    """No feasible neighbor group exists for an attack target selection."""


class ModelError(SatkitError):
    """Model serialization or compatibility failure (magic, version, fingerprint)."""
