"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input data violates the survival-record contract."""


class HorizonError(ValidationError):
    """An observed time lies beyond the configured horizon."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or inconsistent."""


class EmptySelectionError(RuntimeError):
    """The selection step accepted no model term.

    Usually a sign that the smoothing grid is too aggressive or the
    iteration budget too small.
    """
