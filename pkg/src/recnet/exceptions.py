class ConfigurationError(ValueError):
    """Shapes or settings that do not fit together."""


class PreconditionError(ValueError):
    """An operation was called outside the regime where it is defined."""


class FitFailure(RuntimeError):
    """Every optimization restart diverged."""
