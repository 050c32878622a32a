"""Runtime configuration."""

DEFAULT_PRECISION = 4


def precision_or_default(value=None):
    return DEFAULT_PRECISION if value is None else value
