"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Unknown preset name, malformed config key, or inconsistent run settings."""


class SingularityError(ValueError):
    """A kernel was evaluated at a point where it is undefined (x == y)."""


class SingularMatrixError(ValueError):
    """LU factorization hit a pivot below the numerical-singularity threshold."""
