"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid or inconsistent configuration data."""


class DataMismatchError(Exception):
    """Artifacts that should align (cohorts, reports) do not."""
