"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input is outside the physical domain of an operation."""


class CapacityError(RuntimeError):
    """A sampled ensemble would exceed the configured maximum ion count."""


class IntegrationError(RuntimeError):
    """The Bloch integrator could not keep the state physical."""


class FitError(RuntimeError):
    """A fit could not be evaluated (malformed data, bad model name)."""


class ConfigError(ValueError):
    """A run configuration is malformed or incomplete."""
