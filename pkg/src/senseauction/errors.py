"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised for invalid world, sensing, or scenario configuration."""


class GeometryError(ValueError):
    """Raised when a point falls outside the grid extent."""


class ContractError(ValueError):
    """Raised when a caller violates an operation's precondition."""
