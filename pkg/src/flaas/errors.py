"""Exception hierarchy shared across the service."""


class FlaasError(Exception):
    """Base class for all service errors."""


class ConfigurationError(FlaasError):
    """Invalid configuration value (bad dimensions, sizes, fractions, files)."""


class ContractError(FlaasError):
    """A caller violated an operation precondition (shape mismatch, empty batch)."""


class ProtocolError(FlaasError):
    """Client/server round protocol violated (closed round, unknown scope, no devices)."""


class PermissionDenied(FlaasError):
    """A cross-app exchange was attempted without a matching grant."""


class RegistryError(FlaasError):
    """Unknown or duplicate app/device registration."""


class NotFoundError(FlaasError):
    """Referenced job, scope, or round does not exist."""


class SkipRound(FlaasError):
    """Signal: the device has nothing to contribute this round and abstains."""
