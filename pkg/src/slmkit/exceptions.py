"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class RoutingError(ConfigError):
    """Unknown language id presented to a router or bank."""


class ContractError(ValueError):
    """A caller violated an operation precondition (shape, role, ordering)."""


class InfeasibleAlignmentError(ValueError):
    """No valid blank-augmented alignment exists for the given label sequence."""


class ManifestError(ValueError):
    """Malformed manifest or sidecar file."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""
