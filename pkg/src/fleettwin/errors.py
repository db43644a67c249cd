"""Exception types shared across the simulator."""


class FleetTwinError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(FleetTwinError, ValueError):
    pass


class NoRouteError(FleetTwinError):
    pass


class OffPathError(FleetTwinError):
    """A pose lies outside the corridor around a path."""

    def __init__(self, message, distance=None):
        super().__init__(message)
        self.distance = distance


class MapValidationError(FleetTwinError, ValueError):
    """Map document violates a road-graph invariant.

    ``element`` names the offending node/edge id (or the document field).
    """

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class ConfigError(FleetTwinError, ValueError):
    pass


class InvariantError(FleetTwinError, AssertionError):
    """An internal simulation invariant was breached at runtime."""
