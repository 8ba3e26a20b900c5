"""Exception hierarchy. The CLI maps each branch to its own exit code."""


class SimulationError(Exception):
    """Base class for every error raised by spdcfid."""


class ConfigError(SimulationError, ValueError):
    """Invalid scenario configuration or malformed input file."""


class PhysicsError(SimulationError):
    """The requested physical situation has no valid answer."""


class WavelengthOutOfRange(PhysicsError, ValueError):
    pass


class IsotropicMaterialError(PhysicsError, ValueError):
    """Extraordinary quantities requested for a material without an optic axis."""


class NoPhaseMatching(PhysicsError):
    pass


class TotalInternalReflection(PhysicsError):
    pass


class RaySurfaceMiss(PhysicsError):
    pass


class SamplingError(PhysicsError):
    """Rejection sampling hit its iteration cap."""
