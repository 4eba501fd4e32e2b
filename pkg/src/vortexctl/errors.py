"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class VortexError(Exception):
    """Base class for every error raised by vortexctl."""


# kernel
class ZeroArgument(VortexError, ValueError):
    pass


class WidthTooLarge(VortexError, ValueError):
    pass


# dynamics
class CollisionError(VortexError):
    """Two points (vortex/vortex or vortex/control) came closer than the guard radius."""

    def __init__(self, message: str, *, pair: tuple[str, str] | None = None,
                 time: float | None = None, distance: float | None = None):
        super().__init__(message)
        self.pair = pair
        self.time = time
        self.distance = distance


class StepFailure(VortexError):
    pass


# curves
class InfeasibleClearance(VortexError):
    pass


class SpeedFloorUnachievable(VortexError):
    pass


class BlockedPath(VortexError):
    pass


class OverlappingObstacles(VortexError):
    pass


class DiscontinuousJoin(VortexError, ValueError):
    pass


# inversion
class ZeroVelocity(VortexError, ValueError):
    pass


class Coincidence(VortexError, ValueError):
    pass


class ContractionViolated(VortexError):
    pass


class DegenerateContext(VortexError):
    pass


class NoConvergence(VortexError):
    pass


class CalibrationFailed(VortexError):
    pass


# synthesis
class DTooLarge(VortexError, ValueError):
    pass


class MembershipViolated(VortexError, ValueError):
    pass


class ContainmentViolated(VortexError):
    pass


# reduction
class HypothesisHViolated(VortexError):
    def __init__(self, message: str, *, time: float | None = None,
                 distance: float | None = None):
        super().__init__(message)
        self.time = time
        self.distance = distance


class ShootingDiverged(VortexError):
    pass


# cli
class ConfigError(VortexError, ValueError):
    pass
