"""Exception types shared across the package.

Everything raised on purpose derives from SteeringError so callers can
distinguish "this run was misconfigured or hit a modelled failure" from a
genuine bug. The CLI maps ConfigError to exit code 2 and every other
SteeringError to exit code 3.
"""


class SteeringError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SteeringError):
    """Invalid experiment configuration: unknown key, bad type, or bad value."""


class NonMonotoneScheduleError(SteeringError):
    """Time grid or derived noise levels are not monotone where required."""


class ScheduleInconsistencyError(SteeringError):
    """Kernel coefficients would need the square root of a significantly
    negative quantity, meaning the supplied signal levels are inconsistent."""


class DegenerateKernelError(SteeringError):
    """A per-step transition standard deviation is zero where strict
    positivity is required (corrected steps, kappa-sigma diagnostics)."""


class DegenerateTransitionError(SteeringError):
    """Operation undefined for a single zero-variance transition."""


class UnsupportedOperationError(SteeringError):
    """Capability not available for this model family, h kind, or dimension."""


class RewardBoundError(SteeringError):
    """A reward evaluation exceeded its declared upper bound."""


class LowAcceptanceError(SteeringError):
    """Rejection sampling acceptance rate fell below the configured floor."""
