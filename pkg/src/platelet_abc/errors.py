"""Exception types shared across the package."""


class PlateletABCError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PlateletABCError, ValueError):
    """Invalid model parameters or simulation configuration.

    Raised at construction time, before any stepping happens (e.g. an
    unstable diffusion discretization or a malformed prior box).
    """


class DataFormatError(PlateletABCError, ValueError):
    """Malformed input data (CSV/JSON parsing, schema violations)."""


class SimulationError(PlateletABCError, RuntimeError):
    """A numeric invariant was violated while stepping a simulation."""


class InferenceError(PlateletABCError, RuntimeError):
    """An ABC run cannot proceed (dead acceptance rate, failed tasks...)."""
