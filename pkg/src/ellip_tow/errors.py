"""Exception hierarchy shared across the package."""

from __future__ import annotations


class EllipTowError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(EllipTowError, ValueError):
    """N or p outside the admissible range."""


class InfeasibleParamsError(EllipTowError, ValueError):
    """gamma lies outside the feasible interval of the requested branch."""


class SamplingRadiusError(EllipTowError, ValueError):
    """The shifted center lies outside the closed sampling ball."""


class ConstructionError(EllipTowError, ValueError):
    """A domain could not be built as requested."""


class SingularGradientError(EllipTowError, ArithmeticError):
    """A normalized operator was evaluated where the gradient vanishes."""


class OutOfRangeError(EllipTowError, ValueError):
    """A point lies outside the lattice box of a grid field."""


class ConfigurationError(EllipTowError, ValueError):
    """Inconsistent solver, strategy or experiment configuration."""


class MonotonicityError(EllipTowError, AssertionError):
    """The monotone iteration produced a decreasing iterate."""


class UnsupportedForGameError(EllipTowError, ValueError):
    """Parameters cannot drive the game (termination is not guaranteed)."""


class EstimationError(EllipTowError, RuntimeError):
    """No Monte Carlo run terminated, so no estimate exists."""
