"""Exception types shared across the package."""

from __future__ import annotations


class MkvError(Exception):
    """Base class for all package errors."""


class DomainError(MkvError, ValueError):
    """An argument lies outside the domain of an operation."""


class ModelStructureError(MkvError):
    """A model callback returned an array of the wrong shape or type.

    The ``function`` attribute names the offending callback.
    """

    def __init__(self, function: str, message: str):
        super().__init__(f"{function}: {message}")
        self.function = function


class PropagationError(MkvError, ArithmeticError):
    """A simulated state became non-finite.

    Carries the first offending particle index and the time at which the
    non-finite value appeared.
    """

    def __init__(self, particle: int, time: float, message: str = "non-finite state"):
        super().__init__(f"{message} (particle={particle}, t={time!r})")
        self.particle = particle
        self.time = time


class UnsupportedModelError(MkvError):
    """The operation needs closed forms that the given model does not have."""


class ConfigError(MkvError):
    """Schema violation in an experiment configuration; ``key`` is the dotted path."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class NonFiniteContrastError(MkvError, ArithmeticError):
    """The contrast evaluated to a non-finite value; ``point`` is where."""

    def __init__(self, point: tuple[float, float], value: float):
        super().__init__(f"non-finite contrast {value!r} at theta={point}")
        self.point = point
        self.value = value
