"""Miscellaneous utilities."""

import functools

import numpy as np


class Named:
    """A named object.

    This class can be used to construct objects with a name that will be used
    for the string representation.
    """

    def __init__(self, name):
        """Construct a named object.

        Arguments:
            name: The name of this object.
        """
        self.name = name

    def __repr__(self):
        """Return the object's name."""
        return self.name


MISSING = Named("MISSING")


def keyword_decorator(deco):
    """Wrap a decorator to optionally takes keyword arguments."""

    @functools.wraps(deco)
    def new_deco(fn=None, **kwargs):
        if fn is None:

            @functools.wraps(deco)
            def newer_deco(fn):
                return deco(fn, **kwargs)

            return newer_deco
        else:
            return deco(fn, **kwargs)

    return new_deco


def make_rng(seed, *keys):
    """Return a Philox-backed generator for ``seed`` and optional sub-keys.

    The same ``(seed, *keys)`` always yields the same stream, on every
    platform, and distinct keys yield independent streams. Global numpy
    random state is never touched.
    """
    entropy = [int(seed), *(int(k) for k in keys)]
    if any(e < 0 for e in entropy):
        raise DomainError(f"Seeds must be nonnegative, got {entropy}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


class FfdvlcError(Exception):
    """Base class for every error raised by ffdvlc."""


class DomainError(FfdvlcError, ValueError):
    pass


class GeometryError(FfdvlcError, ValueError):
    pass


class ShapeError(FfdvlcError, ValueError):
    pass


class DegenerateImageError(FfdvlcError, ValueError):
    pass


class StatisticsError(FfdvlcError, ValueError):
    pass


class NonFiniteError(FfdvlcError, FloatingPointError):
    pass


class StateError(FfdvlcError, RuntimeError):
    pass


class FormatError(FfdvlcError, ValueError):
    pass


class NumericalError(FfdvlcError, ArithmeticError):
    pass


class TrainingDivergedError(FfdvlcError, FloatingPointError):
    pass


class ProtocolError(FfdvlcError, ValueError):
    pass


class ConfigError(FfdvlcError, ValueError):
    pass


class ArtifactMissingError(FfdvlcError, FileNotFoundError):
    pass


class IllConditionedWarning(UserWarning):
    pass


__all__ = [
    "MISSING",
    "Named",
    "keyword_decorator",
    "make_rng",
    "FfdvlcError",
    "DomainError",
    "GeometryError",
    "ShapeError",
    "DegenerateImageError",
    "StatisticsError",
    "NonFiniteError",
    "StateError",
    "FormatError",
    "NumericalError",
    "TrainingDivergedError",
    "ProtocolError",
    "ConfigError",
    "ArtifactMissingError",
    "IllConditionedWarning",
]
