"""Exception hierarchy shared by every module."""

from __future__ import annotations


class QCausalError(Exception):
    """Base class for all library errors."""


class SignatureMismatchError(QCausalError):
    """Operator wires do not match what an operation expects."""


class DimensionError(QCausalError):
    """Two wires with the same label disagree on dimension, or a matrix has the wrong size."""


class PreconditionError(QCausalError):
    """An input violates a documented precondition (non-PSD, non-commuting, overlapping sets...)."""


class DegeneracyError(QCausalError):
    """A numerical decomposition could not be resolved within tolerance."""


class ConstructionError(QCausalError):
    """A constructive routine produced an object that failed its verification step."""


class ConsistencyError(QCausalError):
    """Two independent routes to the same verdict disagree."""


class UnsupportedQueryError(QCausalError):
    """The query needs information that was not supplied."""


class InputError(QCausalError):
    """A file or argument is malformed."""
