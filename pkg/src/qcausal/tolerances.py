"""Numerical tolerances used across the library.

Every check reads its thresholds from :func:`current`, so callers can tighten or
relax them for a block of code with :func:`override` without threading a
parameter through every call.
"""

from __future__ import annotations

import contextlib
import contextvars
import dataclasses
from typing import Iterator


@dataclasses.dataclass(frozen=True)
class Tolerances:
    herm: float = 1e-9  # Frobenius-relative hermiticity / PSD slack
    tp: float = 1e-9  # trace preservation and normalization of channels
    num: float = 1e-7  # derived quantities: commutators, reconstructions
    eig: float = 1e-10  # eigenvalues below this are treated as zero
    alg: float = 1e-8  # rank decisions in algebra generation
    prob: float = 1e-10  # classical probability equalities
    cmi_classical: float = 1e-9  # bits
    cmi_quantum: float = 1e-7  # bits
    rank: float = 1e-8  # s2 <= rank * s1 counts as rank one
    sig: float = 1e-8  # signalling test
    dilate: float = 1e-7  # dilation reconstruction


_DEFAULT = Tolerances()
_current: contextvars.ContextVar[Tolerances] = contextvars.ContextVar(
    "qcausal_tolerances", default=_DEFAULT
)


def current() -> Tolerances:
    return _current.get()


@contextlib.contextmanager
def override(**changes: float) -> Iterator[Tolerances]:
    """Temporarily replace some tolerance fields."""
    new = dataclasses.replace(_current.get(), **changes)
    token = _current.set(new)
    try:
        yield new
    finally:
        _current.reset(token)
