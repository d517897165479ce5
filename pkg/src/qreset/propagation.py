r"""Free evolution of a single particle on the infinite tight-binding chain.

With nearest-neighbour hopping of unit strength the propagator is known in
closed form,

.. math::

    \langle j | e^{-iHt} | x_0 \rangle = i^{|j-x_0|} J_{|j-x_0|}(2t),

so no lattice array or boundary handling is needed.  The occupation
profile is symmetric about the start site and, after a short transient,
peaks at two mirror sites ``x0 +/- Delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InputDomainError
from .specfun import bessel_j, bessel_row

__all__ = [
    "LatticeConfig",
    "PeakOffset",
    "jstar_support",
    "occupation_probability",
    "peak_offset",
    "transition_amplitude",
]

PEAK_TIE_TOL = 1e-12
_PHASES = (1.0 + 0.0j, 1.0j, -1.0 + 0.0j, -1.0j)


@dataclass(frozen=True)
class LatticeConfig:
    """Measurement period, detector site, start site and series length."""

    tau: float = 0.25
    delta: int = 10
    x0: int = 0
    n_max: int = 10_000

    def __post_init__(self):
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise InputDomainError(f"tau must be positive and finite, got {self.tau}")
        if self.n_max < 1:
            raise InputDomainError(f"n_max must be >= 1, got {self.n_max}")

    @property
    def distance(self) -> int:
        return abs(self.delta - self.x0)


@dataclass(frozen=True)
class PeakOffset:
    """Most probable hop length ``delta_offset`` after free evolution for ``t_r``."""

    t_r: float
    delta_offset: int


def _check_time(t: float) -> float:
    t = float(t)
    if not math.isfinite(t):
        raise InputDomainError(f"time must be finite, got {t}")
    if t < 0:
        raise InputDomainError(f"time must be nonnegative, got {t}")
    return t


def phase(d: int) -> complex:
    """The factor ``i**d`` for integer ``d >= 0``, exact."""
    return _PHASES[d % 4]


def transition_amplitude(j: int, x0: int, t: float) -> complex:
    """Amplitude to find the particle at ``j`` a time ``t`` after leaving ``x0``."""
    t = _check_time(t)
    d = abs(j - x0)
    return phase(d) * bessel_j(d, 2.0 * t)


def occupation_probability(j: int, x0: int, t: float) -> float:
    t = _check_time(t)
    return bessel_j(abs(j - x0), 2.0 * t) ** 2


def peak_offset(t_r: float) -> PeakOffset:
    """Distance from the start site to the most probable site at time ``t_r``.

    Orders are scanned up to ``2 t_r + 60``.  A later order only wins if it
    beats the running maximum by more than ``PEAK_TIE_TOL``, so exact or
    near ties go to the smaller offset (``0`` at the J0/J1 crossing).
    """
    t_r = float(t_r)
    if not math.isfinite(t_r) or t_r <= 0:
        raise InputDomainError(f"restart interval must be positive, got {t_r}")
    x = 2.0 * t_r
    row = bessel_row(math.ceil(x) + 60, x).values
    best, best_val = 0, row[0] ** 2
    for n in range(1, len(row)):
        v = row[n] ** 2
        if v > best_val + PEAK_TIE_TOL:
            best, best_val = n, v
    return PeakOffset(t_r=t_r, delta_offset=best)


def jstar_support(R: int, delta_offset: int, x0: int = 0) -> list[int]:
    """Reset sites reachable after ``R`` hops of ``+/- delta_offset``, descending."""
    if delta_offset == 0:
        return [x0]
    return [x0 + (R - 2 * m) * delta_offset for m in range(R + 1)]
