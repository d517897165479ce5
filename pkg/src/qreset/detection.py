r"""Stroboscopic first detection without resetting.

A projective measurement at the detector site ``delta`` every ``tau``
time units turns the free propagator into a renewal recursion for the
first-detection amplitudes,

.. math::

    \phi_n = i^{d} J_d(2n\tau) - \sum_{m=1}^{n-1} J_0\bigl(2(n-m)\tau\bigr)\,\phi_m,
    \qquad d = |\delta - x_{\rm start}|,

with first-detection probabilities ``F_n = |phi_n|**2``.  Because the
kernel is real, every ``phi_n`` is ``i**d`` times a real number; the
recursion is run on the real part and the phase attached afterwards.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import InputDomainError, SeriesLengthError
from .propagation import LatticeConfig, phase
from .specfun import bessel_table

__all__ = [
    "AmplitudeCache",
    "AmplitudeSeries",
    "DetectionSeries",
    "default_cache",
    "detection_amplitudes",
    "detection_prob_window",
    "detection_series",
]


@dataclass(frozen=True)
class AmplitudeSeries:
    start_distance: int
    tau: float
    phi: np.ndarray

    def __len__(self) -> int:
        return len(self.phi)

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.phi) ** 2


@dataclass(frozen=True)
class DetectionSeries:
    """First-detection probabilities with their cumulative and survival sums."""

    F: np.ndarray
    P_det: np.ndarray
    S: np.ndarray

    def __len__(self) -> int:
        return len(self.F)

    @classmethod
    def from_probabilities(cls, F) -> "DetectionSeries":
        F = np.asarray(F, dtype=float)
        P = np.cumsum(F)
        return cls(F=F, P_det=P, S=1.0 - P)


def _real_amplitudes(d: int, tau: float, N: int) -> np.ndarray:
    x = 2.0 * tau * np.arange(1, N + 1)
    table = bessel_table(d, x)
    source = table[:, d]
    kernel = table[:, 0]
    out = np.empty(N)
    for i in range(N):
        if i == 0:
            out[0] = source[0]
        else:
            out[i] = source[i] - np.dot(kernel[i - 1 :: -1], out[:i])
    return out


class AmplitudeCache:
    """Real amplitude series keyed by ``(tau, distance)``.

    Reads are lock free; computing and inserting a missing or too short
    series happens under a lock so each key is built once.
    """

    def __init__(self):
        self._store: dict[tuple[float, int], np.ndarray] = {}
        self._lock = threading.Lock()

    def real_series(self, d: int, tau: float, N: int) -> np.ndarray:
        key = (float(tau), int(d))
        got = self._store.get(key)
        if got is not None and len(got) >= N:
            return got[:N]
        with self._lock:
            got = self._store.get(key)
            if got is None or len(got) < N:
                # grow geometrically so repeated extensions stay amortised
                size = N if got is None else max(N, 2 * len(got))
                got = _real_amplitudes(int(d), float(tau), size)
                got.setflags(write=False)
                self._store[key] = got
        return got[:N]

    def probability_table(self, distances, tau: float, N: int) -> np.ndarray:
        """``F[k, n-1]`` for every distance ``distances[k]`` and ``n = 1..N``."""
        return np.array([self.real_series(d, tau, N) ** 2 for d in distances]).reshape(len(distances), N)

    def clear(self):
        with self._lock:
            self._store.clear()

    def __len__(self) -> int:
        return len(self._store)


default_cache = AmplitudeCache()


def detection_amplitudes(start: int, cfg: LatticeConfig, N: int, cache: AmplitudeCache | None = None) -> AmplitudeSeries:
    """First-detection amplitudes ``phi_1..phi_N`` for a particle released at ``start``."""
    if N <= 0:
        raise InputDomainError(f"series length must be >= 1, got {N}")
    d = abs(cfg.delta - start)
    real = (cache or default_cache).real_series(d, cfg.tau, N)
    return AmplitudeSeries(start_distance=d, tau=cfg.tau, phi=phase(d) * real)


def detection_series(phi: AmplitudeSeries) -> DetectionSeries:
    return DetectionSeries.from_probabilities(phi.probabilities)


def detection_prob_window(series: DetectionSeries, r: int) -> float:
    """Probability of detection within the first ``r`` measurements."""
    if r < 1:
        raise InputDomainError(f"window must be >= 1, got {r}")
    if r > len(series):
        raise SeriesLengthError(f"window {r} exceeds series length {len(series)}")
    return float(series.P_det[r - 1])
