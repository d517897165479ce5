r"""Integer-order Bessel functions of the first kind.

The lattice propagator only ever needs :math:`J_n(x)` for integer
:math:`n \ge 0` and real :math:`x \ge 0`, usually for a whole block of
orders or for many arguments at once.  Two evaluation routes are used:

* ``x <= 1``: the ascending series

  .. math::

     J_n(x) = \sum_{k\ge 0} \frac{(-1)^k (x/2)^{2k+n}}{k!\,(k+n)!},

  summed for all requested orders simultaneously.

* ``x > 1``: Miller's downward recurrence
  :math:`J_{n-1} = (2n/x) J_n - J_{n+1}` started well above both the
  highest requested order and ``x``, normalised with the sum rule
  :math:`J_0 + 2\sum_{k\ge1} J_{2k} = 1`.

Both routes deliver small relative error even deep in the decaying tail
(``n >> x``), which matters because first-detection probabilities from
distant sites are products of such tiny values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputDomainError

__all__ = ["BesselRow", "bessel_j", "bessel_row", "bessel_table", "start_order"]

_SERIES_MAX_X = 1.0
_SERIES_TERMS = 30
_RESCALE_AT = 1e250


@dataclass(frozen=True)
class BesselRow:
    """Values ``J_0(x) .. J_{n_max}(x)`` for a single argument."""

    x: float
    values: np.ndarray

    @property
    def n_max(self) -> int:
        return len(self.values) - 1

    def __getitem__(self, n: int) -> float:
        return float(self.values[n])

    def __len__(self) -> int:
        return len(self.values)


def start_order(n_max: int, x: float) -> int:
    """Order at which the downward recurrence is seeded."""
    return max(n_max, math.ceil(x)) + max(20, math.ceil(10.0 * x ** (1.0 / 3.0)))


def _check_order(n) -> int:
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
        raise InputDomainError(f"Bessel order must be an integer, got {n!r}")
    if n < 0:
        raise InputDomainError(f"Bessel order must be nonnegative, got {n}")
    return int(n)


def _check_args(x) -> np.ndarray:
    xs = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(xs)):
        raise InputDomainError("Bessel argument must be finite")
    if np.any(xs < 0):
        raise InputDomainError("Bessel argument must be nonnegative")
    return xs


def _series(n_max: int, xs: np.ndarray) -> np.ndarray:
    # rows: arguments, columns: orders
    half = xs[:, None] / 2.0
    orders = np.arange(n_max + 1, dtype=float)[None, :]
    lead = np.ones((len(xs), n_max + 1))
    if n_max > 0:
        lead[:, 1:] = np.cumprod(np.broadcast_to(half, (len(xs), n_max)) / orders[:, 1:], axis=1)
    y = -(half**2)
    term = lead.copy()
    total = lead.copy()
    for k in range(1, _SERIES_TERMS):
        term = term * y / (k * (orders + k))
        total += term
    return total


def _miller(n_max: int, xs: np.ndarray) -> np.ndarray:
    """Downward recurrence for an ascending-sorted argument array ``xs > 0``."""
    m = len(xs)
    starts = np.array([start_order(n_max, float(x)) for x in xs])
    top = int(starts.max())
    out = np.zeros((m, n_max + 1))
    upper = np.zeros(m)  # J_{n+1}
    cur = np.zeros(m)  # J_n
    norm = np.zeros(m)
    # arguments are sorted, so starts are non-decreasing and the active set is a suffix
    for n in range(top, -1, -1):
        lo = int(np.searchsorted(starts, n, side="left"))
        seed = starts[lo:] == n
        if np.any(seed):
            cur[lo:][seed] = 1e-300
            upper[lo:][seed] = 0.0
        if n <= n_max:
            out[lo:, n] = cur[lo:]
        if n == 0:
            norm[lo:] += cur[lo:]
            break
        if n % 2 == 0:
            norm[lo:] += 2.0 * cur[lo:]
        lower = (2.0 * n / xs[lo:]) * cur[lo:] - upper[lo:]
        upper[lo:] = cur[lo:]
        cur[lo:] = lower
        big = np.abs(lower) > _RESCALE_AT
        if np.any(big):
            idx = np.nonzero(big)[0] + lo
            cur[idx] /= _RESCALE_AT
            upper[idx] /= _RESCALE_AT
            norm[idx] /= _RESCALE_AT
            out[idx, :] /= _RESCALE_AT
    return out / norm[:, None]


def _miller_scalar(n_max: int, x: float) -> np.ndarray:
    """Same recurrence as ``_miller`` for one argument, on plain floats."""
    out = [0.0] * (n_max + 1)
    upper, cur, norm = 0.0, 1e-300, 0.0
    for n in range(start_order(n_max, x), 0, -1):
        if n <= n_max:
            out[n] = cur
        if n % 2 == 0:
            norm += 2.0 * cur
        upper, cur = cur, (2.0 * n / x) * cur - upper
        if abs(cur) > _RESCALE_AT:
            cur /= _RESCALE_AT
            upper /= _RESCALE_AT
            norm /= _RESCALE_AT
            out = [v / _RESCALE_AT for v in out]
    out[0] = cur
    norm += cur
    return np.array(out) / norm


def bessel_table(n_max: int, x) -> np.ndarray:
    """``J_n(x_i)`` for ``n = 0..n_max`` and every argument ``x_i``.

    Returns an array of shape ``(len(x), n_max + 1)``; a scalar ``x`` is
    treated as a one-element array.
    """
    n_max = _check_order(n_max)
    xs = np.atleast_1d(_check_args(x)).ravel()
    table = np.zeros((len(xs), n_max + 1))
    zero = xs == 0.0
    table[zero, 0] = 1.0
    small = (~zero) & (xs <= _SERIES_MAX_X)
    if np.any(small):
        table[small] = _series(n_max, xs[small])
    large = np.nonzero(xs > _SERIES_MAX_X)[0]
    if len(large) == 1:
        table[large[0]] = _miller_scalar(n_max, float(xs[large[0]]))
    elif len(large):
        order = large[np.argsort(xs[large], kind="stable")]
        table[order] = _miller(n_max, xs[order])
    return table


def bessel_row(n_max: int, x: float) -> BesselRow:
    """All orders ``0..n_max`` at one argument, computed in a single sweep."""
    n_max = _check_order(n_max)
    xv = float(_check_args(x))
    return BesselRow(x=xv, values=bessel_table(n_max, xv)[0])


def bessel_j(n: int, x: float) -> float:
    """``J_n(x)`` for integer ``n >= 0`` and real ``x >= 0``."""
    n = _check_order(n)
    xv = float(_check_args(x))
    return float(bessel_table(n, xv)[0, n])
