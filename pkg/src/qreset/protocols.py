r"""Restart protocols and the first-detection kernel under resetting.

Every ``r`` measurements the particle is put back on the lattice.  Three
rules for choosing the new site are supported:

``IPR``
    back to the initial site ``x0``;
``MPR(p)``
    to one of the two most probable sites ``j +/- Delta`` of the current
    reset site ``j``, right with probability ``p``;
``AdaptiveMPR(p_I, p_F, R_c)``
    as MPR, with right-probability ``p_I`` for the first ``R_c`` resets
    and ``p_F`` afterwards.

After ``R`` resets the reset site is ``x0 + (R - 2l) Delta`` where ``l`` is
the number of left hops, so its law is binomial (or a convolution of two
binomials for the adaptive rule).  The measurement index decomposes as
``n = r R + n~`` with ``1 <= n~ <= r`` and the kernel is

.. math::

    F^r_n = \prod_{i=0}^{R-1} \bigl[1 - \bar P_i\bigr]\; \bar F_R(\tilde n),
    \qquad
    \bar F_R(\tilde n) = \sum_l w_R(l)\, |\phi_{\tilde n}^{x_0 + (R-2l)\Delta}|^2,

where ``P_i`` is the window detection probability averaged with the same
weights.  Weights are evaluated in log space and entries below
``WEIGHT_FLOOR`` are dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from .detection import AmplitudeCache, DetectionSeries, default_cache
from .errors import ParameterError
from .propagation import LatticeConfig, jstar_support, peak_offset

__all__ = [
    "IPR",
    "MPR",
    "AdaptiveMPR",
    "JStarDistribution",
    "RestartKernel",
    "RestartSchedule",
    "analytic_moments",
    "averaged_first_detection",
    "fn_under_restart",
    "jstar_distribution",
    "jstar_moments",
    "make_schedule",
    "rc_default",
    "series_under_restart",
]

WEIGHT_FLOOR = 1e-16
CHUNK = 4096


def _check_prob(name: str, p: float):
    if not (0.0 <= p <= 1.0):
        raise ParameterError(f"{name} must lie in [0, 1], got {p}")


@dataclass(frozen=True)
class IPR:
    name = "ipr"


@dataclass(frozen=True)
class MPR:
    p: float = 0.5
    name = "mpr"

    def __post_init__(self):
        _check_prob("p", self.p)


@dataclass(frozen=True)
class AdaptiveMPR:
    p_I: float = 0.6
    p_F: float = 0.5
    R_c: int | str = "auto"
    name = "ampr"

    def __post_init__(self):
        _check_prob("p_I", self.p_I)
        _check_prob("p_F", self.p_F)
        if self.R_c == "auto":
            if self.p_I <= 0.5:
                raise ParameterError("R_c=auto needs p_I > 0.5: drift must point toward detector")
        elif isinstance(self.R_c, bool) or not isinstance(self.R_c, (int, np.integer)) or self.R_c < 0:
            raise ParameterError(f"R_c must be a nonnegative integer or 'auto', got {self.R_c!r}")


Protocol = IPR | MPR | AdaptiveMPR


def rc_default(delta: int, delta_offset: int, p_I: float) -> int:
    """Number of biased resets that carries the mean reset site onto the detector.

    Nearest integer of ``delta / (delta_offset (2 p_I - 1))``, halves
    rounded up.  Never below 1.
    """
    if p_I <= 0.5:
        raise ParameterError("p_I must exceed 0.5: drift must point toward detector")
    if delta_offset < 1:
        raise ParameterError("delta_offset must be >= 1 to define R_c")
    if delta <= 0:
        raise ParameterError("detector must lie to the right of the start site")
    return max(1, math.floor(delta / (delta_offset * (2.0 * p_I - 1.0)) + 0.5))


@dataclass(frozen=True)
class RestartSchedule:
    """Reset every ``r`` measurements with hop length ``delta_offset``.

    ``R_c`` holds the resolved switch index for the adaptive rule and is
    ``None`` otherwise.
    """

    r: int
    delta_offset: int
    R_c: int | None = None

    def __post_init__(self):
        if self.r < 1:
            raise ParameterError(f"r must be a positive integer, got {self.r}")
        if self.delta_offset < 0:
            raise ParameterError("delta_offset must be nonnegative")

    def split(self, n: int) -> tuple[int, int]:
        """``(R, n~)`` with ``n = r R + n~`` and ``1 <= n~ <= r``."""
        R = (n - 1) // self.r
        return R, n - self.r * R


def make_schedule(proto: Protocol, r: int, cfg: LatticeConfig) -> RestartSchedule:
    """Schedule for ``proto`` with hop length from the free-evolution peak at ``r tau``."""
    if r < 1:
        raise ParameterError(f"r must be a positive integer, got {r}")
    dlt = peak_offset(r * cfg.tau).delta_offset
    R_c = None
    if isinstance(proto, AdaptiveMPR):
        if proto.R_c == "auto":
            R_c = rc_default(cfg.delta - cfg.x0, dlt, proto.p_I) if dlt > 0 else 0
        else:
            R_c = int(proto.R_c)
    return RestartSchedule(r=r, delta_offset=dlt, R_c=R_c)


def _log_binom(R, l, p_right):
    """log of C(R, l) p^(R-l) (1-p)^l; ``-inf`` outside ``0 <= l <= R``."""
    R = np.asarray(R, dtype=float)
    l = np.asarray(l, dtype=float)
    ok = (l >= 0) & (l <= R)
    ls = np.where(ok, l, 0.0)
    Rs = np.broadcast_to(R, ls.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = gammaln(Rs + 1) - gammaln(ls + 1) - gammaln(Rs - ls + 1) + xlogy(Rs - ls, p_right) + xlog1py(ls, -p_right)
    return np.where(ok, out, -np.inf)


def lefts_weights(proto: Protocol, sched: RestartSchedule, R, l) -> np.ndarray:
    """Probability of exactly ``l`` left hops among the first ``R`` resets.

    ``R`` and ``l`` broadcast against each other.  IPR and zero-offset
    schedules put all weight on ``l = 0`` (the reset site never moves).
    """
    R = np.asarray(R)
    l = np.asarray(l)
    if isinstance(proto, IPR) or sched.delta_offset == 0:
        return np.where(l == 0, 1.0, 0.0) * np.ones(np.broadcast(R, l).shape)
    if isinstance(proto, MPR):
        return np.exp(_log_binom(R, l, proto.p))
    Rc = sched.R_c
    R_b, l_b = np.broadcast_arrays(R, l)
    first = np.exp(_log_binom(np.minimum(R_b, Rc), l_b, proto.p_I))
    late = R_b > Rc
    if not np.any(late):
        return first
    # two-phase convolution over the left-hop count k of the first R_c resets
    k = np.arange(Rc + 1)
    head = np.exp(_log_binom(Rc, k, proto.p_I))
    keep = head > 0
    k, head = k[keep], head[keep]
    Rl = R_b[late][:, None]
    ll = l_b[late][:, None]
    tail = np.exp(_log_binom(Rl - Rc, ll - k[None, :], proto.p_F))
    out = first.copy()
    out[late] = tail @ head
    return out


@dataclass(frozen=True)
class JStarDistribution:
    """Law of the reset site after ``R`` resets, aligned with ``jstar_support``."""

    R: int
    offsets: list[int]
    weights: np.ndarray


def jstar_distribution(proto: Protocol, sched: RestartSchedule, R: int, x0: int = 0) -> JStarDistribution:
    sites = jstar_support(R, sched.delta_offset, x0)
    if isinstance(proto, IPR) or sched.delta_offset == 0:
        return JStarDistribution(R=R, offsets=[x0], weights=np.ones(1))
    w = lefts_weights(proto, sched, R, np.arange(R + 1))
    return JStarDistribution(R=R, offsets=sites, weights=w)


def jstar_moments(dist: JStarDistribution, x0: int = 0) -> tuple[float, float]:
    """Mean displacement from ``x0`` and variance of the reset site."""
    pos = np.asarray(dist.offsets, dtype=float) - x0
    w = dist.weights
    mean = float(np.dot(w, pos))
    var = float(np.dot(w, (pos - mean) ** 2))
    return mean, var


def analytic_moments(proto: Protocol, sched: RestartSchedule, R: int) -> tuple[float, float]:
    """Random-walk mean ``R D (2p-1)`` and variance ``4 R D^2 p (1-p)``, per phase."""
    D = sched.delta_offset
    if isinstance(proto, IPR) or D == 0:
        return 0.0, 0.0
    if isinstance(proto, MPR):
        p = proto.p
        return R * D * (2 * p - 1), 4 * R * D**2 * p * (1 - p)
    a = min(R, sched.R_c)
    b = R - a
    mean = D * (a * (2 * proto.p_I - 1) + b * (2 * proto.p_F - 1))
    var = 4 * D**2 * (a * proto.p_I * (1 - proto.p_I) + b * proto.p_F * (1 - proto.p_F))
    return mean, var


def _drift_after(proto: Protocol, sched: RestartSchedule, R: int) -> float:
    if isinstance(proto, MPR):
        return 2 * proto.p - 1
    if isinstance(proto, AdaptiveMPR):
        return 2 * (proto.p_I if R < sched.R_c else proto.p_F) - 1
    return 0.0


def averaged_first_detection(
    proto: Protocol,
    sched: RestartSchedule,
    R: int,
    n_window: int,
    cfg: LatticeConfig,
    cache: AmplitudeCache | None = None,
) -> float:
    """``|phi_{n~}|^2`` averaged over the reset-site law after ``R`` resets."""
    if not 1 <= n_window <= sched.r:
        raise ParameterError(f"n_window must lie in [1, {sched.r}], got {n_window}")
    cache = cache or default_cache
    dist = jstar_distribution(proto, sched, R, cfg.x0)
    total = 0.0
    for site, w in zip(dist.offsets, dist.weights):
        if w < WEIGHT_FLOOR:
            continue
        amp = cache.real_series(abs(cfg.delta - site), cfg.tau, n_window)[n_window - 1]
        total += w * amp * amp
    return total


class RestartKernel:
    """Segment-level view of a protocol: reset-site law folded onto detector distance.

    Distances beyond ``2 r tau + 60`` are ignored: the Bessel tail makes
    their window detection probability below ``1e-30``.
    """

    def __init__(self, proto: Protocol, sched: RestartSchedule, cfg: LatticeConfig, cache: AmplitudeCache | None = None):
        self.proto = proto
        self.sched = sched
        self.cfg = cfg
        self.r = sched.r
        self.d_max = math.ceil(2.0 * sched.r * cfg.tau) + 60
        cache = cache or default_cache
        self.F_table = cache.probability_table(range(self.d_max + 1), cfg.tau, self.r)
        self.P_d = self.F_table.sum(axis=1)
        self.M_d = self.F_table @ np.arange(1, self.r + 1, dtype=float)
        self.stationary = isinstance(proto, IPR) or sched.delta_offset == 0
        self.d0 = abs(cfg.delta - cfg.x0)

    def distance_weights(self, R0: int, R1: int) -> np.ndarray:
        """Array ``W[R - R0, d]``: weight of reset sites at distance ``d`` after ``R`` resets."""
        n_seg = R1 - R0
        W = np.zeros((n_seg, self.d_max + 1))
        if n_seg <= 0:
            return W
        if self.stationary:
            if self.d0 <= self.d_max:
                W[:, self.d0] = 1.0
            return W
        D = self.sched.delta_offset
        x0, delta = self.cfg.x0, self.cfg.delta
        R = np.arange(R0, R1)
        c = x0 + R * D - delta  # site - delta = c - 2 l D
        l_lo = np.maximum(0, np.ceil((c - self.d_max) / (2 * D)).astype(int))
        width = self.d_max // D + 2
        l = l_lo[:, None] + np.arange(width)[None, :]
        diff = c[:, None] - 2 * l * D
        valid = (l <= R[:, None]) & (np.abs(diff) <= self.d_max)
        if not np.any(valid):
            return W
        rows = np.broadcast_to(np.arange(n_seg)[:, None], l.shape)[valid]
        Rv = np.broadcast_to(R[:, None], l.shape)[valid]
        w = lefts_weights(self.proto, self.sched, Rv, l[valid])
        w = np.where(w < WEIGHT_FLOOR, 0.0, w)
        dist = np.abs(diff[valid])
        flat = np.bincount(rows * (self.d_max + 1) + dist, weights=w, minlength=n_seg * (self.d_max + 1))
        return flat.reshape(n_seg, self.d_max + 1)

    def segment_moments(self, R0: int, R1: int) -> tuple[np.ndarray, np.ndarray]:
        """Averaged window detection probability and first moment per segment."""
        W = self.distance_weights(R0, R1)
        return W @ self.P_d, W @ self.M_d

    def window_probabilities(self, R0: int, R1: int) -> np.ndarray:
        """``Fbar[R - R0, n~ - 1]`` for every segment in ``[R0, R1)``."""
        return self.distance_weights(R0, R1) @ self.F_table

    def has_escaped(self, R: int) -> bool:
        """True once the reset-site law has drifted out of reach of the detector for good."""
        if self.stationary:
            return self.d0 > self.d_max
        drift = _drift_after(self.proto, self.sched, R)
        if drift == 0.0:
            return False
        mean, var = analytic_moments(self.proto, self.sched, R)
        gap = self.cfg.x0 + mean - self.cfg.delta
        return gap * drift > 0 and abs(gap) > self.d_max + 9.0 * math.sqrt(var) + self.sched.delta_offset


def fn_under_restart(proto: Protocol, sched: RestartSchedule, cfg: LatticeConfig, n: int, cache: AmplitudeCache | None = None) -> float:
    """``F_n`` under resetting, evaluated term by term from the averaged kernels."""
    if n < 1:
        raise ParameterError(f"measurement index must be >= 1, got {n}")
    R, nt = sched.split(n)
    surv = 1.0
    for i in range(R):
        P_i = sum(averaged_first_detection(proto, sched, i, k, cfg, cache) for k in range(1, sched.r + 1))
        surv *= 1.0 - P_i
    return surv * averaged_first_detection(proto, sched, R, nt, cfg, cache)


def survival_prefix(P: np.ndarray) -> np.ndarray:
    """``G[R] = prod_{i<R} (1 - P_i)`` for ``R = 0..len(P)``, accumulated in log space."""
    with np.errstate(divide="ignore"):
        logs = np.log1p(-np.minimum(P, 1.0))
    return np.exp(np.concatenate(([0.0], np.cumsum(logs))))


def series_under_restart(
    proto: Protocol, sched: RestartSchedule, cfg: LatticeConfig, N: int, cache: AmplitudeCache | None = None
) -> DetectionSeries:
    """``F_n, P_det(n), S_n`` for ``n = 1..N`` under resetting."""
    if N < 1:
        raise ParameterError(f"series length must be >= 1, got {N}")
    kernel = RestartKernel(proto, sched, cfg, cache)
    n_seg = -(-N // sched.r)
    blocks = []
    for R0 in range(0, n_seg, CHUNK):
        blocks.append(kernel.window_probabilities(R0, min(n_seg, R0 + CHUNK)))
    Fbar = np.concatenate(blocks)
    G = survival_prefix(Fbar.sum(axis=1))[:n_seg]
    F = (G[:, None] * Fbar).ravel()[:N]
    return DetectionSeries.from_probabilities(F)
