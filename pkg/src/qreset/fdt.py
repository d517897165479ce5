r"""Mean first-detection time and the search for optimal restart rates.

The mean first-detection time is ``tau * sum_n n F^r_n``.  For initial
position resetting the sum has the closed form

.. math::

    \langle t_f \rangle_r = \tau\Bigl[\frac{r(1-P)}{P} + \sum_{\tilde n=1}^{r}\frac{\tilde n F_{\tilde n}}{P}\Bigr],
    \qquad P = \sum_{\tilde n=1}^{r} F_{\tilde n},

(the overall ``tau`` converts measurement counts to time).  The other
protocols are handled by truncating the sum at horizons ``n_c``, fitting
a polynomial in ``1/n_c`` and reading off its value at ``1/n_c = 0``.

Partial sums are accumulated one reset segment at a time, so a horizon
costs ``O(n_c / r)`` and, for IPR, ``O(1)`` through geometric series.
When no grid is given the horizons are placed relative to the decay of
the survival probability (see :func:`default_nc_grid`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre

from .detection import AmplitudeCache, DetectionSeries, default_cache, detection_amplitudes, detection_series
from .errors import DivergentFdtError, FitError, ParameterError
from .parallel import parallel_map
from .propagation import LatticeConfig
from .protocols import CHUNK, IPR, Protocol, RestartKernel, RestartSchedule, make_schedule

__all__ = [
    "DeltaSweep",
    "FdtEstimate",
    "PartialSums",
    "SweepResult",
    "TauSweep",
    "default_nc_grid",
    "extrapolate_fdt",
    "fdt_vs_delta",
    "fdt_vs_tau",
    "local_minima",
    "mean_fdt",
    "mean_fdt_ipr_closed",
    "mean_fdt_truncated",
    "optimal_restart",
    "truncation_table",
]

FIT_DEGREE = 10
STABILITY_DEGREES = (8, 10, 12)
STABILITY_RTOL = 0.01
LOW_SURVIVAL = 1e-3
GRID_POINTS = 20
GRID_SPAN = 20.0
MIN_HORIZON = 200
MAX_SEGMENTS = 1 << 21
_DIRECT_SEGMENTS = 1 << 20


@dataclass(frozen=True)
class FdtEstimate:
    """Mean first-detection time in time units, with provenance of the number."""

    value: float
    method: str  # "closed-form" | "truncated" | "extrapolated"
    nc_grid: tuple[int, ...] = ()
    fit_degree: int | None = None
    stability: float = 0.0

    @property
    def stable(self) -> bool:
        return self.stability <= STABILITY_RTOL * abs(self.value)


def mean_fdt_ipr_closed(series: DetectionSeries, r: int, tau: float) -> FdtEstimate:
    """Closed-form mean FDT for resetting to the start site every ``r`` measurements."""
    if r > len(series):
        raise ParameterError(f"series of length {len(series)} is shorter than r={r}")
    F = series.F[:r]
    P = float(series.P_det[r - 1])
    if P <= 0.0:
        raise DivergentFdtError(f"no detection possible within a window of r={r}")
    first = float(np.dot(np.arange(1, r + 1), F))
    return FdtEstimate(value=tau * (r * (1.0 - P) / P + first / P), method="closed-form")


class PartialSums:
    """Truncated mean FDT ``tau * sum_{n <= n_c} n F^r_n`` for any horizon ``n_c``."""

    def __init__(self, proto: Protocol, sched: RestartSchedule, cfg: LatticeConfig, cache: AmplitudeCache | None = None):
        self.kernel = RestartKernel(proto, sched, cfg, cache)
        self.r = sched.r
        self.tau = cfg.tau
        if self.kernel.stationary:
            d0 = self.kernel.d0
            inside = d0 <= self.kernel.d_max
            self._P = float(self.kernel.P_d[d0]) if inside else 0.0
            self._M = float(self.kernel.M_d[d0]) if inside else 0.0
            self._F = self.kernel.F_table[d0] if inside else np.zeros(self.r)
        else:
            self._P_seg = np.zeros(0)
            self._cum = np.zeros(1)  # cum[K] = sum over the first K segments
            self._logG = np.zeros(1)  # logG[K] = log prod_{i<K} (1 - P_i)

    @property
    def stationary(self) -> bool:
        return self.kernel.stationary

    @property
    def segments(self) -> int:
        return len(self._P_seg)

    def _extend(self, n_seg: int):
        while self.segments < n_seg:
            R0 = self.segments
            R1 = R0 + CHUNK
            P, M = self.kernel.segment_moments(R0, R1)
            with np.errstate(divide="ignore"):
                logs = np.log1p(-np.minimum(P, 1.0))
            logG = self._logG[-1] + np.concatenate(([0.0], np.cumsum(logs)))
            G = np.exp(logG[:-1])
            R = np.arange(R0, R1)
            contrib = G * (self.r * R * P + M)
            self._cum = np.concatenate((self._cum, self._cum[-1] + np.cumsum(contrib)))
            self._logG = np.concatenate((self._logG, logG[1:]))
            self._P_seg = np.concatenate((self._P_seg, P))

    def survival_after(self, K: int) -> float:
        """Probability of no detection during the first ``K`` segments."""
        if self.stationary:
            return math.exp(K * math.log1p(-self._P)) if self._P < 1 else float(K == 0)
        self._extend(K)
        return float(math.exp(self._logG[K]))

    def _stationary_value(self, K: int, rem: int) -> float:
        P, M, r = self._P, self._M, self.r
        if P <= 0.0:
            return 0.0
        lq = math.log1p(-P) if P < 1 else -math.inf
        if K <= _DIRECT_SEGMENTS:
            R = np.arange(K, dtype=float)
            G = np.exp(R * lq) if P < 1 else (R == 0).astype(float)
            full = float(np.dot(G, r * R * P + M))
        else:
            s0 = -math.expm1(K * lq) / P
            s1 = (1.0 - P) * (s0 - K * math.exp((K - 1) * lq)) / P
            full = r * P * s1 + M * s0
        qK = math.exp(K * lq) if P < 1 else float(K == 0)
        nt = np.arange(1, rem + 1)
        part = qK * float(np.dot(r * K + nt, self._F[:rem]))
        return self.tau * (full + part)

    def value(self, n_c: int) -> float:
        if n_c < 1:
            raise ParameterError(f"horizon must be >= 1, got {n_c}")
        K, rem = divmod(int(n_c), self.r)
        if self.stationary:
            return self._stationary_value(K, rem)
        self._extend(K + 1)
        total = float(self._cum[K])
        if rem:
            Fbar = self.kernel.window_probabilities(K, K + 1)[0, :rem]
            nt = np.arange(1, rem + 1)
            total += math.exp(self._logG[K]) * float(np.dot(self.r * K + nt, Fbar))
        return self.tau * total

    def horizon(self, eps: float, max_segments: int = MAX_SEGMENTS) -> int:
        """Smallest multiple of ``r`` after which survival is at most ``eps``."""
        if self.stationary:
            if self._P <= 0.0:
                raise DivergentFdtError("detection probability per window is zero")
            if self._P >= 1.0:
                return self.r
            return self.r * max(1, math.ceil(math.log(eps) / math.log1p(-self._P)))
        log_eps = math.log(eps)
        K = 0
        while True:
            hit = np.nonzero(self._logG[K:] <= log_eps)[0]
            if len(hit):
                return self.r * max(1, int(K + hit[0]))
            K = len(self._logG)
            if self.segments >= max_segments:
                raise DivergentFdtError(f"survival above {eps:g} after {self.segments} resets")
            if self.segments and self.kernel.has_escaped(self.segments):
                raise DivergentFdtError("reset sites drift away from the detector; survival saturates")
            self._extend(self.segments + CHUNK)


def default_nc_grid(sums: PartialSums) -> list[int]:
    """``GRID_POINTS`` geometric horizons spanning a factor ``GRID_SPAN``.

    The shortest horizon is where survival first drops to ``LOW_SURVIVAL``
    (never below ``MIN_HORIZON``), so fast-converging cases use 200..4000
    and slow ones are pushed out until the partial sums are nearly flat
    in ``1/n_c``.
    """
    low = max(MIN_HORIZON, sums.horizon(LOW_SURVIVAL))
    grid = np.geomspace(low, low * GRID_SPAN, GRID_POINTS)
    return sorted({int(round(x)) for x in grid})


def mean_fdt_truncated(
    proto: Protocol, sched: RestartSchedule, cfg: LatticeConfig, n_c: int, cache: AmplitudeCache | None = None
) -> FdtEstimate:
    value = PartialSums(proto, sched, cfg, cache).value(n_c)
    return FdtEstimate(value=value, method="truncated", nc_grid=(int(n_c),))


def _fit_at_zero(u: np.ndarray, y: np.ndarray, degree: int, u_max: float) -> float:
    series = legendre.Legendre.fit(u, y, degree, domain=[0.0, u_max])
    return float(series(0.0))


def extrapolate_fdt(grid) -> FdtEstimate:
    """Value at ``1/n_c -> 0`` of a degree-10 least-squares fit in ``1/n_c``.

    ``grid`` is a sequence of ``(n_c, truncated value)`` pairs.  The fit
    uses a Legendre basis on ``[0, max(1/n_c)]``; ``stability`` is the
    spread of the intercept over degrees 8, 10 and 12.
    """
    pts = sorted({int(n): float(v) for n, v in grid}.items())
    if len(pts) < FIT_DEGREE + 2:
        raise FitError(f"need at least {FIT_DEGREE + 2} distinct horizons, got {len(pts)}")
    n = np.array([p[0] for p in pts], dtype=float)
    if np.any(n <= 0):
        raise FitError("horizons must be positive")
    y = np.array([p[1] for p in pts])
    u = 1.0 / n
    u_max = float(u.max())
    value = _fit_at_zero(u, y, FIT_DEGREE, u_max)
    others = [_fit_at_zero(u, y, d, u_max) for d in STABILITY_DEGREES if d < len(pts)]
    stability = float(max(others) - min(others)) if others else 0.0
    return FdtEstimate(
        value=value,
        method="extrapolated",
        nc_grid=tuple(int(v) for v in n),
        fit_degree=FIT_DEGREE,
        stability=stability,
    )


def truncation_table(
    proto: Protocol, sched: RestartSchedule, cfg: LatticeConfig, nc_grid=None, cache: AmplitudeCache | None = None
) -> list[tuple[int, float]]:
    """``(n_c, truncated mean FDT)`` over ``nc_grid`` (default grid when omitted)."""
    sums = PartialSums(proto, sched, cfg, cache)
    grid = default_nc_grid(sums) if nc_grid is None else sorted(int(x) for x in nc_grid)
    return [(n_c, sums.value(n_c)) for n_c in grid]


def mean_fdt(
    proto: Protocol,
    sched: RestartSchedule,
    cfg: LatticeConfig,
    nc_grid=None,
    cache: AmplitudeCache | None = None,
) -> FdtEstimate:
    """Mean FDT: closed form when the reset site never moves, extrapolated otherwise."""
    if isinstance(proto, IPR) or sched.delta_offset == 0:
        series = detection_series(detection_amplitudes(cfg.x0, cfg, sched.r, cache))
        return mean_fdt_ipr_closed(series, sched.r, cfg.tau)
    return extrapolate_fdt(truncation_table(proto, sched, cfg, nc_grid, cache))


def local_minima(values) -> list[int]:
    """Indices of strict interior minima; a run of equal values reports its leftmost index."""
    v = np.asarray(values, dtype=float)
    out = []
    i = 1
    while i < len(v) - 1:
        j = i
        while j + 1 < len(v) and v[j + 1] == v[i]:
            j += 1
        if j < len(v) - 1 and v[i - 1] > v[i] and v[j + 1] > v[i]:
            out.append(i)
        i = j + 1
    return out


@dataclass
class SweepResult:
    """Mean FDT along one swept axis; ``None`` estimates mark divergent points."""

    axis: list
    estimates: list[FdtEstimate | None]
    optima: list[int]
    global_optimum: int
    delta_offsets: list[int] = field(default_factory=list)
    divides: list[bool] = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return np.array([math.inf if e is None else e.value for e in self.estimates])

    @property
    def best(self) -> tuple:
        e = self.estimates[self.global_optimum]
        return self.axis[self.global_optimum], e.value


def _sweep_point(proto, cfg, r, nc_grid, cache):
    sched = make_schedule(proto, r, cfg)
    try:
        est = mean_fdt(proto, sched, cfg, nc_grid, cache)
    except DivergentFdtError:
        est = None
    return sched.delta_offset, est


def optimal_restart(
    proto: Protocol,
    cfg: LatticeConfig,
    r_range,
    nc_grid=None,
    threads: int | None = 1,
    cache: AmplitudeCache | None = None,
) -> SweepResult:
    """Mean FDT for every ``r`` in ``r_range``, local minima and the global optimum ``r*``."""
    rs = [int(r) for r in r_range]
    if not rs:
        raise ParameterError("r_range is empty")
    cache = cache or default_cache
    points = parallel_map(lambda r: _sweep_point(proto, cfg, r, nc_grid, cache), rs, threads)
    offsets = [p[0] for p in points]
    estimates = [p[1] for p in points]
    values = np.array([math.inf if e is None else e.value for e in estimates])
    if not np.any(np.isfinite(values)):
        raise DivergentFdtError("mean FDT diverges for every r in the sweep")
    distance = abs(cfg.delta - cfg.x0)
    return SweepResult(
        axis=rs,
        estimates=estimates,
        optima=local_minima(values),
        global_optimum=int(np.argmin(values)),
        delta_offsets=offsets,
        divides=[d > 0 and distance % d == 0 for d in offsets],
    )


def _linear_fit(x, y) -> tuple[float, float, float]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(np.unique(x)) != len(x) or len(x) < 2:
        raise FitError("linear fit needs distinct abscissae")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


@dataclass
class DeltaSweep:
    deltas: list[int]
    sweeps: list[SweepResult]
    r_star: list[int]
    fdt_star: list[float]
    slope: float
    intercept: float
    r_squared: float


def default_r_range(distance: int) -> range:
    return range(2, max(48, 5 * distance) + 1)


def fdt_vs_delta(
    proto: Protocol,
    tau: float,
    delta_list,
    x0: int = 0,
    r_range=None,
    nc_grid=None,
    threads: int | None = 1,
) -> DeltaSweep:
    """Optimal mean FDT per detector position and a straight-line fit through them."""
    deltas = [int(d) for d in delta_list]
    if len(deltas) < 3:
        raise FitError("need at least three detector positions")
    if len(set(deltas)) != len(deltas):
        raise FitError("detector positions must be distinct")
    sweeps = []
    for d in deltas:
        cfg = LatticeConfig(tau=tau, delta=d, x0=x0)
        rr = default_r_range(abs(d - x0)) if r_range is None else r_range
        sweeps.append(optimal_restart(proto, cfg, rr, nc_grid, threads))
    r_star = [s.best[0] for s in sweeps]
    fdt_star = [s.best[1] for s in sweeps]
    slope, intercept, r2 = _linear_fit(deltas, fdt_star)
    return DeltaSweep(deltas, sweeps, r_star, fdt_star, slope, intercept, r2)


@dataclass
class TauSweep:
    """Mean FDT against restart time ``t_r`` for several measurement periods."""

    t_r_grid: np.ndarray
    taus: list[float]
    r_values: dict[float, list[int]]
    curves: dict[float, np.ndarray]
    t_r_star: dict[float, float]


def fdt_vs_tau(
    proto: Protocol,
    tau_list,
    t_r_grid,
    delta: int = 10,
    x0: int = 0,
    nc_grid=None,
    threads: int | None = 1,
) -> TauSweep:
    """Curves of mean FDT over a common restart-time grid, one per ``tau``.

    Grid point ``t_r`` is evaluated at ``r = max(1, round(t_r / tau))``;
    ``t_r*`` is reported on the grid.
    """
    grid = np.asarray(t_r_grid, dtype=float)
    taus = [float(t) for t in tau_list]
    for t in taus:
        if t > 0.5:
            raise ParameterError(f"tau={t} lies outside the small-tau regime (<= 0.5)")
    r_values, curves, stars = {}, {}, {}
    for t in taus:
        cfg = LatticeConfig(tau=t, delta=delta, x0=x0)
        rs = [max(1, int(round(tr / t))) for tr in grid]
        unique = sorted(set(rs))
        sweep = optimal_restart(proto, cfg, unique, nc_grid, threads)
        lookup = dict(zip(unique, sweep.values))
        curve = np.array([lookup[r] for r in rs])
        r_values[t] = rs
        curves[t] = curve
        stars[t] = float(grid[int(np.argmin(curve))])
    return TauSweep(t_r_grid=grid, taus=taus, r_values=r_values, curves=curves, t_r_star=stars)
