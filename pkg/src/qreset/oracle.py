r"""Independent checks of the restart kernel.

Two ground truths are provided.

Exhaustive enumeration walks every sign sequence ``s in {+1, -1}^R`` of
the reset hops with weight ``prod_k p_k^{[s_k=+1]} (1-p_k)^{[s_k=-1]}``,
and so reproduces the reset-site law without any binomial algebra.

Monte Carlo follows single trajectories of the physical process: in each
segment the particle is measured ``r`` times from its current reset site
and detected at ``n'`` with the exact first-detection probabilities, and
on failure it hops ``+/- Delta``.  The sample mean estimates the
trajectory average, which need not equal the factorized kernel (an
average of products versus a product of averages).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .detection import AmplitudeCache, default_cache
from .errors import BudgetError, InputDomainError, ParameterError
from .parallel import parallel_map
from .propagation import LatticeConfig, jstar_support
from .protocols import IPR, AdaptiveMPR, JStarDistribution, MPR, Protocol, RestartSchedule

__all__ = [
    "ENUMERATION_LIMIT",
    "DivergenceWarning",
    "McResult",
    "enumerate_jstar",
    "enumerated_first_detection",
    "mc_first_detection",
    "step_probabilities",
]

ENUMERATION_LIMIT = 20
MC_BLOCK = 2048
SEGMENT_CAP = 10_000
# beyond ceil(2 r tau) + 60 sites the in-window detection probability is below double precision
DISTANCE_MARGIN = 60


class DivergenceWarning(RuntimeWarning):
    """No trial was detected before the segment cap."""


def step_probabilities(proto: Protocol, sched: RestartSchedule, R: int) -> list[float]:
    """Right-hop probability of resets ``1..R``."""
    if isinstance(proto, IPR):
        raise ParameterError("IPR resets do not hop")
    if isinstance(proto, MPR):
        return [proto.p] * R
    return [proto.p_I if k <= sched.R_c else proto.p_F for k in range(1, R + 1)]


def enumerate_jstar(step_probs, delta_offset: int, x0: int = 0) -> JStarDistribution:
    """Endpoint law of ``x0 + sum_k (+/- delta_offset)`` by brute force over all sign sequences."""
    p = np.asarray(step_probs, dtype=float)
    R = len(p)
    if R > ENUMERATION_LIMIT:
        raise BudgetError(f"R={R} exceeds the 2^{ENUMERATION_LIMIT} enumeration budget; use mc_first_detection")
    if np.any((p < 0) | (p > 1)):
        raise ParameterError("step probabilities must lie in [0, 1]")
    if delta_offset < 0:
        raise InputDomainError("delta_offset must be nonnegative")
    codes = np.arange(1 << R, dtype=np.int64)
    weights = np.ones(1 << R)
    lefts = np.zeros(1 << R, dtype=np.int64)
    for k in range(R):
        left = (codes >> k) & 1
        weights *= np.where(left == 1, 1.0 - p[k], p[k])
        lefts += left
    if delta_offset == 0:
        return JStarDistribution(R=R, offsets=[x0], weights=np.array([weights.sum()]))
    w = np.bincount(lefts, weights=weights, minlength=R + 1)
    return JStarDistribution(R=R, offsets=jstar_support(R, delta_offset, x0), weights=w)


def enumerated_first_detection(
    proto: Protocol,
    sched: RestartSchedule,
    R: int,
    n_window: int,
    cfg: LatticeConfig,
    cache: AmplitudeCache | None = None,
) -> float:
    """Enumeration counterpart of ``protocols.averaged_first_detection``."""
    cache = cache or default_cache
    if isinstance(proto, IPR) or sched.delta_offset == 0:
        sites, weights = [cfg.x0], [1.0]
    else:
        dist = enumerate_jstar(step_probabilities(proto, sched, R), sched.delta_offset, cfg.x0)
        sites, weights = dist.offsets, dist.weights
    total = 0.0
    for site, w in zip(sites, weights):
        amp = cache.real_series(abs(cfg.delta - site), cfg.tau, n_window)[n_window - 1]
        total += w * amp * amp
    return total


@dataclass(frozen=True)
class McResult:
    """Sample mean detection time over detected trials.

    ``censored`` trials hit the segment cap undetected and are excluded
    from ``mean`` and ``stderr``.
    """

    mean: float
    stderr: float
    trials: int
    detected: int
    censored: int


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))


class _WindowTables:
    """Cumulative in-window detection probabilities per start distance."""

    def __init__(self, cfg: LatticeConfig, r: int, cache: AmplitudeCache):
        self.cfg, self.r, self.cache = cfg, r, cache
        self.d_max = math.ceil(2 * r * cfg.tau) + DISTANCE_MARGIN
        self._rows: dict[int, np.ndarray] = {}

    def rows(self, distances: np.ndarray) -> np.ndarray:
        distances = np.minimum(distances, self.d_max + 1)
        uniq, inv = np.unique(distances, return_inverse=True)
        for d in uniq:
            d = int(d)
            if d not in self._rows:
                if d > self.d_max:
                    self._rows[d] = np.zeros(self.r)
                else:
                    self._rows[d] = np.cumsum(self.cache.real_series(d, self.cfg.tau, self.r) ** 2)
        return np.stack([self._rows[int(d)] for d in uniq])[inv]


def _right_prob(proto, sched, k: int) -> float:
    if isinstance(proto, MPR):
        return proto.p
    return proto.p_I if k <= sched.R_c else proto.p_F


def _escaped(proto, sched, k: int, offsets: np.ndarray, d_max: int) -> bool:
    """All remaining hops go one way and every trial is already out of reach on that side."""
    future = {_right_prob(proto, sched, k + 1)}
    if isinstance(proto, AdaptiveMPR) and k < sched.R_c:
        future.add(proto.p_F)
    if future == {1.0}:
        return bool(np.all(offsets > d_max))
    if future == {0.0}:
        return bool(np.all(offsets < -d_max))
    return False


def _simulate_block(proto, sched, cfg, size, rng, cap, cache) -> np.ndarray:
    """Detection times for ``size`` trials; ``nan`` marks censoring."""
    tables = _WindowTables(cfg, sched.r, cache)
    times = np.full(size, np.nan)
    site = np.full(size, cfg.x0, dtype=np.int64)
    idx = np.arange(size)
    hops = not isinstance(proto, IPR) and sched.delta_offset > 0
    for R in range(cap):
        if idx.size == 0:
            break
        cum = tables.rows(np.abs(cfg.delta - site))
        u = rng.random(idx.size)
        hit = u < cum[:, -1]
        n_in = (cum < u[:, None]).sum(axis=1) + 1
        times[idx[hit]] = cfg.tau * (sched.r * R + n_in[hit])
        keep = ~hit
        idx, site = idx[keep], site[keep]
        if hops:
            p = _right_prob(proto, sched, R + 1)
            right = rng.random(idx.size) < p
            site = site + np.where(right, sched.delta_offset, -sched.delta_offset)
            if _escaped(proto, sched, R + 1, site - cfg.delta, tables.d_max):
                break
    return times


def mc_first_detection(
    proto: Protocol,
    sched: RestartSchedule,
    cfg: LatticeConfig,
    trials: int,
    seed: int,
    threads: int | None = None,
    segment_cap: int = SEGMENT_CAP,
    cache: AmplitudeCache | None = None,
) -> McResult:
    """Monte Carlo mean first-detection time under restart.

    Trials are split into blocks of ``MC_BLOCK``; block ``b`` draws from a
    Philox stream keyed by ``(seed, b)`` and results merge in block order,
    so the output does not depend on ``threads``.
    """
    if trials < 1:
        raise InputDomainError(f"trials must be >= 1, got {trials}")
    if segment_cap < 1:
        raise InputDomainError(f"segment_cap must be >= 1, got {segment_cap}")
    if isinstance(proto, AdaptiveMPR) and sched.R_c is None:
        raise ParameterError("adaptive protocol needs a schedule with resolved R_c")
    cache = cache or default_cache
    blocks = [(b, min(MC_BLOCK, trials - b * MC_BLOCK)) for b in range(math.ceil(trials / MC_BLOCK))]

    def run(block):
        b, size = block
        return _simulate_block(proto, sched, cfg, size, _block_rng(seed, b), segment_cap, cache)

    times = np.concatenate(parallel_map(run, blocks, threads))
    done = times[~np.isnan(times)]
    censored = trials - done.size
    if done.size == 0:
        warnings.warn(f"no detection within {segment_cap} segments in {trials} trials", DivergenceWarning, stacklevel=2)
        return McResult(mean=math.nan, stderr=math.nan, trials=trials, detected=0, censored=censored)
    stderr = float(done.std(ddof=1) / math.sqrt(done.size)) if done.size > 1 else math.nan
    return McResult(mean=float(done.mean()), stderr=stderr, trials=trials, detected=int(done.size), censored=censored)
