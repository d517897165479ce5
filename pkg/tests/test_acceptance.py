"""Acceptance criteria 1-13, each at its stated tolerance and runtime budget.

Every test appends one ``criterion N PASS|FAIL ...`` line that is printed
in the pytest terminal summary.
"""

import math
import time
from contextlib import contextmanager

import mpmath
import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from qreset.cli import main
from qreset.detection import AmplitudeCache, detection_amplitudes, detection_series
from qreset.fdt import (
    extrapolate_fdt,
    fdt_vs_delta,
    fdt_vs_tau,
    mean_fdt,
    mean_fdt_ipr_closed,
    optimal_restart,
    truncation_table,
)
from qreset.oracle import enumerated_first_detection
from qreset.propagation import LatticeConfig, occupation_probability, peak_offset
from qreset.protocols import (
    IPR,
    MPR,
    AdaptiveMPR,
    averaged_first_detection,
    jstar_distribution,
    jstar_moments,
    make_schedule,
    series_under_restart,
)
from qreset.specfun import bessel_j, bessel_row

CFG = LatticeConfig()


@contextmanager
def criterion(num: int, title: str, budget: float):
    notes: list[str] = []
    status = "FAIL"
    start = time.perf_counter()
    try:
        yield notes
        elapsed = time.perf_counter() - start
        assert elapsed < budget, f"runtime {elapsed:.1f}s exceeds {budget:.0f}s"
        status = "PASS"
    except AssertionError as exc:
        notes.append(str(exc).splitlines()[0])
        raise
    finally:
        elapsed = time.perf_counter() - start
        line = f"criterion {num} {status} [{elapsed:.1f}s] {title}" + (": " + "; ".join(notes) if notes else "")
        ACCEPTANCE_LINES.append(line)
        print(line)


def _power_series(n: int, x: float) -> float:
    with mpmath.workdps(50):
        xm = mpmath.mpf(x) / 2
        term = xm**n / mpmath.factorial(n)
        total, k = term, 0
        while k < 5 or abs(term) > mpmath.mpf(10) ** -60:
            k += 1
            term *= -(xm**2) / (k * (k + n))
            total += term
        return float(total)


@pytest.fixture(scope="module")
def series_grid():
    xs = np.arange(0.0, 30.01, 0.5)
    return xs, np.array([[_power_series(n, x) for n in range(61)] for x in xs])


def test_criterion_01_bessel(series_grid):
    xs, ref = series_grid
    with criterion(1, "Bessel values vs power series (1e-12), recurrence and sum rules", 5) as notes:
        got = np.array([[bessel_j(n, x) for n in range(61)] for x in xs])
        err = float(np.max(np.abs(got - ref)))
        notes.append(f"max |err| = {err:.2e}")
        assert err < 1e-12
        worst_rec = worst_sum = 0.0
        for x in xs[xs > 0]:
            J = bessel_row(120, x).values
            n = np.arange(1, 120)
            worst_rec = max(worst_rec, float(np.max(np.abs(J[n - 1] + J[n + 1] - 2 * n / x * J[n]))))
            worst_sum = max(worst_sum, abs(J[0] + 2 * J[2::2].sum() - 1), abs(J[0] ** 2 + 2 * np.sum(J[1:] ** 2) - 1))
        notes.append(f"recurrence {worst_rec:.1e}, sum rules {worst_sum:.1e}")
        assert worst_rec < 1e-12 and worst_sum < 1e-12


def test_criterion_02_unitarity():
    with criterion(2, "sum_j occupation = 1 +/- 1e-10", 1) as notes:
        for t in (1.0, 3.0, 10.0):
            span = int(2 * t) + 60
            total = sum(occupation_probability(j, 0, t) for j in range(-span, span + 1))
            notes.append(f"t={t:g}: {total - 1:+.1e}")
            assert abs(total - 1) < 1e-10


def test_criterion_03_geometric_identity():
    with criterion(3, "IPR r=1 closed form = tau/F_1 (1e-12 rel)", 1) as notes:
        worst = 0.0
        for delta in range(0, 8):
            for tau in (0.05, 0.1, 0.25, 0.5, 1.0, 2.0):
                cfg = LatticeConfig(tau=tau, delta=delta)
                s = detection_series(detection_amplitudes(0, cfg, 1, AmplitudeCache()))
                if s.F[0] <= 0:
                    continue
                got = mean_fdt_ipr_closed(s, 1, tau).value
                worst = max(worst, abs(got - tau / s.F[0]) / (tau / s.F[0]))
        notes.append(f"max rel err {worst:.1e}")
        assert worst < 1e-12


def test_criterion_04_closed_vs_extrapolated():
    with criterion(4, "IPR r=4..40 extrapolated vs closed form (< 0.5%)", 120) as notes:
        worst, at = 0.0, None
        for r in range(4, 41):
            sched = make_schedule(IPR(), r, CFG)
            closed = mean_fdt(IPR(), sched, CFG).value
            est = extrapolate_fdt(truncation_table(IPR(), sched, CFG)).value
            rel = abs(est - closed) / closed
            if rel > worst:
                worst, at = rel, r
        notes.append(f"max rel dev {worst:.2e} at r={at}")
        assert worst < 5e-3


def test_criterion_05_peak_offset():
    with criterion(5, "Delta(t_r=3) = 5, Delta(t_r=0.25) = 0", 1) as notes:
        a, b = peak_offset(3.0).delta_offset, peak_offset(0.25).delta_offset
        notes.append(f"got {a}, {b}")
        assert (a, b) == (5, 0)


def test_criterion_06_binomial_vs_enumeration():
    protos = [MPR(0.3), MPR(0.5), MPR(0.6), MPR(1.0), AdaptiveMPR(0.6, 0.5, 3), AdaptiveMPR(0.6, 0.5, 25)]
    with criterion(6, "averaged kernel = 2^R enumeration for R <= 12 (1e-12)", 60) as notes:
        worst = 0.0
        for proto in protos:
            for r in (7, 12, 24):
                sched = make_schedule(proto, r, CFG)
                for R in range(13):
                    for n in range(1, r + 1):
                        a = averaged_first_detection(proto, sched, R, n, CFG)
                        b = enumerated_first_detection(proto, sched, R, n, CFG)
                        worst = max(worst, abs(a - b))
        notes.append(f"max |dev| {worst:.1e}")
        assert worst < 1e-12


def test_criterion_07_moments():
    with criterion(7, "jstar moments = R D (2p-1), 4 R D^2 p(1-p); adaptive mean freezes", 10) as notes:
        worst = 0.0
        for p in (0.1, 0.3, 0.5, 0.6, 0.9, 1.0):
            for r in (7, 12, 24):
                sched = make_schedule(MPR(p), r, CFG)
                D = sched.delta_offset
                for R in range(0, 201):
                    mean, var = jstar_moments(jstar_distribution(MPR(p), sched, R))
                    scale = 1 + 4 * R * D**2
                    worst = max(worst, abs(mean - R * D * (2 * p - 1)) / scale, abs(var - 4 * R * D**2 * p * (1 - p)) / scale)
        notes.append(f"MPR max scaled dev {worst:.1e}")
        assert worst < 1e-10
        for r in (7, 12):
            proto = AdaptiveMPR(0.6, 0.5)
            sched = make_schedule(proto, r, CFG)
            frozen = sched.R_c * sched.delta_offset * (2 * 0.6 - 1)
            drift = max(
                abs(jstar_moments(jstar_distribution(proto, sched, R))[0] - frozen)
                for R in range(sched.R_c + 1, 201)
            )
            notes.append(f"r={r}: R_c={sched.R_c}, frozen mean {frozen:g}, max drift {drift:.1e}")
            assert drift < 1e-9 * (1 + abs(frozen))


def test_criterion_08_survival_vs_p():
    with criterion(8, "r=24 survival: p=0.5 minimal and < 0.1, plateaus for p in {0.4, 0.7, 1.0}", 300) as notes:
        S = {}
        for p in (0.4, 0.5, 0.6, 0.7, 1.0):
            s = series_under_restart(MPR(p), make_schedule(MPR(p), 24, CFG), CFG, 10_000)
            S[p] = (s.S[4999], s.S[9999])
        notes.append(", ".join(f"p={p}: S5000={a:.3g} S10000={b:.3g}" for p, (a, b) in S.items()))
        assert min(S, key=lambda p: S[p][1]) == 0.5
        assert S[0.5][1] < 0.1
        for p in (0.4, 0.7, 1.0):
            assert abs(S[p][1] - S[p][0]) < 1e-3


def test_criterion_09_stretched_exponential():
    with criterion(9, "MPR p=0.5 at r*: slope of log|log S| vs log n = 0.5 +/- 0.1", 300) as notes:
        r_star = optimal_restart(MPR(0.5), CFG, range(2, 49), threads=None).best[0]
        s = series_under_restart(MPR(0.5), make_schedule(MPR(0.5), r_star, CFG), CFG, 10_000)
        n = np.arange(2000, 10_001)
        slope = np.polyfit(np.log(n), np.log(np.abs(np.log(s.S[n - 1]))), 1)[0]
        notes.append(f"r*={r_star}, slope={slope:.3f}")
        assert abs(slope - 0.5) <= 0.1


def test_criterion_10_local_minima_and_ordering():
    with criterion(10, "MPR has exactly 4 local minima at Delta in {1,2,5,10}; adaptive(1,0.5) < MPR < IPR", 900) as notes:
        sweep = optimal_restart(MPR(0.5), CFG, range(2, 49), threads=None)
        minima = [sweep.axis[i] for i in sweep.optima]
        offsets = sorted({sweep.delta_offsets[i] for i in sweep.optima})
        best = {
            "adaptive": optimal_restart(AdaptiveMPR(1.0, 0.5), CFG, range(2, 49), threads=None).best,
            "mpr": sweep.best,
            "ipr": optimal_restart(IPR(), CFG, range(2, 49), threads=None).best,
        }
        notes.append("optima " + ", ".join(f"{k}: r*={r} <t_f>={v:.4g}" for k, (r, v) in best.items()))
        ordered = best["adaptive"][1] < best["mpr"][1] < best["ipr"][1]
        notes.append(f"ordering {'holds' if ordered else 'violated'}")
        notes.append(f"MPR local minima at r={minima} (Delta={offsets})")
        assert ordered
        assert len(minima) == 4 and offsets == [1, 2, 5, 10]


def test_criterion_11_linear_in_delta():
    deltas = range(5, 16)
    with criterion(11, "optimal <t_f> linear in delta (R^2 >= 0.99), slope adaptive < MPR < IPR", 1800) as notes:
        fits = {
            "ipr": fdt_vs_delta(IPR(), 0.25, deltas, threads=None),
            "mpr": fdt_vs_delta(MPR(0.5), 0.25, deltas, threads=None),
            "adaptive(0.6,0.5)": fdt_vs_delta(AdaptiveMPR(0.6, 0.5), 0.25, deltas, threads=None),
        }
        notes.append(", ".join(f"{k}: slope={f.slope:.3f} R2={f.r_squared:.5f}" for k, f in fits.items()))
        alt = fdt_vs_delta(AdaptiveMPR(1.0, 0.5), 0.25, deltas, threads=None)
        notes.append(f"informational adaptive(1,0.5): slope={alt.slope:.3f} R2={alt.r_squared:.5f}")
        assert all(f.r_squared >= 0.99 for f in fits.values())
        assert fits["adaptive(0.6,0.5)"].slope < fits["mpr"].slope < fits["ipr"].slope


def test_criterion_12_tau_independence():
    step = 0.35
    grid = step * np.arange(1, 49)
    taus = (0.15, 0.25, 0.35)
    with criterion(12, "MPR t_r* for tau in {0.15, 0.25, 0.35} within one grid step", 900) as notes:
        mpr = fdt_vs_tau(MPR(0.5), taus, grid, threads=None)
        stars = [mpr.t_r_star[t] for t in taus]
        ada = fdt_vs_tau(AdaptiveMPR(0.6, 0.5), taus, grid, threads=None)
        notes.append("MPR t_r*=" + ", ".join(f"{s:.2f}" for s in stars))
        notes.append("adaptive t_r* (inspection only)=" + ", ".join(f"{ada.t_r_star[t]:.2f}" for t in taus))
        assert max(stars) - min(stars) <= step + 1e-9


DETERMINISM_RUNS = [
    ["survival", "--protocol", "mpr", "--p", "0.5", "--r", "24", "--n-max", "3000"],
    ["pdet", "--protocol", "ampr", "--pi", "0.6", "--pf", "0.5", "--r", "7", "--n-max", "2000"],
    ["jstar", "--protocol", "mpr", "--p", "0.6", "--r", "24", "--R", "30"],
    ["peak", "--r-max", "60"],
    ["fdt-sweep", "--protocol", "mpr", "--r-min", "2", "--r-max", "30"],
    ["optimal", "--protocol", "ipr"],
    ["optimal", "--protocol", "ipr", "--delta-list", "5,6,7,8"],
    ["optimal", "--protocol", "mpr", "--tau-list", "0.25,0.35", "--t-r-max", "7"],
    ["extrapolate", "--protocol", "mpr", "--r", "23"],
    ["oracle-check", "--protocol", "mpr", "--p", "0.5", "--r", "23", "--R", "10", "--trials", "4000", "--seed", "17"],
    ["jstar", "--protocol", "mpr", "--p", "0.3", "--r", "12", "--R", "6", "--format", "json"],
]


def test_criterion_13_determinism(tmp_path, capsys):
    with criterion(13, "byte-identical output across repeats and 1/4/8 threads", math.inf) as notes:
        for k, argv in enumerate(DETERMINISM_RUNS):
            outputs = []
            for rep, threads in enumerate((1, 4, 8, 8)):
                path = tmp_path / f"run{k}_{rep}.out"
                code = main(argv + ["--threads", str(threads), "--output", str(path)])
                assert code == 0, f"{argv[0]} exited {code}: {capsys.readouterr().err}"
                outputs.append(path.read_bytes())
            assert all(o == outputs[0] for o in outputs), f"{' '.join(argv)} differs across threads"
        notes.append(f"{len(DETERMINISM_RUNS)} invocations x 4 runs identical")
