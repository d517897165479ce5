"""Command-line entry point: ``qreset <subcommand> [flags]``.

Every subcommand writes one table (CSV by default, JSON on request)
preceded by ``# key=value`` lines holding the resolved configuration.
Settings come from flags, then a flat ``key=value`` config file given by
``--config``, then built-in defaults.  Failures print a one-line JSON
error record on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .detection import DetectionSeries
from .errors import QResetError
from .fdt import (
    default_r_range,
    extrapolate_fdt,
    fdt_vs_delta,
    fdt_vs_tau,
    mean_fdt,
    optimal_restart,
    truncation_table,
)
from .oracle import enumerate_jstar, enumerated_first_detection, mc_first_detection, step_probabilities
from .parallel import default_threads
from .propagation import LatticeConfig, peak_offset
from .protocols import (
    IPR,
    AdaptiveMPR,
    MPR,
    averaged_first_detection,
    jstar_distribution,
    jstar_moments,
    make_schedule,
    series_under_restart,
)

EXIT_USAGE = 2
EXIT_COMPUTE = 1
EXIT_IO = 3
ORACLE_TOL = 1e-12
# settings that change how a run executes but not what it produces
_UNRECORDED = {"command", "config", "output", "format", "threads"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(message)


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return "inf"
    return format(float(x), ".17g")


def _json_value(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None
    if isinstance(x, (float, np.floating)):
        return float(x)
    return x


@dataclass
class Table:
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    footer: dict = field(default_factory=dict)
    resolved: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RunConfig:
    """Validated settings for one subcommand invocation."""

    command: str
    lattice: LatticeConfig
    protocol: IPR | MPR | AdaptiveMPR
    options: dict
    fmt: str = "csv"
    output: str | None = None
    threads: int = 1

    def record(self) -> dict:
        rec = {
            "command": self.command,
            "tau": self.lattice.tau,
            "delta": self.lattice.delta,
            "x0": self.lattice.x0,
            "n_max": self.lattice.n_max,
            "protocol": self.protocol.name,
        }
        if isinstance(self.protocol, MPR):
            rec["p"] = self.protocol.p
        elif isinstance(self.protocol, AdaptiveMPR):
            rec.update(p_I=self.protocol.p_I, p_F=self.protocol.p_F, R_c=self.protocol.R_c)
        rec.update({k: v for k, v in self.options.items() if k not in _UNRECORDED})
        return rec


# ---------------------------------------------------------------- parsing


def _rc_arg(text: str):
    if text == "auto":
        return "auto"
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a nonnegative integer, got {text!r}")
    if v < 0:
        raise argparse.ArgumentTypeError(f"R_c must be >= 0, got {v}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    g = p.add_argument_group("lattice and protocol")
    g.add_argument("--config", help="flat key=value file; flags override its entries")
    g.add_argument("--tau", type=float, default=0.25)
    g.add_argument("--delta", type=int, default=10)
    g.add_argument("--x0", type=int, default=0)
    g.add_argument("--n-max", dest="n_max", type=int, default=10_000)
    g.add_argument("--protocol", choices=["ipr", "mpr", "ampr"], default="mpr")
    g.add_argument("--p", type=float, default=0.5, help="MPR right-hop probability")
    g.add_argument("--pi", dest="p_I", type=float, default=0.6, help="adaptive initial right-hop probability")
    g.add_argument("--pf", dest="p_F", type=float, default=0.5, help="adaptive final right-hop probability")
    g.add_argument("--rc", dest="R_c", type=_rc_arg, default="auto")
    o = p.add_argument_group("output and execution")
    o.add_argument("--format", choices=["csv", "json"], default="csv")
    o.add_argument("--output", "-o", help="output file (stdout when omitted)")
    o.add_argument("--threads", type=int, default=None, help="worker threads (env QRESET_THREADS, else all cores)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="qreset", description="First detection of a quantum walker under restart.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, description=help_)

    for name, what in (("survival", "survival"), ("pdet", "cumulative detection probability")):
        s = add(name, f"first-detection series and {what} under restart")
        s.add_argument("--r", type=int, required=True)
    s = add("jstar", "reset-site distribution after R resets")
    s.add_argument("--r", type=int, required=True)
    s.add_argument("--R", dest="R", type=int, required=True)
    s = add("peak", "peak offset Delta against restart time")
    s.add_argument("--r-min", dest="r_min", type=int, default=1)
    s.add_argument("--r-max", dest="r_max", type=int, default=48)
    s = add("fdt-sweep", "mean detection time against r")
    s.add_argument("--r-min", dest="r_min", type=int, default=2)
    s.add_argument("--r-max", dest="r_max", type=int, default=48)
    s = add("optimal", "optimal restart, optionally per detector position or per tau")
    s.add_argument("--r-min", dest="r_min", type=int, default=2)
    s.add_argument("--r-max", dest="r_max", type=int, default=None, help="default max(48, 5 |delta - x0|)")
    s.add_argument("--delta-list", dest="delta_list", type=_int_list, default=None)
    s.add_argument("--tau-list", dest="tau_list", type=_float_list, default=None)
    s.add_argument("--t-r-step", dest="t_r_step", type=float, default=0.35)
    s.add_argument("--t-r-max", dest="t_r_max", type=float, default=16.8)
    s = add("extrapolate", "truncated mean detection time against 1/n_c and its extrapolation")
    s.add_argument("--r", type=int, required=True)
    s.add_argument("--nc-list", dest="nc_list", type=_int_list, default=None)
    s = add("oracle-check", "compare kernels with enumeration and Monte Carlo")
    s.add_argument("--r", type=int, default=24)
    s.add_argument("--R", dest="R", type=int, default=12)
    s.add_argument("--trials", type=int, default=0, help="Monte Carlo trials (0 skips)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--segment-cap", dest="segment_cap", type=int, default=10_000)
    return parser


def _read_config(path: str) -> dict[str, str]:
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path!r}: {exc.strerror}")
    for num, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"config line {num}: expected key=value, got {line!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key.replace("_", "-")] = value
    return out


def _option_map(parser: argparse.ArgumentParser) -> dict[str, str]:
    """Config key (long flag without dashes) to its option string."""
    keys = {}
    for action in parser._actions:
        for opt in action.option_strings:
            if opt.startswith("--") and opt not in ("--help", "--config", "--version"):
                keys[opt[2:]] = opt
    return keys


def _config_tokens(parser, command: str, path: str) -> list[str]:
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices
    here = _option_map(subparsers[command])
    known = set().union(*(_option_map(sp) for sp in subparsers.values()))
    tokens = []
    for key, value in _read_config(path).items():
        if key in here:
            tokens += [here[key], value]
        elif key not in known:
            raise UsageError(f"unknown config key {key!r}")
    return tokens


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _require(cond: bool, message: str):
    if not cond:
        raise UsageError(message)


def parse_config(argv: list[str]) -> RunConfig:
    """Flags, then config file, then defaults; every constraint is checked here."""
    parser = build_parser()
    path = _config_path(argv)
    command = next((tok for tok in argv if tok in COMMANDS), None)
    if path is not None and command is not None:
        at = argv.index(command) + 1
        argv = argv[:at] + _config_tokens(parser, command, path) + argv[at:]
    args = parser.parse_args(argv)
    opts = vars(args).copy()

    _require(math.isfinite(args.tau) and args.tau > 0, f"--tau must be positive and finite, got {args.tau}")
    _require(args.n_max >= 1, f"--n-max must be >= 1, got {args.n_max}")
    for flag, dest in (("p", "p"), ("pi", "p_I"), ("pf", "p_F")):
        _require(0.0 <= opts[dest] <= 1.0, f"--{flag} must lie in [0, 1], got {opts[dest]}")
    if args.protocol == "ampr" and args.R_c == "auto":
        _require(args.p_I > 0.5, "--protocol ampr with --rc auto needs --pi > 0.5 (drift toward the detector)")
        _require(args.delta > args.x0, "--rc auto needs the detector to the right of --x0")
    _require(args.threads is None or args.threads >= 1, f"--threads must be >= 1, got {args.threads}")
    if "r" in opts:
        _require(args.r >= 1, f"--r must be >= 1, got {args.r}")
    if "R" in opts:
        _require(args.R >= 0, f"--R must be >= 0, got {args.R}")
    if "r_min" in opts:
        _require(args.r_min >= 1, f"--r-min must be >= 1, got {args.r_min}")
        _require(args.r_max is None or args.r_max >= args.r_min, "--r-max must be >= --r-min")
    if args.command == "optimal":
        _require(not (args.delta_list and args.tau_list), "--delta-list and --tau-list are exclusive")
        if args.delta_list is not None:
            _require(len(set(args.delta_list)) >= 3, "--delta-list needs at least three distinct positions")
            _require(args.x0 not in args.delta_list, "--delta-list entries must differ from --x0")
        if args.tau_list is not None:
            _require(len(args.tau_list) >= 1, "--tau-list is empty")
            _require(all(0 < t <= 0.5 for t in args.tau_list), "--tau-list entries must lie in (0, 0.5]")
            _require(args.t_r_step > 0 and args.t_r_max >= args.t_r_step, "need 0 < --t-r-step <= --t-r-max")
    if args.command == "extrapolate" and args.nc_list is not None:
        _require(len(set(args.nc_list)) >= 12, "--nc-list needs at least 12 distinct horizons")
        _require(min(args.nc_list) >= 1, "--nc-list entries must be >= 1")
    if args.command == "oracle-check":
        _require(args.trials >= 0, "--trials must be >= 0")
        _require(args.seed >= 0, "--seed must be >= 0")
        _require(args.segment_cap >= 1, "--segment-cap must be >= 1")
        _require(args.R <= 20 or args.protocol == "ipr", "--R above 20 exceeds the enumeration budget")
    if args.output:
        parent = os.path.dirname(os.path.abspath(args.output))
        _require(os.path.isdir(parent), f"output directory {parent!r} does not exist")

    try:
        lattice = LatticeConfig(tau=args.tau, delta=args.delta, x0=args.x0, n_max=args.n_max)
        if args.protocol == "ipr":
            proto = IPR()
        elif args.protocol == "mpr":
            proto = MPR(args.p)
        else:
            proto = AdaptiveMPR(args.p_I, args.p_F, args.R_c)
    except QResetError as exc:
        raise UsageError(str(exc))
    except ValueError as exc:
        raise UsageError(str(exc))

    for k in ("tau", "delta", "x0", "n_max", "protocol", "p", "p_I", "p_F", "R_c"):
        opts.pop(k)
    threads = args.threads if args.threads is not None else default_threads()
    return RunConfig(
        command=args.command,
        lattice=lattice,
        protocol=proto,
        options=opts,
        fmt=args.format,
        output=args.output,
        threads=threads,
    )


# ---------------------------------------------------------------- commands


def _resolved(sched) -> dict:
    out = {"delta_offset": sched.delta_offset}
    if sched.R_c is not None:
        out["R_c_resolved"] = sched.R_c
    return out


def _series_table(cfg: RunConfig) -> Table:
    lat, o = cfg.lattice, cfg.options
    sched = make_schedule(cfg.protocol, o["r"], lat)
    s: DetectionSeries = series_under_restart(cfg.protocol, sched, lat, lat.n_max)
    t = Table(["n", "F", "P_det", "S"])
    t.rows = [[n + 1, s.F[n], s.P_det[n], s.S[n]] for n in range(len(s))]
    t.resolved = _resolved(sched)
    return t


def _jstar(cfg: RunConfig) -> Table:
    lat, o = cfg.lattice, cfg.options
    sched = make_schedule(cfg.protocol, o["r"], lat)
    dist = jstar_distribution(cfg.protocol, sched, o["R"], lat.x0)
    mean, var = jstar_moments(dist, lat.x0)
    t = Table(["offset", "weight"])
    t.rows = [[site - lat.x0, w] for site, w in zip(dist.offsets, dist.weights)]
    t.footer = {"mean": mean, "variance": var}
    t.resolved = _resolved(sched)
    return t


def _peak(cfg: RunConfig) -> Table:
    o, tau = cfg.options, cfg.lattice.tau
    t = Table(["r", "t_r", "delta_offset"])
    t.rows = [[r, r * tau, peak_offset(r * tau).delta_offset] for r in range(o["r_min"], o["r_max"] + 1)]
    return t


def _fdt_sweep(cfg: RunConfig) -> Table:
    o, lat = cfg.options, cfg.lattice
    sweep = optimal_restart(cfg.protocol, lat, range(o["r_min"], o["r_max"] + 1), threads=cfg.threads)
    minima = set(sweep.optima)
    t = Table(["r", "t_r", "delta_offset", "fdt", "is_local_min"])
    for i, (r, est) in enumerate(zip(sweep.axis, sweep.estimates)):
        t.rows.append([r, r * lat.tau, sweep.delta_offsets[i], None if est is None else est.value, i in minima])
    r_star, fdt_star = sweep.best
    t.footer = {"r_star": r_star, "fdt_star": fdt_star}
    return t


def _optimal(cfg: RunConfig) -> Table:
    o, lat = cfg.options, cfg.lattice
    r_max = o["r_max"]
    if o["delta_list"]:
        rr = None if r_max is None else range(o["r_min"], r_max + 1)
        ds = fdt_vs_delta(cfg.protocol, lat.tau, o["delta_list"], lat.x0, rr, threads=cfg.threads)
        t = Table(["delta", "r_star", "fdt_star"])
        t.rows = [list(row) for row in zip(ds.deltas, ds.r_star, ds.fdt_star)]
        t.footer = {"slope": ds.slope, "intercept": ds.intercept, "r_squared": ds.r_squared}
        return t
    if o["tau_list"]:
        steps = int(math.floor(o["t_r_max"] / o["t_r_step"] + 1e-9))
        grid = o["t_r_step"] * np.arange(1, steps + 1)
        ts = fdt_vs_tau(cfg.protocol, o["tau_list"], grid, lat.delta, lat.x0, threads=cfg.threads)
        t = Table(["tau", "t_r", "r", "fdt", "is_optimal"])
        for tau in ts.taus:
            for tr, r, v in zip(ts.t_r_grid, ts.r_values[tau], ts.curves[tau]):
                t.rows.append([tau, tr, r, v if math.isfinite(v) else None, tr == ts.t_r_star[tau]])
        return t
    rr = default_r_range(lat.distance) if r_max is None else range(o["r_min"], r_max + 1)
    if r_max is None:
        rr = range(o["r_min"], rr.stop)
    sweep = optimal_restart(cfg.protocol, lat, rr, threads=cfg.threads)
    r_star, fdt_star = sweep.best
    t = Table(["r_star", "t_r_star", "delta_offset", "fdt_star"])
    t.rows = [[r_star, r_star * lat.tau, sweep.delta_offsets[sweep.global_optimum], fdt_star]]
    return t


def _extrapolate(cfg: RunConfig) -> Table:
    o, lat = cfg.options, cfg.lattice
    sched = make_schedule(cfg.protocol, o["r"], lat)
    grid = truncation_table(cfg.protocol, sched, lat, o["nc_list"])
    est = extrapolate_fdt(grid)
    t = Table(["n_c", "inv_n_c", "fdt_truncated"])
    t.rows = [[n, 1.0 / n, v] for n, v in grid]
    t.footer = {"extrapolated": est.value, "stability": est.stability}
    t.resolved = _resolved(sched)
    return t


def _oracle_check(cfg: RunConfig) -> Table:
    o, lat, proto = cfg.options, cfg.lattice, cfg.protocol
    sched = make_schedule(proto, o["r"], lat)
    t = Table(["quantity", "value"])
    dev_law = dev_kernel = 0.0
    if not isinstance(proto, IPR):
        for R in range(o["R"] + 1):
            closed = jstar_distribution(proto, sched, R, lat.x0).weights
            brute = enumerate_jstar(step_probabilities(proto, sched, R), sched.delta_offset, lat.x0).weights
            dev_law = max(dev_law, float(np.max(np.abs(closed - brute))))
            for n in range(1, sched.r + 1):
                a = averaged_first_detection(proto, sched, R, n, lat)
                b = enumerated_first_detection(proto, sched, R, n, lat)
                dev_kernel = max(dev_kernel, abs(a - b))
    t.resolved = _resolved(sched)
    t.rows += [["max_dev_jstar", dev_law], ["max_dev_kernel", dev_kernel]]
    if o["trials"] > 0:
        mc = mc_first_detection(proto, sched, lat, o["trials"], o["seed"], cfg.threads, o["segment_cap"])
        t.rows += [
            ["mc_mean", mc.mean],
            ["mc_stderr", mc.stderr],
            ["mc_detected", mc.detected],
            ["mc_censored", mc.censored],
        ]
        try:
            t.rows.append(["kernel_fdt", mean_fdt(proto, sched, lat).value])
        except QResetError:
            t.rows.append(["kernel_fdt", None])
    t.footer = {"tolerance": ORACLE_TOL, "passed": max(dev_law, dev_kernel) < ORACLE_TOL}
    return t


COMMANDS = {
    "survival": _series_table,
    "pdet": _series_table,
    "jstar": _jstar,
    "peak": _peak,
    "fdt-sweep": _fdt_sweep,
    "optimal": _optimal,
    "extrapolate": _extrapolate,
    "oracle-check": _oracle_check,
}


# ---------------------------------------------------------------- output


def render(cfg: RunConfig, table: Table) -> str:
    record = cfg.record()
    record.update(table.resolved)
    if cfg.fmt == "json":
        payload = {
            "config": {k: _json_value(v) for k, v in record.items()},
            "columns": table.columns,
            "rows": [[_json_value(x) for x in row] for row in table.rows],
            "footer": {k: _json_value(v) for k, v in table.footer.items()},
        }
        return json.dumps(payload, sort_keys=True, indent=1) + "\n"
    buf = io.StringIO()
    for key in sorted(record):
        value = record[key]
        if isinstance(value, list):
            value = ",".join(_fmt(v) for v in value)
        elif value is not None and not isinstance(value, str):
            value = _fmt(value)
        buf.write(f"# {key}={value}\n")
    buf.write(",".join(table.columns) + "\n")
    for row in table.rows:
        buf.write(",".join(_fmt(x) for x in row) + "\n")
    if table.footer:
        buf.write("# " + ",".join(f"{k}={_fmt(v) if not isinstance(v, str) else v}" for k, v in table.footer.items()) + "\n")
    return buf.getvalue()


def _fail(kind: str, exc: BaseException, code: int) -> int:
    record = {"status": "error", "kind": kind, "type": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    try:
        table = COMMANDS[cfg.command](cfg)
    except (QResetError, ValueError, ArithmeticError, IndexError) as exc:
        return _fail("compute", exc, EXIT_COMPUTE)
    text = render(cfg, table)
    try:
        if cfg.output:
            with open(cfg.output, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    except OSError as exc:
        return _fail("io", exc, EXIT_IO)
    if cfg.command == "oracle-check" and not table.footer["passed"]:
        return EXIT_COMPUTE
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
