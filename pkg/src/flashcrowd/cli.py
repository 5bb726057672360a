"""Command-line front end.

Subcommands: simulate, urns, limits, campaign, fit, report.  Every option can
also come from a flat JSON object given with ``--config`` (same key names,
dashes replaced by underscores); flags win over the file.

Exit codes: 0 success, 2 usage error, 3 runtime error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3
EXIT_IO = 4

SUBCOMMANDS = ("simulate", "urns", "limits", "campaign", "fit", "report")
LAWS = ("nuR", "nuD", "gumbel", "weibull", "W")

DEFAULTS = {
    "n": 1000,
    "rho": 2.0,
    "policy": "min",
    "reps": 100,
    "seed": 0,
    "stream": 0,
    "alpha": None,
    "delta": None,
    "model": None,
    "out": ".",
    "trace_step": 0.0,
    "t_max": None,
    "completion": False,
    "method": "binomial",
    "normalization": "head",
    "tabulate": "nuR",
    "grid": None,
    "x": 1.0,
    "n_grid": [1000, 10000, 100000],
    "statistics": None,
    "workers": 1,
    "fit": False,
    "tolerance": 0.05,
    "inputs": [],
}

# per-subcommand default model
_DEFAULT_MODEL = {"urns": "urn-random", "campaign": "peersim-min"}


class UsageError(Exception):
    pass


@dataclass
class CommandSpec:
    subcommand: str
    options: dict = field(default_factory=dict)
    config_path: str | None = None

    @property
    def out(self) -> Path:
        return Path(self.options["out"])

    def __getattr__(self, name):
        try:
            return self.__dict__["options"][name]
        except KeyError:
            raise AttributeError(name) from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(float(v)) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [v for v in text.replace(",", " ").split() if v]


def _build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # default=None everywhere so that only explicit flags override the config file
    common.add_argument("--config", help="flat JSON object of option values")
    common.add_argument("--n", type=int, help="number of peers / balls")
    common.add_argument("--rho", type=float, help="wake-up rate")
    common.add_argument("--policy", choices=("min", "random"))
    common.add_argument("--reps", type=int, help="replications per N")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--stream", type=int, help="stream id for single runs")
    common.add_argument("--alpha", type=float)
    common.add_argument("--delta", type=float)
    common.add_argument("--model")
    common.add_argument("--out", help="output directory")
    common.add_argument("--trace-step", type=float, dest="trace_step")
    common.add_argument("--t-max", type=float, dest="t_max", help="stop tracing after this time")
    common.add_argument("--completion", action="store_const", const=True,
                        help="simulate until every download is done")
    common.add_argument("--method", choices=("sort", "binomial"))
    common.add_argument("--normalization", choices=("head", "tail"))
    common.add_argument("--tabulate", choices=LAWS)
    common.add_argument("--grid", help="start:stop:count for tabulated laws")
    common.add_argument("--x", type=float, help="scale for the W law")
    common.add_argument("--n-grid", type=_int_list, dest="n_grid", help="e.g. 1000,10000,100000")
    common.add_argument("--statistics", type=_str_list)
    common.add_argument("--workers", type=int)
    common.add_argument("--fit", action="store_const", const=True, help="also fit slopes")
    common.add_argument("--tolerance", type=float)

    parser = _Parser(prog="flashcrowd", description="Flash-crowd simulations and urn models.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="one peer-to-peer run")
    sub.add_parser("urns", parents=[common], help="one urn-and-ball realization")
    sub.add_parser("limits", parents=[common], help="tabulate a limit law")
    sub.add_parser("campaign", parents=[common], help="Monte Carlo over a grid of N")
    p = sub.add_parser("fit", parents=[common], help="slope fits from estimate CSVs")
    p.add_argument("inputs", nargs="*")
    p = sub.add_parser("report", parents=[common], help="growth-coefficient comparison")
    p.add_argument("inputs", nargs="*")
    return parser


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict) or any(isinstance(v, dict) for v in data.values()):
        raise UsageError("config must be a flat JSON object")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return data


def _validate(sub: str, o: dict) -> None:
    from .campaign import MODEL_STATISTICS, Plan, PlanError

    def num(key, cast):
        try:
            o[key] = cast(o[key])
        except (TypeError, ValueError):
            raise UsageError(f"{key}: malformed number {o[key]!r}") from None

    for key in ("n", "reps", "seed", "stream", "workers"):
        num(key, int)
    for key in ("rho", "trace_step", "x", "tolerance"):
        num(key, float)
    for key in ("alpha", "delta", "t_max"):
        if o[key] is not None:
            num(key, float)
    if not (o["rho"] > 0 and math.isfinite(o["rho"])):
        raise UsageError(f"rho must be positive, got {o['rho']}")
    if o["n"] < 1:
        raise UsageError("n must be at least 1")
    if o["reps"] < 1:
        raise UsageError("reps must be at least 1")
    if o["workers"] < 1:
        raise UsageError("workers must be at least 1")
    if o["trace_step"] < 0:
        raise UsageError("trace-step must be non-negative")
    if not 0 <= o["seed"] < 2 ** 64 or not 0 <= o["stream"] < 2 ** 64:
        raise UsageError("seed and stream must be unsigned 64-bit integers")
    if o["policy"] not in ("min", "random"):
        raise UsageError(f"unknown policy {o['policy']!r}")
    for key in ("alpha",):
        if o[key] is not None and not o[key] > 0:
            raise UsageError("alpha must be positive")
    if o["delta"] is not None and not o["delta"] > 1:
        raise UsageError("delta must exceed 1")
    if o["tabulate"] not in LAWS:
        raise UsageError(f"unknown law {o['tabulate']!r}")
    if o["grid"] is not None:
        _parse_grid(o["grid"])
    o["n_grid"] = [int(v) for v in o["n_grid"]]
    if o["statistics"] is not None:
        o["statistics"] = [str(s) for s in o["statistics"]]
    o["inputs"] = [str(p) for p in o["inputs"]]
    if o["model"] is None:
        o["model"] = _DEFAULT_MODEL.get(sub)
    if sub == "urns" and o["model"] not in ("urn-random", "urn-det"):
        raise UsageError("urns needs --model urn-random or urn-det")
    if sub == "campaign":
        if o["model"] not in MODEL_STATISTICS:
            raise UsageError(f"unknown model {o['model']!r}")
        try:
            _plan(o)
        except PlanError as exc:
            raise UsageError(str(exc)) from None


def _parse_grid(text) -> np.ndarray:
    try:
        a, b, n = str(text).split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise UsageError(f"grid must look like start:stop:count, got {text!r}") from None
    if n < 2 or not b > a:
        raise UsageError("grid needs stop > start and at least 2 points")
    return np.linspace(a, b, n)


def parse(argv) -> CommandSpec:
    """Parse arguments into a validated :class:`CommandSpec`; raises UsageError."""
    ns = _build_parser().parse_args(list(argv))
    sub = ns.subcommand
    flags = {k: v for k, v in vars(ns).items() if k not in ("subcommand", "config") and v is not None}
    if sub in ("fit", "report") and not flags.get("inputs"):
        flags.pop("inputs", None)
    opts = dict(DEFAULTS)
    if ns.config:
        opts.update(_load_config(ns.config))
    opts.update(flags)
    _validate(sub, opts)
    return CommandSpec(sub, opts, ns.config)


def serialize(spec: CommandSpec) -> list[str]:
    """Arguments that parse back to an equivalent command (config already folded in)."""
    argv = [spec.subcommand]
    o = spec.options
    for key, value in o.items():
        if key == "inputs" or value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        if value is True:
            argv.append(flag)
        elif isinstance(value, list):
            argv += [flag, ",".join(str(v) for v in value)]
        else:
            argv += [flag, repr(value) if isinstance(value, float) else str(value)]
    if o["inputs"] and spec.subcommand in ("fit", "report"):
        argv += list(o["inputs"])
    return argv


# ---------------------------------------------------------------------------
# execution

def _plan(o):
    from .campaign import Plan

    return Plan(o["model"], tuple(o["n_grid"]), o["reps"], master_seed=o["seed"], rho=o["rho"],
                alpha=o["alpha"], delta=o["delta"],
                statistics=tuple(o["statistics"]) if o["statistics"] else None,
                normalization=o["normalization"])


def _write_kv(path, pairs):
    from ._io import write_rows

    return write_rows(path, ("key", "value"), pairs)


def _cmd_simulate(spec: CommandSpec) -> int:
    from .peersim import Policy, SimConfig, run_sim
    from .plotting import plot_idle_trace
    from .rngcore import SeedSpec

    o = spec.options
    cfg = SimConfig(o["n"], o["rho"], Policy.parse(o["policy"]), SeedSpec(o["seed"], o["stream"]),
                    trace_step=o["trace_step"], run_to_completion=o["completion"],
                    trace_horizon=math.inf if o["t_max"] is None else o["t_max"])
    record, trace = run_sim(cfg)
    names = ("t1", "t2", "t3", "t4", "nu1", "nu2", "nu3", "nu4", "completion_time",
             "prop1_violations", "n_events")
    pairs = [(k, record.get(k)) for k in names]
    _write_kv(spec.out / "milestones.csv", pairs)
    for k, v in pairs:
        print(f"{k:>16} {'-' if v is None else v}")
    if o["trace_step"] > 0:
        trace.to_csv(spec.out / "trace.csv")
        plot_idle_trace(trace, spec.out / "trace.png",
                        title=f"N={o['n']}, rho={o['rho']:g}, {o['policy']}")
        print(f"trace: {len(trace)} samples -> {spec.out / 'trace.csv'}")
    return EXIT_OK


def _cmd_urns(spec: CommandSpec) -> int:
    from . import asymptotics as asy
    from .rngcore import SeedSpec, derive_stream
    from .urnball import (DetUrnProfile, count_empty_upto, expected_W_exact, first_low_urn,
                          nu3_index, throw_balls_det, throw_balls_random, time_of_index)

    o = spec.options
    stream = derive_stream(SeedSpec(o["seed"], o["stream"]))
    n = o["n"]
    pairs = [("model", o["model"]), ("N", n)]
    if o["model"] == "urn-random":
        k = max(1, math.floor(asy.kappa_random(n, o["rho"])))
        occ = throw_balls_random(n, o["rho"], stream, method=o["method"], min_urns=k)
        nu = first_low_urn(occ)
        pairs += [("nuR", nu), ("kappa", k), ("W_at_kappa", count_empty_upto(occ, k)),
                  ("nu3", nu3_index(occ, o["rho"]))]
        if nu <= occ.realization.k_max:
            pairs.append(("TR", time_of_index(occ.realization, nu)))
        occ.realization.to_csv(spec.out / "realization.csv")
    else:
        if n < 3:
            raise UsageError("urn-det needs n >= 3")
        alpha = o["alpha"] if o["alpha"] is not None else o["rho"] * math.gamma(o["rho"] + 1)
        delta = o["delta"] if o["delta"] is not None else o["rho"] + 1
        k = asy.kappa_x(n, alpha, delta)
        profile = DetUrnProfile.power_law(alpha, delta, 8 * k + 64, o["normalization"])
        occ = throw_balls_det(n, profile, stream)
        pairs += [("alpha", alpha), ("delta", delta), ("nuD", first_low_urn(occ)),
                  ("kappa", k), ("W_at_kappa", count_empty_upto(occ, k)),
                  ("E_W_exact", expected_W_exact(n, profile, k))]
    occ.to_csv(spec.out / "occupancy.csv")
    _write_kv(spec.out / "urns.csv", pairs)
    for key, v in pairs:
        print(f"{key:>12} {v}")
    return EXIT_OK


def _cmd_limits(spec: CommandSpec) -> int:
    from . import asymptotics as asy
    from ._io import write_table_csv
    from .plotting import plot_law

    o = spec.options
    law = o["tabulate"]
    rho = o["rho"]
    alpha = o["alpha"] if o["alpha"] is not None else 1.0
    delta = o["delta"] if o["delta"] is not None else 3.0
    default_grid = {"nuR": "0:3:301", "nuD": "-3:3:301", "gumbel": "-3:6:301",
                    "weibull": "0:10:301", "W": "0:20:21"}
    xs = _parse_grid(o["grid"] or default_grid[law])
    if law == "nuR":
        vals, name = asy.rand_nu_limit_tail(xs, rho), "tail"
    elif law == "nuD":
        vals, name = asy.det_nu_limit_tail(xs, alpha, delta), "tail"
    elif law == "gumbel":
        vals, name = asy.gumbel_cdf(xs), "cdf"
    elif law == "weibull":
        if np.any(xs < 0):
            raise UsageError("weibull grid must be non-negative")
        vals, name = asy.weibull_tail(xs, rho), "tail"
    else:
        xs = np.unique(np.round(xs).astype(int))
        if xs[0] < 0:
            raise UsageError("W grid must be non-negative")
        vals = np.array([asy.mixed_poisson_pmf(int(j), o["x"], rho) for j in xs])
        name = "pmf"
    path = spec.out / f"limit_{law}.csv"
    write_table_csv(path, xs, np.atleast_1d(vals), name)
    plot_law(xs, np.atleast_1d(vals), spec.out / f"limit_{law}.png", ylabel=name)
    print(f"{len(xs)} points of the {law} law -> {path}")
    return EXIT_OK


def _cmd_campaign(spec: CommandSpec) -> int:
    from .campaign import estimates_to_csv, fit_all, fits_to_csv, run_campaign
    from .plotting import plot_growth

    o = spec.options
    plan = _plan(o)
    est = run_campaign(plan, workers=o["workers"],
                       progress=lambda N: print(f"N={N} done", file=sys.stderr))
    estimates_to_csv(spec.out / "estimates.csv", est)
    for e in est:
        print(f"{e.N:>10} {e.statistic:>10} {e.mean:>14.6g} {e.stderr:>12.4g}")
    if o["fit"]:
        fits = fit_all(est)
        fits_to_csv(spec.out / "fits.csv", fits)
        plot_growth(est, fits, spec.out / "growth.png")
        for f in fits:
            print(f"fit {f.statistic:>10} {f.mode:>8} slope {f.slope:.4f} r2 {f.r_squared:.4f}")
    return EXIT_OK


def _read_inputs(paths):
    from .campaign import read_estimates, read_fits

    if not paths:
        raise RuntimeError("no input tables given")
    estimates, fits = [], []
    for p in paths:
        with open(p) as fh:
            header = fh.readline().strip().split(",")
        if "slope" in header:
            fits += read_fits(p)
        elif "statistic" in header:
            estimates += read_estimates(p)
        else:
            raise RuntimeError(f"{p}: neither an estimate nor a slope-fit table")
    if not estimates and not fits:
        raise RuntimeError("input tables are empty")
    return estimates, fits


def _cmd_fit(spec: CommandSpec) -> int:
    from .campaign import fit_all, fits_to_csv

    estimates, _ = _read_inputs(spec.options["inputs"])
    fits = fit_all(estimates)
    if not fits:
        raise RuntimeError("nothing to fit (need 3 or more grid points per statistic)")
    fits_to_csv(spec.out / "fits.csv", fits)
    for f in fits:
        print(f"{f.model:>15} {f.statistic:>10} {f.mode:>8} slope {f.slope:.4f} r2 {f.r_squared:.4f}")
    return EXIT_OK


def _cmd_report(spec: CommandSpec) -> int:
    from ._io import atomic_write_text
    from .campaign import compare_table1, fit_all
    from .plotting import plot_growth

    o = spec.options
    estimates, fits = _read_inputs(o["inputs"])
    if estimates:
        fitted = {(f.model, f.policy, f.statistic) for f in fits}
        fits += [f for f in fit_all(estimates) if (f.model, f.policy, f.statistic) not in fitted]
        plot_growth(estimates, fits, spec.out / "growth.png")
    report = compare_table1(fits, tolerance=o["tolerance"], rho=o["rho"])
    text = report.render()
    atomic_write_text(spec.out / "report.txt", text)
    report.to_csv(spec.out / "report.csv")
    sys.stdout.write(text)
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "urns": _cmd_urns,
    "limits": _cmd_limits,
    "campaign": _cmd_campaign,
    "fit": _cmd_fit,
    "report": _cmd_report,
}


def execute(spec: CommandSpec) -> int:
    try:
        spec.out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[spec.subcommand](spec)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RuntimeError, ValueError, ArithmeticError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv=None) -> int:
    try:
        spec = parse(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    return execute(spec)


if __name__ == "__main__":
    sys.exit(main())
