"""Monte Carlo campaigns over grids of N, estimators and slope fits.

Replication ``r`` at size ``N`` always draws from stream
``(master_seed, mix64(N) ^ r)``, so growing the grid or the replication count
never changes cells that were already computed.  Replications may run on a
thread pool (the compiled kernels release the GIL); their results land in
per-index slots and are reduced sequentially with ``math.fsum``, which makes
every table independent of the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from . import asymptotics as asy
from ._io import read_rows, write_rows
from .peersim import Policy, milestone_arrays
from .rngcore import Stream, derive_states, mix64
from .urnball import (
    DetUrnProfile,
    PrefixExhausted,
    count_empty_upto,
    first_low_urn,
    nu3_index,
    throw_balls_det,
    throw_balls_random,
)

__all__ = [
    "MODELS",
    "MODEL_STATISTICS",
    "PlanError",
    "Plan",
    "Estimate",
    "SlopeFit",
    "Table1Row",
    "Table1Report",
    "TABLE1",
    "stream_ids",
    "sample_statistics",
    "run_campaign",
    "estimates_to_csv",
    "read_estimates",
    "fit_slope",
    "fit_all",
    "fits_to_csv",
    "read_fits",
    "compare_table1",
    "ks_against_law",
    "var_over_mean",
    "tv_distance",
    "default_fit_mode",
]

_PEER_STATS = ("nu1", "nu2", "nu3", "nu4", "t1", "t2", "t3", "t4", "prop1")
MODEL_STATISTICS = {
    "peersim-min": _PEER_STATS,
    "peersim-random": _PEER_STATS,
    "urn-random": ("nuR", "TR", "W_at_kappa", "nu3"),
    "urn-det": ("nuD", "TD", "W_at_kappa"),
}
MODELS = tuple(MODEL_STATISTICS)

# growth coefficients at rho = 2, columns nu1, t1, nu2, t2, nu4, t4
TABLE1 = {
    "min": {"nu1": 0.2478, "t1": 0.2565, "nu2": 0.3765, "t2": 0.5146, "nu4": 0.3149, "t4": 0.3287},
    "random": {"nu1": 0.2470, "t1": 0.2575, "nu2": 0.3711, "t2": 0.5078, "nu4": 0.2383, "t4": 0.2530},
}
TABLE1_COLUMNS = ("nu1", "t1", "nu2", "t2", "nu4", "t4")


class PlanError(ValueError):
    """Inconsistent campaign plan (unknown model, statistic not produced, bad grid)."""


@dataclass(frozen=True)
class Plan:
    """A campaign: one model, a grid of sizes, ``reps`` replications per size.

    For ``urn-det`` the profile defaults to ``alpha = rho * Gamma(rho + 1)``
    and ``delta = rho + 1``, matching the mean cell probabilities of the
    random model, normalized with the flat-head rule of
    :meth:`DetUrnProfile.power_law`.
    """

    model: str
    N_grid: tuple[int, ...]
    reps: int
    master_seed: int = 0
    rho: float = 2.0
    alpha: float | None = None
    delta: float | None = None
    statistics: tuple[str, ...] | None = None
    normalization: str = "head"

    def __post_init__(self):
        if self.model not in MODEL_STATISTICS:
            raise PlanError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        grid = tuple(int(n) for n in self.N_grid)
        if not grid:
            raise PlanError("N_grid is empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise PlanError("N_grid must be strictly increasing")
        if grid[0] < 1:
            raise PlanError("sizes must be positive")
        if self.model == "urn-det" and grid[0] < 3:
            raise PlanError("urn-det needs N >= 3")
        object.__setattr__(self, "N_grid", grid)
        if int(self.reps) < 1:
            raise PlanError("reps must be at least 1")
        object.__setattr__(self, "reps", int(self.reps))
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise PlanError("rho must be positive")
        allowed = MODEL_STATISTICS[self.model]
        chosen = allowed if self.statistics is None else tuple(self.statistics)
        bad = [s for s in chosen if s not in allowed]
        if bad:
            raise PlanError(f"model {self.model} does not produce {', '.join(bad)}")
        if not chosen:
            raise PlanError("no statistics requested")
        object.__setattr__(self, "statistics", chosen)
        if self.model == "urn-det":
            alpha = self.rho * math.gamma(self.rho + 1.0) if self.alpha is None else self.alpha
            delta = self.rho + 1.0 if self.delta is None else self.delta
            if not alpha > 0 or not delta > 1:
                raise PlanError("urn-det needs alpha > 0 and delta > 1")
            object.__setattr__(self, "alpha", float(alpha))
            object.__setattr__(self, "delta", float(delta))

    @property
    def policy(self) -> str:
        return self.model.split("-")[1] if self.model.startswith("peersim") else ""


@dataclass(frozen=True)
class Estimate:
    model: str
    policy: str
    rho: float
    N: int
    reps: int
    statistic: str
    mean: float
    stderr: float


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    mode: str
    grid: tuple[int, ...] = ()
    statistic: str = ""
    model: str = ""
    policy: str = ""


def stream_ids(N: int, reps: int) -> np.ndarray:
    return np.uint64(mix64(int(N))) ^ np.arange(reps, dtype=np.uint64)


# ---------------------------------------------------------------------------
# one replication per model; each returns values in MODEL_STATISTICS order

def _peersim_rep(N, plan, state, _ctx):
    policy = Policy.RANDOM if plan.model == "peersim-random" else Policy.MIN
    times, ints = milestone_arrays(N, plan.rho, policy, state)
    nus = [float(v) if v >= 0 else math.nan for v in ints[:4]]
    ts = [float(v) if v >= 0 else math.nan for v in times[:4]]
    return nus + ts + [float(ints[4])]


def _extend_T(stream: Stream, E: np.ndarray, upto: int) -> float:
    """T_upto from a realization whose prefix may be shorter than ``upto``."""
    n0 = len(E)
    t = math.fsum(E / np.arange(1, n0 + 1)) if n0 else 0.0
    for n in range(n0 + 1, upto + 1):
        t += stream.exp_sample(1.0) / n
    return t


def _urn_random_rep(N, plan, state, ctx):
    stream = Stream(state)
    occ = throw_balls_random(N, plan.rho, stream, method="binomial", min_urns=ctx["k"])
    E = occ.realization.E
    nu = first_low_urn(occ)
    T = float(occ.realization.T[nu]) if nu <= len(E) else _extend_T(stream, E, nu)
    return [float(nu), T, float(count_empty_upto(occ, ctx["k"])),
            float(nu3_index(occ, plan.rho))]


def _urn_det_rep(N, plan, state, ctx):
    stream = Stream(state)
    profile = ctx["profile"]
    occ = throw_balls_det(N, profile, stream)
    try:
        nu = first_low_urn(occ)
    except PrefixExhausted:
        # rare: retry the same replication on a longer profile from a fresh copy
        stream = Stream(ctx["fresh"].copy())
        longer = _det_profile(plan, N, scale=8)
        occ = throw_balls_det(N, longer, stream)
        nu = first_low_urn(occ)
    T = _extend_T(stream, np.empty(0), nu)
    return [float(nu), T, float(count_empty_upto(occ, ctx["k"]))]


def _det_profile(plan: Plan, N: int, scale: int = 1) -> DetUrnProfile:
    kappa = asy.kappa_x(N, plan.alpha, plan.delta)
    return DetUrnProfile.power_law(plan.alpha, plan.delta, scale * (8 * kappa + 64),
                                   normalization=plan.normalization)


def _context(plan: Plan, N: int) -> dict:
    if plan.model == "urn-random":
        return {"k": max(1, math.floor(asy.kappa_random(N, plan.rho)))}
    if plan.model == "urn-det":
        return {"k": asy.kappa_x(N, plan.alpha, plan.delta), "profile": _det_profile(plan, N)}
    return {}


_REP = {
    "peersim-min": _peersim_rep,
    "peersim-random": _peersim_rep,
    "urn-random": _urn_random_rep,
    "urn-det": _urn_det_rep,
}


def sample_statistics(plan: Plan, N: int, workers: int = 1) -> dict[str, np.ndarray]:
    """Raw per-replication values of every requested statistic at size ``N``.

    Unreached milestones are NaN.  Row ``r`` always comes from replication ``r``.
    """
    all_stats = MODEL_STATISTICS[plan.model]
    states = derive_states(plan.master_seed, stream_ids(N, plan.reps))
    ctx = _context(plan, N)
    rep = _REP[plan.model]
    out = np.empty((plan.reps, len(all_stats)))

    def work(lo, hi):
        local = dict(ctx)
        for r in range(lo, hi):
            local["fresh"] = states[r].copy()
            out[r] = rep(N, plan, states[r].copy(), local)

    workers = max(1, int(workers))
    if workers == 1:
        work(0, plan.reps)
    else:
        bounds = np.linspace(0, plan.reps, min(workers * 4, plan.reps) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for fut in [pool.submit(work, a, b) for a, b in zip(bounds, bounds[1:])]:
                fut.result()
    return {s: out[:, all_stats.index(s)] for s in plan.statistics}


def _mean_stderr(x: np.ndarray) -> tuple[float, float, int]:
    x = x[np.isfinite(x)]
    n = len(x)
    if n == 0:
        return math.nan, math.nan, 0
    mean = math.fsum(x) / n
    if n == 1:
        return mean, 0.0, 1
    var = math.fsum((x - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n), n


def run_campaign(plan: Plan, workers: int = 1,
                 progress: Callable[[int], None] | None = None,
                 samples: dict | None = None) -> list[Estimate]:
    """Estimates for every ``(N, statistic)`` cell, grid-major.

    If ``samples`` is a dict it is filled with the raw arrays, keyed by N.
    """
    rows = []
    for N in plan.N_grid:
        raw = sample_statistics(plan, N, workers)
        if samples is not None:
            samples[N] = raw
        for stat in plan.statistics:
            mean, se, n = _mean_stderr(raw[stat])
            rows.append(Estimate(plan.model, plan.policy, plan.rho, N, n, stat, mean, se))
        if progress is not None:
            progress(N)
    return rows


ESTIMATE_HEADER = ("model", "policy", "rho", "N", "reps", "statistic", "mean", "stderr")
FIT_HEADER = ("model", "policy", "statistic", "mode", "slope", "intercept", "r_squared", "grid")


def estimates_to_csv(path, estimates: Iterable[Estimate]):
    return write_rows(path, ESTIMATE_HEADER,
                      ((e.model, e.policy, float(e.rho), e.N, e.reps, e.statistic,
                        float(e.mean), float(e.stderr)) for e in estimates))


def read_estimates(path) -> list[Estimate]:
    rows = read_rows(path)
    missing = set(ESTIMATE_HEADER) - set(rows[0] if rows else ESTIMATE_HEADER)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    return [Estimate(r["model"], r["policy"], float(r["rho"]), int(r["N"]), int(r["reps"]),
                     r["statistic"], float(r["mean"]), float(r["stderr"])) for r in rows]


# ---------------------------------------------------------------------------
# fits and comparisons

def default_fit_mode(statistic: str) -> str:
    """Indices grow polynomially (loglog), times logarithmically (semilog)."""
    return "semilog" if statistic.lower().startswith("t") else "loglog"


def fit_slope(estimates: Sequence[Estimate], mode: str) -> SlopeFit:
    """Unweighted least squares of ``log mean`` (loglog) or ``mean`` (semilog) on ``log N``."""
    if mode not in ("loglog", "semilog"):
        raise ValueError(f"mode must be loglog or semilog, got {mode!r}")
    pts = sorted(estimates, key=lambda e: e.N)
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points for a slope, got {len(pts)}")
    names = {(e.model, e.policy, e.statistic) for e in pts}
    if len(names) > 1:
        raise ValueError("estimates mix several statistics; filter first")
    x = np.log([float(e.N) for e in pts])
    y = np.array([e.mean for e in pts], dtype=float)
    if mode == "loglog":
        if np.any(y <= 0):
            raise ValueError("loglog fit needs positive means")
        y = np.log(y)
    res = sps.linregress(x, y)
    resid = y - (res.intercept + res.slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    model, policy, stat = names.pop()
    return SlopeFit(float(res.slope), float(res.intercept), min(1.0, max(0.0, r2)), mode,
                    tuple(e.N for e in pts), stat, model, policy)


def fit_all(estimates: Sequence[Estimate], modes: Mapping[str, str] | None = None) -> list[SlopeFit]:
    """One fit per (model, policy, statistic); cells that cannot be fitted are skipped."""
    groups: dict[tuple, list[Estimate]] = {}
    for e in estimates:
        groups.setdefault((e.model, e.policy, e.statistic), []).append(e)
    fits = []
    for (_, _, stat), pts in groups.items():
        if len(pts) < 3 or not all(math.isfinite(p.mean) for p in pts):
            continue
        mode = (modes or {}).get(stat, default_fit_mode(stat))
        if mode == "loglog" and any(p.mean <= 0 for p in pts):
            continue
        fits.append(fit_slope(pts, mode))
    return fits


def fits_to_csv(path, fits: Iterable[SlopeFit]):
    return write_rows(path, FIT_HEADER,
                      ((f.model, f.policy, f.statistic, f.mode, f.slope, f.intercept,
                        f.r_squared, " ".join(str(n) for n in f.grid)) for f in fits))


def read_fits(path) -> list[SlopeFit]:
    rows = read_rows(path)
    if rows and set(FIT_HEADER) - set(rows[0]):
        raise ValueError(f"{path}: not a slope-fit table")
    return [SlopeFit(float(r["slope"]), float(r["intercept"]), float(r["r_squared"]), r["mode"],
                     tuple(int(n) for n in r["grid"].split()), r["statistic"], r["model"],
                     r["policy"]) for r in rows]


@dataclass(frozen=True)
class Table1Row:
    policy: str
    statistic: str
    reference: float | None
    fitted: float | None
    deviation: float | None
    flagged: bool
    theory: float | None = None
    grid: tuple[int, ...] = ()


@dataclass
class Table1Report:
    rows: list[Table1Row] = field(default_factory=list)
    tolerance: float = 0.05
    rho: float = 2.0

    @property
    def gaps(self) -> list[tuple[str, str]]:
        return [(r.policy, r.statistic) for r in self.rows if r.fitted is None]

    def render(self) -> str:
        head = f"{'policy':<8}{'stat':<6}{'reference':>11}{'fitted':>10}{'|dev|':>9}{'theory':>9}  flag"
        lines = [f"growth coefficients, rho={self.rho:g}, tolerance {self.tolerance:g}",
                 "|dev| is against the reference, or against theory when no reference exists",
                 head,
                 "-" * len(head)]
        for r in self.rows:
            fitted = "missing" if r.fitted is None else f"{r.fitted:.4f}"
            dev = "" if r.deviation is None else f"{r.deviation:.4f}"
            theory = "" if r.theory is None else f"{r.theory:.4f}"
            flag = "GAP" if r.fitted is None else ("!" if r.flagged else "")
            ref = "-" if r.reference is None else f"{r.reference:.4f}"
            lines.append(f"{r.policy:<8}{r.statistic:<6}{ref:>11}{fitted:>10}"
                         f"{dev:>9}{theory:>9}  {flag}")
        grids = sorted({r.grid for r in self.rows if r.grid})
        for g in grids:
            lines.append("grid: " + ", ".join(str(n) for n in g))
        return "\n".join(lines) + "\n"

    def to_csv(self, path):
        return write_rows(path, ("policy", "statistic", "reference", "fitted", "deviation",
                                 "theory", "flagged"),
                          ((r.policy, r.statistic, r.reference, r.fitted, r.deviation,
                            r.theory, int(r.flagged)) for r in self.rows))


def compare_table1(fits: Iterable[SlopeFit], tolerance: float = 0.05,
                   rho: float = 2.0) -> Table1Report:
    """Fitted growth coefficients next to the published ones.

    Reference values are for rho = 2.  The theory column gives ``1/(rho+2)``
    for the first-regime pair; extra rows without a reference compare the
    rate-crossing pair with ``1/(rho+1)`` when those fits are present.
    Missing fits appear as gaps.
    """
    by_key = {}
    for f in fits:
        pol = f.policy or (f.model.split("-")[1] if f.model.startswith("peersim") else "")
        by_key[(pol, f.statistic)] = f
    first, crossing = 1.0 / (rho + 2.0), 1.0 / (rho + 1.0)
    theory = {"nu1": first, "t1": first, "nu3": crossing, "t3": crossing}
    report = Table1Report(tolerance=tolerance, rho=rho)
    for pol in ("min", "random"):
        for stat in TABLE1_COLUMNS:
            ref = TABLE1[pol][stat]
            f = by_key.get((pol, stat))
            if f is None:
                report.rows.append(Table1Row(pol, stat, ref, None, None, False, theory.get(stat)))
                continue
            dev = abs(f.slope - ref)
            report.rows.append(Table1Row(pol, stat, ref, f.slope, dev, dev > tolerance,
                                         theory.get(stat), f.grid))
        for stat in ("nu3", "t3"):
            f = by_key.get((pol, stat))
            if f is not None:
                dev = abs(f.slope - theory[stat])
                report.rows.append(Table1Row(pol, stat, None, f.slope, dev, dev > tolerance,
                                             theory[stat], f.grid))
    return report


def ks_against_law(samples, cdf: Callable | None = None, tail: Callable | None = None) -> float:
    """Kolmogorov distance between the empirical CDF and a law.

    The law is given either as ``cdf(x) = P(X <= x)`` or as
    ``tail(x) = P(X >= x)``; with a tail the law is taken as continuous.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    if len(x) < 100:
        raise ValueError("need at least 100 samples")
    if (cdf is None) == (tail is None):
        raise ValueError("give exactly one of cdf or tail")
    F = np.asarray(cdf(x), dtype=float) if cdf is not None else 1.0 - np.asarray(tail(x), dtype=float)
    n = len(x)
    upper = np.arange(1, n + 1) / n - F
    lower = F - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def var_over_mean(samples) -> float:
    """Sample variance (ddof=1) over sample mean; NaN when the mean is zero."""
    x = np.asarray(samples, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least 2 samples")
    mean = math.fsum(x) / len(x)
    if mean == 0:
        return math.nan
    return math.fsum((x - mean) ** 2) / (len(x) - 1) / mean


def tv_distance(samples, pmf: Callable[[int], float], support_max: int | None = None) -> float:
    """Total variation between the empirical law of integer samples and ``pmf``.

    The reference mass not covered by ``0..support_max`` is counted in full.
    """
    x = np.asarray(samples).astype(np.int64)
    top = int(x.max()) if support_max is None else int(support_max)
    emp = np.bincount(x, minlength=top + 1)[: top + 1] / len(x)
    ref = np.array([pmf(j) for j in range(top + 1)])
    return 0.5 * (math.fsum(np.abs(emp - ref)) + max(0.0, 1.0 - math.fsum(ref)))
