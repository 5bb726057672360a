"""Exit criteria of the build, each run at its stated tolerance.

Every test prints one ``PASS criterion N: ...`` or ``FAIL criterion N: ...``
line (collected again in the terminal summary) and then asserts.  Run alone
with ``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
"""

import math
import sys

import numpy as np
import pytest

from acceptance_data import URN_SEED, fit_of
from conftest import record_acceptance
from flashcrowd import asymptotics as asy
from flashcrowd.campaign import (Plan, ks_against_law, run_campaign, sample_statistics,
                                 tv_distance, var_over_mean)
from flashcrowd.cli import main as cli_main
from flashcrowd.peersim import SimConfig, run_sim
from flashcrowd.rngcore import SeedSpec, derive_stream
from flashcrowd.urnball import (DetUrnProfile, cell_probabilities, count_empty_upto,
                                expected_W_exact, realize_T_batch, throw_balls_det,
                                throw_balls_random)

pytestmark = pytest.mark.acceptance


def verdict(number, checks):
    """Record one line for the criterion; ``checks`` is a list of (ok, text)."""
    ok = all(c for c, _ in checks)
    detail = "; ".join(f"{text} [{'ok' if c else 'MISS'}]" for c, text in checks)
    record_acceptance(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    return ok


def in_band(value, lo, hi):
    return lo <= value <= hi


# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_1_first_regime_slopes(peersim_campaigns):
    checks = []
    for policy, (_, fits, _) in peersim_campaigns.items():
        t1 = fit_of(fits, "t1").slope
        nu1 = fit_of(fits, "nu1").slope
        checks.append((in_band(t1, 0.22, 0.29), f"{policy} t1 semilog {t1:.4f} in [0.22, 0.29]"))
        checks.append((in_band(nu1, 0.22, 0.28), f"{policy} nu1 loglog {nu1:.4f} in [0.22, 0.28]"))
    assert verdict(1, checks)


@pytest.mark.slow
def test_criterion_2_second_regime_slopes(peersim_campaigns):
    min_fits = peersim_campaigns["min"][1]
    rand_fits = peersim_campaigns["random"][1]
    nu2 = fit_of(min_fits, "nu2").slope
    t2 = fit_of(min_fits, "t2").slope
    t4_min = fit_of(min_fits, "t4").slope
    t4_rand = fit_of(rand_fits, "t4").slope
    checks = [
        (abs(nu2 - 0.3765) <= 0.05, f"min nu2 loglog {nu2:.4f} vs 0.3765 +/- 0.05"),
        (abs(t2 - 0.5146) <= 0.06, f"min t2 semilog {t2:.4f} vs 0.5146 +/- 0.06"),
        (abs(t4_min - 0.3287) <= 0.05, f"min t4 semilog {t4_min:.4f} vs 0.3287 +/- 0.05"),
        (abs(t4_rand - 0.2530) <= 0.05, f"random t4 semilog {t4_rand:.4f} vs 0.2530 +/- 0.05"),
    ]
    assert verdict(2, checks)


def test_criterion_3_idle_fraction_transition():
    cfg = SimConfig(10 ** 6, 5 / 6, "min", SeedSpec(7, 0), trace_step=0.05, trace_horizon=12.0)
    _, trace = run_sim(cfg)
    t, idle = trace.t, trace.idle_fraction
    early = idle[(t > 0) & (t <= 6 + 1e-9)]
    at10 = float(idle[np.argmin(np.abs(t - 10.0))])
    checks = [
        (float(early.max()) <= 0.05, f"max idle on (0, 6] = {early.max():.4f} <= 0.05"),
        (at10 >= 0.5, f"idle at t=10 = {at10:.4f} >= 0.5"),
    ]
    assert verdict(3, checks)


@pytest.mark.slow
def test_criterion_4_no_two_empty_servers_under_min(peersim_campaigns):
    samples = peersim_campaigns["min"][2]
    total = int(sum(np.nansum(raw["prop1"]) for raw in samples.values()))
    runs = sum(len(raw["prop1"]) for raw in samples.values())
    assert verdict(4, [(total == 0, f"{total} violations over {runs} Min runs")])


@pytest.mark.slow
def test_criterion_5_deterministic_limits():
    N = 10 ** 6
    plan = Plan("urn-det", (N,), 2000, master_seed=URN_SEED, alpha=1.0, delta=3.0)
    raw = sample_statistics(plan, N)
    w = raw["W_at_kappa"]
    mean = float(np.mean(w))
    target = asy.limit_mean_W(1.0, 3.0, 1.0)
    ratio = var_over_mean(w)
    tv = tv_distance(w, lambda j: math.exp(-mean + j * math.log(mean) - math.lgamma(j + 1)))
    z = asy.det_nu_recenter(raw["nuD"], N, 1.0, 3.0)
    ks = ks_against_law(z, tail=lambda x: asy.det_nu_limit_tail(x, 1.0, 3.0))
    checks = [
        (abs(mean - target) <= 0.10 * target,
         f"mean W at kappa=75 {mean:.4f} within 10% of {target:.4f}"),
        (in_band(ratio, 0.9, 1.1), f"var/mean {ratio:.4f} in [0.9, 1.1]"),
        (tv <= 0.05, f"TV to Poisson(mean) {tv:.4f} <= 0.05"),
        (ks <= 0.05, f"KS recentred nu^D {ks:.4f} <= 0.05"),
    ]
    assert verdict(5, checks)


@pytest.mark.slow
def test_criterion_6_random_limits():
    N, rho = 10 ** 6, 2.0
    plan = Plan("urn-random", (N,), 2000, master_seed=URN_SEED, rho=rho)
    raw = sample_statistics(plan, N)
    ks = ks_against_law(raw["nuR"] / N ** 0.25, tail=lambda x: asy.rand_nu_limit_tail(x, rho))
    tv = tv_distance(raw["W_at_kappa"], lambda j: asy.mixed_poisson_pmf(j, 1.0, rho))
    ratio = float(np.mean(raw["TR"])) / math.log(N)
    checks = [
        (ks <= 0.08, f"KS nu^R/N^(1/4) {ks:.4f} <= 0.08"),
        (tv <= 0.08, f"TV W at kappa vs mixed Poisson {tv:.4f} <= 0.08"),
        (in_band(ratio, 0.22, 0.28), f"E[T^R]/ln N {ratio:.4f} in [0.22, 0.28]"),
    ]
    assert verdict(6, checks)


def test_criterion_7_exact_oracles():
    checks = []
    # expected_W_exact against Monte Carlo
    N, reps = 10 ** 4, 2000
    k = asy.kappa_x(N, 1.0, 3.0)
    profile = DetUrnProfile.power_law(1.0, 3.0, 8 * k + 64, normalization="head")
    s = derive_stream(SeedSpec(URN_SEED, 7))
    w = np.array([count_empty_upto(throw_balls_det(N, profile, s), k) for _ in range(reps)])
    exact = expected_W_exact(N, profile, k)
    se = w.std(ddof=1) / math.sqrt(reps)
    checks.append((abs(w.mean() - exact) < 3 * se,
                   f"W MC {w.mean():.4f} vs exact {exact:.4f} (3 se = {3 * se:.4f})"))
    # E[P_n] at rho=1 and the truncated-mass identity on every realization
    E, T = realize_T_batch(5, 10 ** 6, derive_stream(SeedSpec(URN_SEED, 8)))
    P = cell_probabilities(1.0, E, T)
    for n in (1, 2, 5):
        col = P[:, n - 1]
        se = col.std(ddof=1) / 1000
        checks.append((abs(col.mean() - 1 / (n * (n + 1))) < 3 * se,
                       f"E[P_{n}] {col.mean():.6f} vs {1 / (n * (n + 1)):.6f}"))
    gap = float(np.max(np.abs(np.cumsum(P, axis=1) + np.expm1(-T[:, 1:]))))
    checks.append((gap <= 1e-12, f"truncated-mass identity max gap {gap:.1e}"))
    # Poisson approximation bound and the Weibull moment
    devs = []
    for n in (1, 10, 100, 1000, 10_000):
        try:
            devs.append(asy.poisson_bound_check(n) <= 2 / n)
        except asy.BoundViolation:
            devs.append(False)
    checks.append((all(devs), "sup|e^-Nx - (1-x)^N| <= 2/N for N = 1..1e4"))
    m = asy.moment_X_n(10 ** 6, 1.0, 2.0)
    checks.append((in_band(m, 1.98, 2.02), f"E X_1e6 at rho=2 = {m:.5f} in [1.98, 2.02]"))
    assert verdict(7, checks)


def test_criterion_8_mass_concentration():
    N, reps = 10 ** 4, 2000
    s = derive_stream(SeedSpec(URN_SEED, 9))
    hits = sum(throw_balls_random(N, 2.0, s, method="sort").eta[0] >= 0.95 * N for _ in range(reps))
    freq = hits / reps
    assert verdict(8, [(in_band(freq, 0.15, 0.30),
                        f"P(eta_1 >= 0.95 N) {freq:.4f} in [0.15, 0.30] (closed form 0.2236)")])


@pytest.mark.slow
def test_criterion_9_byte_identical_outputs(tmp_path):
    checks = []
    campaigns = [
        ["--model", "peersim-random", "--n-grid", "1000,10000,100000", "--reps", "60"],
        ["--model", "urn-random", "--n-grid", "1000,10000,100000,1000000", "--reps", "200"],
        ["--model", "urn-det", "--n-grid", "1000,10000,100000", "--reps", "200"],
    ]
    for argv in campaigns:
        outputs = []
        for workers in ("1", "3"):
            out = tmp_path / f"{argv[1]}-{workers}"
            code = cli_main(["campaign", *argv, "--seed", "99", "--fit", "--workers", workers,
                             "--out", str(out)])
            assert code == 0
            outputs.append(((out / "estimates.csv").read_bytes(), (out / "fits.csv").read_bytes()))
        checks.append((outputs[0] == outputs[1], f"{argv[1]} CSVs identical for 1 and 3 workers"))
    assert verdict(9, checks)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s", "-p", "no:cacheprovider"]))
