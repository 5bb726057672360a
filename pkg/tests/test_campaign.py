import math

import numpy as np
import pytest
from scipy import stats

from flashcrowd import asymptotics as asy
from flashcrowd.campaign import (TABLE1, Estimate, Plan, PlanError, SlopeFit, compare_table1,
                                 estimates_to_csv, fit_all, fit_slope, fits_to_csv,
                                 ks_against_law, read_estimates, read_fits, run_campaign,
                                 stream_ids, tv_distance, var_over_mean)
from flashcrowd.peersim import SimConfig, run_sim
from flashcrowd.rngcore import SeedSpec, derive_stream, mix64, poisson
from flashcrowd.urnball import DetUrnProfile, expected_W_exact


def est(N, mean, stat="nu1", se=0.0):
    return Estimate("peersim-min", "min", 2.0, N, 10, stat, mean, se)


# ---------------------------------------------------------------------------
# plans

def test_plan_validation():
    with pytest.raises(PlanError):
        Plan("peersim-fast", (10, 100), 5)
    with pytest.raises(PlanError):
        Plan("peersim-min", (100, 10), 5)
    with pytest.raises(PlanError):
        Plan("peersim-min", (10, 10), 5)
    with pytest.raises(PlanError):
        Plan("peersim-min", (), 5)
    with pytest.raises(PlanError):
        Plan("peersim-min", (10,), 0)
    with pytest.raises(PlanError):
        Plan("urn-random", (10,), 5, statistics=("nu1",))
    with pytest.raises(PlanError):
        Plan("urn-det", (10,), 5, delta=1.0)
    p = Plan("urn-det", [100, 1000], 3, rho=2.0)
    assert p.N_grid == (100, 1000)
    assert p.alpha == pytest.approx(4.0) and p.delta == pytest.approx(3.0)
    assert Plan("peersim-random", (10,), 1).policy == "random"


def test_stream_ids_do_not_depend_on_grid():
    ids = stream_ids(1000, 4)
    assert list(ids) == [mix64(1000) ^ r for r in range(4)]


def test_single_replication_equals_run_sim():
    plan = Plan("peersim-min", (300, 2000), 1, master_seed=5)
    rows = run_campaign(plan)
    for N in plan.N_grid:
        rec, _ = run_sim(SimConfig(N, 2.0, "min", SeedSpec(5, mix64(N) ^ 0)))
        for e in (r for r in rows if r.N == N):
            assert e.mean == float(rec.get(e.statistic)), e.statistic
            assert e.stderr == 0.0 and e.reps == 1


def test_grid_extension_keeps_existing_cells():
    a = run_campaign(Plan("urn-random", (1000,), 50, master_seed=3))
    b = run_campaign(Plan("urn-random", (100, 1000), 50, master_seed=3))
    assert a == [e for e in b if e.N == 1000]


def test_stderr_shrinks_like_root_two():
    small = run_campaign(Plan("urn-random", (10_000,), 1000, master_seed=4, statistics=("TR",)))
    big = run_campaign(Plan("urn-random", (10_000,), 2000, master_seed=4, statistics=("TR",)))
    ratio = big[0].stderr / small[0].stderr
    assert abs(ratio - 1 / math.sqrt(2)) <= 0.2 / math.sqrt(2)


def test_same_plan_same_table_any_worker_count():
    plan = Plan("peersim-random", (500, 5000), 40, master_seed=9)
    one = run_campaign(plan, workers=1)
    assert run_campaign(plan, workers=1) == one
    assert run_campaign(plan, workers=3) == one


def test_estimate_csv_round_trip(tmp_path):
    rows = run_campaign(Plan("urn-det", (100, 1000), 20, master_seed=1))
    estimates_to_csv(tmp_path / "e.csv", rows)
    assert read_estimates(tmp_path / "e.csv") == rows
    header = (tmp_path / "e.csv").read_text().splitlines()[0]
    assert header == "model,policy,rho,N,reps,statistic,mean,stderr"


def test_det_W_matches_exact_mean_on_grid():
    plan = Plan("urn-det", (1000, 10_000, 100_000), 2000, master_seed=11, alpha=1.0, delta=3.0,
                statistics=("W_at_kappa",))
    for e in run_campaign(plan):
        k = asy.kappa_x(e.N, 1.0, 3.0)
        profile = DetUrnProfile.power_law(1.0, 3.0, 8 * k + 64, normalization="head")
        exact = expected_W_exact(e.N, profile, k)
        assert abs(e.mean - exact) < 3 * e.stderr, (e.N, e.mean, exact, e.stderr)


# ---------------------------------------------------------------------------
# slope fits

def test_semilog_line():
    pts = [est(N, 0.25 * math.log(N) + 1, "t1") for N in (10, 100, 1000, 10_000)]
    f = fit_slope(pts, "semilog")
    assert f.slope == pytest.approx(0.25, abs=1e-12)
    assert f.intercept == pytest.approx(1.0, abs=1e-12)
    assert f.r_squared == pytest.approx(1.0)
    assert f.grid == (10, 100, 1000, 10_000)


def test_loglog_power():
    pts = [est(N, N ** (1 / 3)) for N in (1000, 10 ** 6, 10 ** 9)]
    assert fit_slope(pts, "loglog").slope == pytest.approx(1 / 3, abs=1e-12)


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_slope([est(10, 1.0), est(100, 2.0)], "loglog")
    with pytest.raises(ValueError):
        fit_slope([est(10, 1.0), est(100, 2.0), est(1000, 3.0)], "linear")
    with pytest.raises(ValueError):
        fit_slope([est(10, 1.0), est(100, 0.0), est(1000, 3.0)], "loglog")
    with pytest.raises(ValueError):
        fit_slope([est(10, 1.0), est(100, 2.0, "t1"), est(1000, 3.0)], "semilog")


def test_r_squared_in_unit_interval():
    rng = np.random.default_rng(0)
    for _ in range(50):
        pts = [est(N, float(rng.uniform(1, 5))) for N in (10, 100, 1000, 10_000)]
        assert 0.0 <= fit_slope(pts, "loglog").r_squared <= 1.0
    flat = fit_slope([est(N, 2.0) for N in (10, 100, 1000)], "semilog")
    assert flat.slope == pytest.approx(0.0, abs=1e-15) and flat.r_squared == 1.0


def test_fit_all_modes_and_csv(tmp_path):
    rows = [est(N, N ** 0.25) for N in (10, 100, 1000)]
    rows += [est(N, 0.3 * math.log(N), "t1") for N in (10, 100, 1000)]
    rows += [est(N, 0.0, "prop1") for N in (10, 100, 1000)]
    fits = fit_all(rows)
    by = {f.statistic: f for f in fits}
    assert set(by) == {"nu1", "t1"}
    assert by["nu1"].mode == "loglog" and by["t1"].mode == "semilog"
    fits_to_csv(tmp_path / "f.csv", fits)
    assert read_fits(tmp_path / "f.csv") == fits


# ---------------------------------------------------------------------------
# reference comparison

def _reference_fits():
    return [SlopeFit(v, 0.0, 1.0, "loglog", (1, 2, 3), stat, f"peersim-{pol}", pol)
            for pol, row in TABLE1.items() for stat, v in row.items()]


def test_reference_values_give_zero_deviation():
    report = compare_table1(_reference_fits())
    assert len(report.rows) == 12 and not report.gaps
    assert all(r.deviation == 0.0 and not r.flagged for r in report.rows)
    text = report.render()
    assert "0.5146" in text and "GAP" not in text


def test_missing_fits_become_gaps(tmp_path):
    fits = [f for f in _reference_fits() if f.statistic != "t2"]
    report = compare_table1(fits)
    assert sorted(report.gaps) == [("min", "t2"), ("random", "t2")]
    assert "GAP" in report.render()
    report.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == \
        "policy,statistic,reference,fitted,deviation,theory,flagged"


def test_theory_columns_and_flags():
    fits = [SlopeFit(0.30, 0, 1, "loglog", (1, 2, 3), "nu1", "peersim-min", "min"),
            SlopeFit(0.40, 0, 1, "loglog", (1, 2, 3), "nu3", "peersim-min", "min")]
    report = compare_table1(fits, tolerance=0.05)
    row = {(r.policy, r.statistic): r for r in report.rows}
    assert row[("min", "nu1")].theory == pytest.approx(0.25)
    assert row[("min", "nu1")].deviation == pytest.approx(0.30 - 0.2478)
    assert row[("min", "nu1")].flagged
    assert row[("min", "nu3")].reference is None
    assert row[("min", "nu3")].theory == pytest.approx(1 / 3)
    assert row[("min", "nu3")].deviation == pytest.approx(0.40 - 1 / 3)


# ---------------------------------------------------------------------------
# distribution checks

def test_ks_samples_from_law():
    x = derive_stream(SeedSpec(60)).exponentials(10_000)
    assert ks_against_law(x, cdf=lambda t: -np.expm1(-t)) <= 0.02
    assert ks_against_law(x, tail=lambda t: np.exp(-t)) <= 0.02
    assert ks_against_law(x, cdf=lambda t: -np.expm1(-t)) == pytest.approx(
        stats.kstest(x, "expon").statistic, abs=1e-12)


def test_ks_constant_samples():
    assert ks_against_law(np.full(200, 0.0), cdf=stats.norm.cdf) >= 0.5


def test_ks_argument_errors():
    with pytest.raises(ValueError):
        ks_against_law(np.ones(99), cdf=stats.norm.cdf)
    with pytest.raises(ValueError):
        ks_against_law(np.ones(200))


def test_var_over_mean_examples():
    s = derive_stream(SeedSpec(61))
    x = [poisson(s, 5.0) for _ in range(100_000)]
    assert 0.97 <= var_over_mean(x) <= 1.03
    assert var_over_mean([3, 3, 3, 3]) == 0.0
    assert math.isnan(var_over_mean([0, 0, 0]))
    with pytest.raises(ValueError):
        var_over_mean([1])


def test_tv_distance():
    assert tv_distance([0, 1, 1, 2], lambda j: [0.25, 0.5, 0.25][j]) == pytest.approx(0.0)
    # all mass on 0 against a fair coin on {0, 1}
    assert tv_distance([0] * 10, lambda j: 0.5 if j < 2 else 0.0, support_max=1) == pytest.approx(0.5)
    # uncovered reference mass counts in full
    assert tv_distance([0] * 10, lambda j: 0.5, support_max=0) == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# link between index and time exponents (shared rho=2 campaigns)

@pytest.mark.slow
def test_index_and_time_exponents_agree(peersim_campaigns):
    from acceptance_data import fit_of

    for policy, (_, fits, _) in peersim_campaigns.items():
        gap = abs(fit_of(fits, "nu1").slope - fit_of(fits, "t1").slope)
        assert gap <= 0.03, (policy, gap)
