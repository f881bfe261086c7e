import math
from dataclasses import replace

import numpy as np
import pytest

from nfdtoll import sbo
from nfdtoll.control import ScalePair
from nfdtoll.plant import run_horizon
from nfdtoll.tolling import TollSchedule

from conftest import SMALL_KCR


@pytest.fixture(scope="module")
def base(small_grid):
    return sbo.baseline(small_grid, 0, SMALL_KCR)


@pytest.fixture(scope="module")
def distance_run(small_grid, base):
    return sbo.optimize(small_grid, "distance", 0, base=base)


@pytest.fixture(scope="module")
def cordon_run(small_grid, base):
    return sbo.optimize(small_grid, "cordon", 0, base=base)


def _check_converged(run):
    assert run.status == "converged", [it.k_max for it in run.iterations]
    assert len(run.iterations) <= 30
    last_two = run.iterations[-2:]
    for it in last_two:
        for k, r in zip(it.k_max, it.rates):
            assert abs(k - run.critical.k_cr) <= run.eps or (k < run.critical.k_cr - run.eps and not any(r.values()))


def test_distance_converges(distance_run):
    _check_converged(distance_run)
    assert distance_run.iterations[0].rates[0]["alpha"] == 0.0  # run 1 is the baseline
    assert distance_run.rate("alpha")[-1] > 0
    assert distance_run.schedule.model == "distance"


def test_cordon_converges(cordon_run):
    _check_converged(cordon_run)
    assert cordon_run.rate("cordon_fee")[-1] > 0


def test_time_and_jdtt_converge(small_grid, base, cordon_run):
    for model in ("time", "jdtt"):
        run = sbo.optimize(small_grid, model, 0, base=base, reference=cordon_run)
        _check_converged(run)
        assert run.scale is not None and run.scale.vbar > 0


def test_jdtt_ratio_held_every_iterate(small_grid, base, cordon_run):
    run = sbo.optimize(small_grid, "jdtt", 0, base=base, reference=cordon_run)
    mu = run.scale
    for it in run.iterations[1:]:
        r = it.rates[0]
        if r["alpha"] < small_grid.control.alpha_max and r["beta1"] < small_grid.control.beta_max:
            assert r["beta1"] * mu.mu_alpha == pytest.approx(r["alpha"] * mu.mu_beta1, rel=1e-12)


def test_uncongested_needs_no_pricing(small_grid):
    run = sbo.optimize(small_grid.with_demand_multiplier(0.1), "distance", 0)
    assert run.status == "no-pricing-needed"
    assert run.schedule is None


def test_forced_iteration_cap(small_grid, base):
    cfg = replace(small_grid.control, n_max=2, eps_frac=1e-6)
    run = sbo.optimize(small_grid, "distance", 0, config=cfg, base=base)
    assert run.status == "iteration-cap"
    assert len(run.iterations) == 2


def test_scale_required_models_need_converged_reference(small_grid, base):
    bad = sbo.optimize(small_grid, "cordon", 0, config=replace(small_grid.control, n_max=2, eps_frac=1e-6), base=base)
    with pytest.raises(sbo.SboError):
        sbo.optimize(small_grid, "time", 0, base=base, reference=bad)


def test_delay_needs_finite_delay_scale(small_grid, base):
    scale = ScalePair.from_speed(1.0, 30.0)  # no delay scale
    with pytest.raises(sbo.SboError):
        sbo.optimize(small_grid, "delay", 0, base=base, scale=scale)


def test_time_dependent_controllers(small_grid, base):
    run = sbo.optimize(small_grid, "distance", 0, base=base, time_dependent=True, interval_min=5.0)
    n = len(run.intervals)
    assert n == math.ceil((base[2].period[1] - base[2].period[0]) / 5.0)
    assert all(len(it.rates) == n for it in run.iterations)
    assert run.schedule.n_intervals == n
    # an interval below target from the start keeps a zero rate throughout
    for m, k1 in enumerate(run.iterations[0].k_max):
        if k1 <= SMALL_KCR:
            assert all(it.rates[m]["alpha"] == 0 for it in run.iterations)


def test_deterministic(small_grid, base, distance_run):
    again = sbo.optimize(small_grid, "distance", 0, base=base)
    assert sbo.trace_csv(again) == sbo.trace_csv(distance_run)
    assert again.final_output.digest() == distance_run.final_output.digest()


def test_status_set_once(distance_run):
    with pytest.raises(RuntimeError):
        distance_run.finish("iteration-cap")


def test_divergence_rule():
    crit = sbo.CriticalState(10.0, (0.0, 30.0), 20.0)
    run = sbo.SboRun("distance", 0, crit, 0.5, [(0.0, 30.0)])
    for i, (a, k) in enumerate([(0, 20), (1, 18), (2, 18.5), (3, 19), (4, 19), (5, 20)]):
        run.iterations.append(sbo.Iteration(i + 1, [{"alpha": a, "beta1": 0, "beta2": 0, "cordon_fee": 0}], [k], k - 10, None))
    assert sbo.diverging(run, 5)
    run.iterations[-1] = sbo.Iteration(6, [{"alpha": 5, "beta1": 0, "beta2": 0, "cordon_fee": 0}], [17.0], 7, None)
    assert not sbo.diverging(run, 5)  # K_max fell


def test_multi_seed_identical_seeds_zero_spread(small_grid, distance_run):
    period = distance_run.critical.period
    rep, env = sbo.multi_seed_evaluate(small_grid, {"distance": distance_run.schedule}, [4, 4, 4], period)
    ev = rep["distance"]
    assert len(set(ev.loop_area)) == 1 and len(set(ev.max_sigma)) == 1 and len(set(ev.entries)) == 1
    assert set(rep) == {"none", "distance"}


def test_multi_seed_needs_two_seeds(small_grid, distance_run):
    with pytest.raises(ValueError):
        sbo.multi_seed_evaluate(small_grid, {"distance": distance_run.schedule}, [1], (0, 10))


def test_demand_sweep_empty_and_order(small_grid):
    assert sbo.demand_sweep(small_grid, []) == []
    with pytest.raises(ValueError):
        sbo.demand_sweep(small_grid, [1.2, 1.0])


def test_demand_sweep_fixes_kcr(small_grid):
    entries = sbo.demand_sweep(small_grid, [1.0, 1.1], "distance", 0)
    crits = [e.run.critical for e in entries if e.run.critical is not None]
    assert len({c.k_cr for c in crits}) <= 1
    for e in entries:
        assert len(e.periphery) == e.run.final_output.n_intervals


def test_jdtt_with_zero_time_rate_is_distance(small_grid):
    a = run_horizon(small_grid, TollSchedule.static("jdtt", (440.0, 470.0), alpha=0.4, beta1=0.0), 2)
    b = run_horizon(small_grid, TollSchedule.static("distance", (440.0, 470.0), alpha=0.4), 2)
    assert a.to_bytes() == b.to_bytes()


def test_reports(distance_run):
    rep = sbo.run_report(distance_run)
    assert rep["status"] == "converged" and rep["schema"] == "nfdtoll.sbo/1"
    assert len(rep["iterations"]) == len(distance_run.iterations)
    lines = sbo.trace_csv(distance_run).strip().split("\n")
    assert lines[0].split(",") == list(sbo.TRACE_COLUMNS)
    assert len(lines) == 1 + len(distance_run.iterations)
    assert np.isclose(float(lines[-1].split(",")[2]), distance_run.rate("alpha")[-1])


def test_in_band_baseline_after_in_band_run_converges(small_grid, base, distance_run):
    # Re-measuring the converged distance tolls is in band, so one more in-band
    # run completes the streak without starting the controller.
    crit = distance_run.critical
    out = distance_run.final_output
    fixed = [{"alpha": distance_run.rate("alpha")[-1]}]
    cfg = small_grid.control
    series = distance_run.iterations[-1].series
    run = sbo.closed_loop(small_grid, "distance", 0, crit, series, cfg, fixed=fixed, base_output=out, prior_in_band=True)
    assert run.status == "converged" and len(run.iterations) == 1
    fresh = sbo.closed_loop(small_grid, "distance", 0, crit, series, cfg, fixed=fixed, base_output=out)
    assert len(fresh.iterations) >= 2
