"""Closed-loop simulation-based optimization of toll rates.

The loop alternates plant runs and PI updates:

1. simulate without pricing, identify ``K_cr``, the tolling period and ``K_max``;
2. set the initial rate from the baseline error;
3. simulate with the current rates, measure ``K_max`` inside the tolling period;
4. stop once ``|K_max - K_cr| <= eps`` for two consecutive priced runs, or after
   ``n_max`` runs (the baseline counts as run 1); otherwise update and repeat.

The tolling period is identified once from the no-toll baseline and held fixed.
Time-dependent pricing runs an independent controller per tolling interval,
each fed only by the densities observed in its own interval.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .control import ControlConfig, PiController, ScalePair, resolve_scale_pair, tolling_intervals
from .metrics import CriticalState, NfdSeries, NoPricingNeeded
from .plant import SimOutput, run_horizon
from .scenario import Scenario
from .tolling import MODELS, TollSchedule

STATUSES = ("converged", "iteration-cap", "diverged-periphery-suspected", "no-pricing-needed")

# Rates driven by the controller for each model. JDDT runs its delay phase
# through ``model="jddt"`` with alpha held fixed.
CONTROLLED = {
    "cordon": ("cordon_fee",),
    "distance": ("alpha",),
    "time": ("beta1",),
    "delay": ("beta2",),
    "jdtt": ("alpha", "beta1"),
    "jddt": ("beta2",),
}
RATE_NAMES = ("alpha", "beta1", "beta2", "cordon_fee")


class SboError(RuntimeError):
    pass


@dataclass
class Iteration:
    index: int  # plant run number; 1 is the baseline
    rates: list[dict[str, float]]  # rates applied in this run, one dict per tolling interval
    k_max: list[float]  # per tolling interval
    objective: float  # max over intervals of |K_max - K_cr|
    series: NfdSeries

    @property
    def k_max_overall(self) -> float:
        return max(self.k_max)


@dataclass
class SboRun:
    model: str
    seed: int
    critical: CriticalState | None
    eps: float
    intervals: list[tuple[float, float]] = field(default_factory=list)
    iterations: list[Iteration] = field(default_factory=list)
    status: str | None = None
    schedule: TollSchedule | None = None  # rates applied in the final run
    final_output: SimOutput | None = None
    scale: ScalePair | None = None
    phase1: SboRun | None = None  # JDDT distance phase

    def finish(self, status: str) -> None:
        if self.status is not None:
            raise SboError("terminal status already set")
        if status not in STATUSES:
            raise ValueError(status)
        self.status = status

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def priced(self) -> list[Iteration]:
        return self.iterations[1:]

    @property
    def final_k_max(self) -> float:
        return self.iterations[-1].k_max_overall

    def rate(self, name: str) -> list[float]:
        """Final applied value of ``name`` per tolling interval."""
        return [r[name] for r in self.iterations[-1].rates]


def _within(k: float, k_cr: float, eps: float, rates: dict[str, float]) -> bool:
    if abs(k - k_cr) <= eps:
        return True
    # Below target with no toll left to remove: nothing more the controller can do.
    return k < k_cr - eps and not any(rates.values())


def _rates_dict(controlled, values, fixed) -> dict[str, float]:
    d = {name: 0.0 for name in RATE_NAMES}
    d.update(fixed)
    d.update(zip(controlled, values))
    return d


def _schedule(model, period, interval_min, per_interval: list[dict[str, float]]) -> TollSchedule:
    return TollSchedule(
        model=model,
        period_start=period[0],
        period_end=period[1],
        interval_min=interval_min,
        **{name: tuple(r[name] for r in per_interval) for name in RATE_NAMES},
    )


def _k_max_per_interval(series: NfdSeries, intervals) -> list[float]:
    return [metrics.k_max_in(series, b) for b in intervals]


def diverging(run: SboRun, window: int) -> bool:
    """Rates non-decreasing and ``K_max`` not decreasing over the last ``window`` runs."""
    its = run.priced[-window:]
    if len(its) < window:
        return False
    for a, b in zip(its, its[1:]):
        for ra, rb in zip(a.rates, b.rates):
            if any(rb[n] < ra[n] - 1e-12 for n in RATE_NAMES):
                return False
    return its[-1].k_max_overall >= its[0].k_max_overall


def baseline(scenario: Scenario, seed: int = 0, k_cr: float | None = None) -> tuple[SimOutput, NfdSeries, CriticalState | None]:
    """No-toll run and its critical state (None when pricing is not needed)."""
    out = run_horizon(scenario, None, seed)
    series = metrics.nfd_series(out, scenario)
    try:
        crit = metrics.identify_critical_state(series, k_cr=k_cr)
    except NoPricingNeeded:
        crit = None
    return out, series, crit


def _mu(name: str, cfg: ControlConfig, scale: ScalePair | None) -> float:
    if name == "alpha":
        return 1.0 if scale is None else scale.mu_alpha
    if name == "cordon_fee":
        return cfg.fee_gain_scale
    if scale is None:
        raise SboError(f"{name} control needs a scale pair (reference cordon run)")
    if name == "beta2":
        if not 0 < scale.mu_beta2 < math.inf:
            raise SboError("reference run shows no cordon delay; cannot scale the delay rate")
        return cfg.delay_gain_scale * scale.mu_beta2
    return scale.mu_beta1


def _upper(name: str, cfg: ControlConfig) -> float:
    return {"alpha": cfg.alpha_max, "beta1": cfg.beta_max, "beta2": cfg.delay_max, "cordon_fee": cfg.fee_max}[name]


def closed_loop(
    scenario: Scenario,
    model: str,
    seed: int,
    critical: CriticalState,
    base_series: NfdSeries,
    cfg: ControlConfig,
    *,
    time_dependent: bool = False,
    interval_min: float | None = None,
    scale: ScalePair | None = None,
    fixed: dict[str, float] | list[dict[str, float]] | None = None,
    base_output: SimOutput | None = None,
    prior_in_band: bool = False,
) -> SboRun:
    """PI iterations starting from a measured run ``base_series`` (run 1).

    ``fixed`` holds rates kept constant by the loop, either one dict for all
    tolling intervals or one per interval. ``prior_in_band`` says the run
    before ``base_series`` was already within tolerance, so an in-band
    baseline completes the two-run convergence streak on its own.
    """
    controlled = CONTROLLED[model]
    eps = cfg.eps_frac * critical.k_cr
    td = interval_min if time_dependent else None
    if time_dependent and td is None:
        td = cfg.td_interval_min
    intervals = tolling_intervals(critical.period, td)
    if not isinstance(fixed, list):
        fixed = [dict(fixed or {})] * len(intervals)
    if len(fixed) != len(intervals):
        raise ValueError("need one fixed-rate dict per tolling interval")
    run = SboRun(model, seed, critical, eps, intervals, scale=scale)

    mu = tuple(_mu(n, cfg, scale) for n in controlled)
    upper = tuple(_upper(n, cfg) for n in controlled)
    p_p, p_i = cfg.p_p, cfg.p_i
    if len(controlled) > 1:
        # At the reference speed the time component adds alpha / omega1 per km,
        # so shrink the shared gains to keep the per-km loop gain of the
        # distance controller.
        w = scale.omega1 / (1.0 + scale.omega1)
        p_p, p_i = w * p_p, w * p_i
    ctrls = [
        PiController(critical.k_cr, p_p, p_i, mu=mu, upper=upper, freeze_on_saturation=len(controlled) > 1)
        for _ in intervals
    ]
    k = _k_max_per_interval(base_series, intervals)
    base_rates = [_rates_dict(controlled, (0.0,) * len(controlled), f) for f in fixed]
    run.iterations.append(Iteration(1, base_rates, k, max(abs(x - critical.k_cr) for x in k), base_series))
    run.schedule = _schedule(model, critical.period, td, base_rates)
    run.final_output = base_output
    if prior_in_band and all(_within(x, critical.k_cr, eps, r) for x, r in zip(k, base_rates)):
        run.finish("converged")
        return run
    rates = [c.start(km) for c, km in zip(ctrls, k)]

    streak = 0
    for i in range(2, cfg.n_max + 1):
        applied = [_rates_dict(controlled, r, f) for r, f in zip(rates, fixed)]
        schedule = _schedule(model, critical.period, td, applied)
        out = run_horizon(scenario, schedule, seed)
        series = metrics.nfd_series(out, scenario)
        k = _k_max_per_interval(series, intervals)
        run.iterations.append(Iteration(i, applied, k, max(abs(x - critical.k_cr) for x in k), series))
        run.schedule = schedule
        run.final_output = out
        ok = all(_within(x, critical.k_cr, eps, r) for x, r in zip(k, applied))
        streak = streak + 1 if ok else 0
        if streak >= 2:
            run.finish("converged")
            return run
        if i < cfg.n_max:
            rates = [c.update(km) for c, km in zip(ctrls, k)]
    run.finish("diverged-periphery-suspected" if diverging(run, cfg.divergence_window) else "iteration-cap")
    return run


def optimize(
    scenario: Scenario,
    model: str,
    seed: int = 0,
    *,
    config: ControlConfig | None = None,
    time_dependent: bool = False,
    interval_min: float | None = None,
    scale: ScalePair | None = None,
    reference: SboRun | None = None,
    k_cr: float | None = None,
    base: tuple | None = None,
    phase1: SboRun | None = None,
) -> SboRun:
    """Optimize one pricing model on ``scenario``.

    ``time``, ``delay``, ``jdtt`` and ``jddt`` need the speed-based scale pair:
    pass ``scale`` directly, or ``reference`` (a converged static cordon run),
    otherwise one is optimized here first. ``base`` may carry a precomputed
    :func:`baseline` result for the same scenario and seed. For ``jddt``,
    ``phase1`` may carry an already converged distance run (same config).
    """
    if model not in MODELS or model == "none":
        raise ValueError(f"cannot optimize model {model!r}")
    cfg = config or scenario.control
    cfg.validate()
    out0, series0, crit = base if base is not None else baseline(scenario, seed, k_cr)
    if crit is None:
        run = SboRun(model, seed, None, math.nan)
        run.iterations.append(Iteration(1, [], [float(series0.K.max())], 0.0, series0))
        run.final_output = out0
        run.finish("no-pricing-needed")
        return run
    if model in ("time", "delay", "jdtt", "jddt") and scale is None:
        scale = reference_scale(scenario, seed, cfg, crit, (out0, series0, crit), reference)
    kw = dict(time_dependent=time_dependent, interval_min=interval_min, base_output=out0)
    if model != "jddt":
        return closed_loop(scenario, model, seed, crit, series0, cfg, scale=scale, **kw)
    return jddt_sequential(scenario, seed, cfg, crit, (out0, series0, crit), scale, phase1=phase1, **kw)


def reference_scale(scenario, seed, cfg, crit, base, reference: SboRun | None = None) -> ScalePair:
    """Scale pair from the cordon speeds of a converged static cordon-toll run."""
    if reference is None:
        reference = optimize(scenario, "cordon", seed, config=cfg, base=base)
    if reference.final_output is None or reference.critical is None:
        raise SboError("reference cordon run has no output")
    if not reference.converged:
        raise SboError(f"reference cordon run did not converge ({reference.status})")
    net = scenario.network
    idx = reference.iterations[-1].series.window(*crit.period)
    ff = np.array([link.free_flow_time_s for link in net.links])
    lengths = np.array([link.length_km for link in net.links])
    return resolve_scale_pair(cfg.omega1, reference.final_output, scenario.cordon.mask(net), idx, ff, lengths)


def jddt_sequential(scenario, seed, cfg, crit, base, scale, *, phase1: SboRun | None = None, **kw) -> SboRun:
    """Distance phase to ``alpha*``, then delay-rate PI with ``alpha = omega2 * alpha*``."""
    if phase1 is None:
        kw1 = {k: v for k, v in kw.items() if k != "base_output"}
        phase1 = closed_loop(scenario, "distance", seed, crit, base[1], cfg, base_output=base[0], **kw1)
    if not phase1.converged:
        run = SboRun("jddt", seed, crit, phase1.eps, phase1.intervals, scale=scale, phase1=phase1)
        run.iterations = list(phase1.iterations)
        run.final_output = phase1.final_output
        run.schedule = phase1.schedule
        run.finish(phase1.status)
        return run
    alpha = [cfg.omega2 * a for a in phase1.rate("alpha")]
    td = kw.get("interval_min") if kw.get("time_dependent") else None
    if kw.get("time_dependent") and td is None:
        td = cfg.td_interval_min
    # Phase-2 baseline: alpha fixed, no delay toll.
    fixed_sched = _schedule("jddt", crit.period, td, [_rates_dict((), (), {"alpha": a}) for a in alpha])
    out = run_horizon(scenario, fixed_sched, seed)
    series = metrics.nfd_series(out, scenario)
    kw = {k: v for k, v in kw.items() if k != "base_output"}
    fixed = [{"alpha": a} for a in alpha]
    # Phase 1 ended in band, so the delay loop continues its convergence streak.
    run = closed_loop(
        scenario, "jddt", seed, crit, series, cfg, scale=scale, fixed=fixed, base_output=out, prior_in_band=True, **kw
    )
    run.phase1 = phase1
    return run


# -- evaluation ---------------------------------------------------------------


def box_stats(values) -> dict[str, float]:
    v = np.asarray(values, dtype=float)
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return dict(zip(("min", "q1", "median", "q3", "max"), (float(x) for x in q)))


@dataclass
class SeedEvaluation:
    model: str
    seeds: list[int]
    series: list[NfdSeries]
    average: NfdSeries
    max_sigma: list[float]
    loop_area: list[float]
    entries: list[int]  # cordon entries summed over the tolling period
    k_max: list[float]

    def summary(self) -> dict:
        return {
            "model": self.model,
            "seeds": self.seeds,
            "max_sigma": box_stats(self.max_sigma),
            "loop_area": box_stats(self.loop_area),
            "entries": box_stats(self.entries),
            "k_max": box_stats(self.k_max),
        }


def multi_seed_evaluate(
    scenario: Scenario,
    schedules: dict[str, TollSchedule | None],
    seeds,
    period: tuple[float, float],
    envelope: metrics.EnvelopeModel | None = None,
) -> tuple[dict[str, SeedEvaluation], metrics.EnvelopeModel]:
    """Re-run fixed (converged) schedules across seeds.

    Without ``envelope`` the lower spread envelope is fitted to no-toll runs
    over the same seeds.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("need at least two seeds")
    cache: dict[tuple[str, int], SimOutput] = {}

    def run(model, seed):
        if (model, seed) not in cache:
            cache[model, seed] = run_horizon(scenario, schedules.get(model), seed)
        return cache[model, seed]

    if envelope is None:
        schedules = {"none": None, **schedules}
        base = [metrics.nfd_series(run("none", s), scenario) for s in seeds]
        envelope = metrics.fit_envelope_from_series(base)
    report = {}
    for model in schedules:
        outs = [run(model, s) for s in seeds]
        series = [metrics.nfd_series(o, scenario) for o in outs]
        report[model] = SeedEvaluation(
            model=model,
            seeds=seeds,
            series=series,
            average=metrics.average_series(series),
            max_sigma=[metrics.max_deviation(s, envelope, period) for s in series],
            loop_area=[metrics.hysteresis_loop_area(s.K, s.Q) for s in series],
            entries=[int(o.cordon_entries[s.window(*period)].sum()) for o, s in zip(outs, series)],
            k_max=[metrics.k_max_in(s, period) for s in series],
        )
    return report, envelope


@dataclass
class SweepEntry:
    multiplier: float
    run: SboRun
    periphery: NfdSeries


def demand_sweep(scenario: Scenario, multipliers, model: str = "distance", seed: int = 0, config: ControlConfig | None = None, **kw) -> list[SweepEntry]:
    """Optimize at each demand multiplier, with ``K_cr`` fixed from the first one."""
    multipliers = [float(m) for m in multipliers]
    if multipliers != sorted(multipliers):
        raise ValueError("multipliers must be sorted ascending")
    out = []
    k_cr = None
    for m in multipliers:
        sc = scenario.with_demand_multiplier(scenario.demand.multiplier * m)
        base = baseline(sc, seed, k_cr)
        if k_cr is None and base[2] is not None:
            k_cr = base[2].k_cr
        run = optimize(sc, model, seed, config=config, base=base, **kw)
        final = run.final_output
        out.append(SweepEntry(m, run, metrics.nfd_series(final, sc, "periphery")))
    return out


# -- reports ------------------------------------------------------------------


def run_report(run: SboRun) -> dict:
    crit = run.critical
    rep = {
        "schema": "nfdtoll.sbo/1",
        "model": run.model,
        "seed": run.seed,
        "status": run.status,
        "eps": run.eps,
        "k_cr": None if crit is None else crit.k_cr,
        "period": None if crit is None else list(crit.period),
        "baseline_k_max": None if crit is None else crit.k_max,
        "intervals": [list(b) for b in run.intervals],
        "scale": None if run.scale is None else {"mu_alpha": run.scale.mu_alpha, "mu_beta1": run.scale.mu_beta1, "omega1": run.scale.omega1, "vbar": run.scale.vbar, "mu_beta2": run.scale.mu_beta2},
        "iterations": [{"index": it.index, "rates": it.rates, "k_max": it.k_max, "objective": it.objective} for it in run.iterations],
        "schedule": None if run.schedule is None else run.schedule.to_dict(),
    }
    if run.phase1 is not None:
        rep["phase1"] = run_report(run.phase1)
    return rep


TRACE_COLUMNS = ("iteration", "interval", "alpha", "beta1", "beta2", "cordon_fee", "k_max", "objective")


def trace_csv(run: SboRun) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for it in run.iterations:
        for m, (r, k) in enumerate(zip(it.rates, it.k_max)):
            w.writerow([it.index, m, *(repr(float(r[n])) for n in RATE_NAMES), repr(float(k)), repr(float(it.objective))])
    return buf.getvalue()
