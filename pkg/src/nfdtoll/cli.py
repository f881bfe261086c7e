"""Command-line front end.

Every command except ``gen-grid`` writes into a run directory: the outputs,
a copy of the resolved scenario, and ``manifest.json`` with the argument
vector and SHA-256 checksums of every file. The default output root comes
from ``$NFDTOLL_OUT`` (else ``./runs``).

Exit codes: 0 success, 1 usage or input error, 2 non-convergence with ``--strict``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, metrics, sbo
from .plant import link_states_csv, run_horizon, summary_json, trips_csv
from .scenario import DemandProfile, ScenarioError, desk_scenario, dumps, generate_grid, load_scenario, parse_clock
from .tolling import MODELS, TollSchedule

OUT_ENV = "NFDTOLL_OUT"
EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n"


class RunDir:
    """Collects a run's files and writes the manifest last."""

    def __init__(self, path: Path, command: str, argv: list[str]):
        self.path = path
        self.command = command
        self.argv = argv
        self.files: dict[str, str] = {}
        path.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        data = text.encode()
        (self.path / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def close(self, seeds, extra=None) -> None:
        manifest = {
            "schema": "nfdtoll.manifest/1",
            "version": __version__,
            "command": self.command,
            "argv": self.argv,
            "seeds": list(seeds),
            "out": str(self.path),
            "scenario": "scenario.json",
            "checksums": dict(sorted(self.files.items())),
        }
        if extra:
            manifest.update(extra)
        (self.path / "manifest.json").write_text(_dump(manifest))


# -- argument helpers -----------------------------------------------------------


def _scenario(arg: str | None):
    if not arg:
        raise UsageError("--scenario is required")
    if arg == "desk":
        return desk_scenario()
    if not Path(arg).exists():
        raise UsageError(f"scenario file not found: {arg}")
    return load_scenario(arg)


def _out_dir(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / default_name


def _config(args, scenario):
    cfg = scenario.control
    updates = {
        "p_p": args.pp,
        "p_i": args.pi,
        "omega1": args.omega1,
        "omega2": args.omega2,
        "alpha_max": args.alpha_max,
        "beta_max": args.beta_max,
    }
    cfg = replace(cfg, **{k: v for k, v in updates.items() if v is not None})
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _add_gains(p):
    g = p.add_argument_group("controller")
    g.add_argument("--pp", type=float, help="proportional gain")
    g.add_argument("--pi", type=float, help="integral gain")
    g.add_argument("--omega1", type=float, help="JDTT weight")
    g.add_argument("--omega2", type=float, help="JDDT weight in [0, 1]")
    g.add_argument("--alpha-max", type=float, help="distance-rate bound ($/km)")
    g.add_argument("--beta-max", type=float, help="time-rate bound ($/h)")


def _parse_period(text: str) -> tuple[float, float]:
    try:
        a, b = text.split("-")
        return parse_clock(a), parse_clock(b)
    except (ValueError, ScenarioError):
        raise UsageError(f"bad --period {text!r}; expected HH:MM-HH:MM") from None


_RATE_FLAGS = {"alpha": "--alpha", "beta1": "--beta1", "beta2": "--beta2", "cordon_fee": "--cordon-fee"}
_USES = {
    "none": (),
    "cordon": ("cordon_fee",),
    "distance": ("alpha",),
    "time": ("beta1",),
    "delay": ("beta2",),
    "jdtt": ("alpha", "beta1"),
    "jddt": ("alpha", "beta2"),
}


def _schedule(args, scenario) -> TollSchedule | None:
    inline = {k: getattr(args, k) for k in _RATE_FLAGS if getattr(args, k) is not None}
    if args.tolls:
        if inline or args.model:
            raise UsageError("--tolls conflicts with --model and inline rate flags")
        try:
            return TollSchedule.from_dict(json.loads(Path(args.tolls).read_text()))
        except (OSError, ValueError, TypeError) as exc:
            raise UsageError(f"cannot read toll schedule {args.tolls}: {exc}") from None
    if not inline and not args.model:
        return scenario.tolls
    model = args.model or "none"
    unused = [_RATE_FLAGS[k] for k in inline if k not in _USES[model]]
    if unused:
        raise UsageError(f"model {model!r} does not use {', '.join(unused)}")
    period = _parse_period(args.period) if args.period else (0.0, 24 * 60.0)
    sched = TollSchedule.static(model, period, **inline)
    try:
        sched.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return sched


# -- commands -------------------------------------------------------------------


def cmd_gen_grid(args, argv) -> int:
    try:
        r0, c0, r1, c1 = (int(x) for x in args.cordon.split(","))
    except ValueError:
        raise UsageError("--cordon expects r0,c0,r1,c1") from None
    prof = DemandProfile(
        duration_min=args.duration_min,
        peak_vph=args.peak_vph,
        cbd_vph=args.cbd_vph,
        start_clock=args.start,
    )
    try:
        sc = generate_grid(args.rows, args.cols, (r0, c0, r1, c1), prof, args.seed)
    except ScenarioError as exc:
        raise UsageError(str(exc)) from None
    if args.multiplier != 1.0:
        sc = sc.with_demand_multiplier(args.multiplier)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dumps(sc))
    print(out)
    return EXIT_OK


def _nfd_all(output, scenario) -> dict:
    return {s: metrics.nfd_series(output, scenario, s) for s in ("cordon", "periphery", "network")}


def cmd_simulate(args, argv) -> int:
    sc = _scenario(args.scenario)
    sched = _schedule(args, sc)
    run = RunDir(_out_dir(args, f"simulate-s{args.seed}"), "simulate", argv)
    run.write("scenario.json", dumps(sc))
    out = run_horizon(sc, sched, args.seed)
    run.write("link_states.csv", link_states_csv(out))
    run.write("trips.csv", trips_csv(out))
    run.write("nfd.csv", metrics.nfd_csv(_nfd_all(out, sc)))
    summary = json.loads(summary_json(out))
    summary["performance"] = metrics.performance_summary(out, sc)
    summary["tolls"] = None if sched is None else sched.to_dict()
    run.write("summary.json", _dump(summary))
    if sched is not None:
        run.write("tolls.json", _dump(sched.to_dict()))
    run.close([args.seed])
    print(run.path)
    return EXIT_OK


def _write_run(run: RunDir, r: sbo.SboRun, scenario, prefix: str = "") -> None:
    run.write(f"{prefix}report.json", _dump(sbo.run_report(r)))
    run.write(f"{prefix}trace.csv", sbo.trace_csv(r))
    if r.schedule is not None:
        run.write(f"{prefix}tolls.json", _dump(r.schedule.to_dict()))
    if r.iterations:
        run.write(f"{prefix}nfd_baseline.csv", metrics.nfd_csv({"cordon": r.iterations[0].series}))
        run.write(f"{prefix}nfd_final.csv", metrics.nfd_csv({"cordon": r.iterations[-1].series}))


def cmd_optimize(args, argv) -> int:
    if not args.model:
        raise UsageError("optimize needs --model")
    if args.interval_min is not None and not args.time_dependent:
        raise UsageError("--interval-min requires --time-dependent")
    sc = _scenario(args.scenario)
    cfg = _config(args, sc)
    tag = f"{args.model}{'-td' if args.time_dependent else ''}"
    run = RunDir(_out_dir(args, f"optimize-{tag}-s{args.seed}"), "optimize", argv)
    run.write("scenario.json", dumps(replace(sc, control=cfg)))
    r = sbo.optimize(sc, args.model, args.seed, config=cfg, time_dependent=args.time_dependent, interval_min=args.interval_min)
    _write_run(run, r, sc)
    run.close([args.seed], {"status": r.status})
    print(f"{r.status} {run.path}")
    if args.strict and r.status != "converged":
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_nfd(args, argv) -> int:
    sc = _scenario(args.scenario)
    seeds = list(range(args.seeds))
    run = RunDir(_out_dir(args, f"nfd-{args.seeds}seeds"), "nfd", argv)
    run.write("scenario.json", dumps(sc))
    series = {}
    for s in seeds:
        out = run_horizon(sc, None, s)
        series[s] = _nfd_all(out, sc)
    try:
        env = metrics.fit_envelope_from_series([v["cordon"] for v in series.values()])
    except ValueError as exc:
        raise UsageError(f"envelope fit failed: {exc}; try more --seeds") from None
    for s, by in series.items():
        run.write(f"nfd_seed{s}.csv", metrics.nfd_csv(by, env))
    doc = {"envelope": {"a": env.a, "b": env.b, "c": env.c}}
    try:
        crit = metrics.identify_critical_state(series[seeds[0]]["cordon"])
        doc["critical"] = {"k_cr": crit.k_cr, "period": list(crit.period), "k_max": crit.k_max}
    except metrics.NoPricingNeeded as exc:
        doc["critical"] = None
        doc["note"] = str(exc)
    run.write("envelope.json", _dump(doc))
    run.close(seeds)
    print(run.path)
    return EXIT_OK


def cmd_sweep_seeds(args, argv) -> int:
    sc = _scenario(args.scenario)
    cfg = _config(args, sc)
    models = [m for m in args.models.split(",") if m]
    bad = [m for m in models if m not in MODELS or m == "none"]
    if bad:
        raise UsageError(f"unknown model(s): {', '.join(bad)}")
    if args.seeds < 2:
        raise UsageError("--seeds must be >= 2")
    run = RunDir(_out_dir(args, f"sweep-seeds-{args.seeds}"), "sweep-seeds", argv)
    run.write("scenario.json", dumps(replace(sc, control=cfg)))
    base = sbo.baseline(sc, args.seed)
    if base[2] is None:
        run.write("summary.json", _dump({"status": "no-pricing-needed"}))
        run.close([args.seed])
        return EXIT_OK
    ref = sbo.optimize(sc, "cordon", args.seed, config=cfg, base=base)
    runs = {}
    for m in models:
        runs[m] = ref if m == "cordon" else sbo.optimize(sc, m, args.seed, config=cfg, base=base, reference=ref)
        _write_run(run, runs[m], sc, prefix=f"{m}_")
    seeds = list(range(args.seeds))
    rep, env = sbo.multi_seed_evaluate(sc, {m: r.schedule for m, r in runs.items()}, seeds, base[2].period)
    for m, e in rep.items():
        run.write(f"nfd_avg_{m}.csv", metrics.nfd_csv({"cordon": e.average}, env))
    summary = {
        "envelope": {"a": env.a, "b": env.b, "c": env.c},
        "status": {m: r.status for m, r in runs.items()},
        "models": {m: e.summary() for m, e in rep.items()},
    }
    run.write("summary.json", _dump(summary))
    run.close(seeds, {"optimization_seed": args.seed})
    print(run.path)
    if args.strict and any(r.status != "converged" for r in runs.values()):
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_sweep_demand(args, argv) -> int:
    if args.step <= 0 or args.to < args.from_:
        raise UsageError("need --step > 0 and --to >= --from")
    sc = _scenario(args.scenario)
    cfg = _config(args, sc)
    n = int(np.floor((args.to - args.from_) / args.step + 1e-9)) + 1
    mults = [round(args.from_ + i * args.step, 10) for i in range(n)]
    run = RunDir(_out_dir(args, f"sweep-demand-{args.model}"), "sweep-demand", argv)
    run.write("scenario.json", dumps(replace(sc, control=cfg)))
    entries = sbo.demand_sweep(sc, mults, args.model, args.seed, cfg)
    doc = []
    for e in entries:
        tag = f"{e.multiplier:g}"
        run.write(f"periphery_nfd_{tag}.csv", metrics.nfd_csv({"periphery": e.periphery}))
        run.write(f"trace_{tag}.csv", sbo.trace_csv(e.run))
        doc.append({"multiplier": e.multiplier, "report": sbo.run_report(e.run)})
    run.write("sweep.json", _dump({"model": args.model, "entries": doc}))
    run.close([args.seed], {"multipliers": mults})
    for e in entries:
        print(f"{e.multiplier:g} {e.run.status}")
    if args.strict and any(e.run.status != "converged" for e in entries):
        return EXIT_NONCONVERGED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nfdtoll", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-grid", help="write a synthetic grid scenario")
    g.add_argument("--rows", type=int, default=8)
    g.add_argument("--cols", type=int, default=8)
    g.add_argument("--cordon", default="2,2,5,5", help="r0,c0,r1,c1 (inclusive node rows/cols)")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--peak-vph", type=float, default=DemandProfile.peak_vph)
    g.add_argument("--cbd-vph", type=float, default=DemandProfile.cbd_vph)
    g.add_argument("--duration-min", type=float, default=DemandProfile.duration_min)
    g.add_argument("--start", default=DemandProfile.start_clock, help="demand start, HH:MM")
    g.add_argument("--multiplier", type=float, default=1.0)
    g.add_argument("--out", required=True, help="scenario JSON path")
    g.set_defaults(func=cmd_gen_grid)

    s = sub.add_parser("simulate", help="one plant run")
    s.add_argument("--scenario", help="scenario JSON, or 'desk'")
    s.add_argument("--tolls", help="toll schedule JSON")
    s.add_argument("--model", choices=MODELS)
    for name, flag in _RATE_FLAGS.items():
        s.add_argument(flag, dest=name, type=float)
    s.add_argument("--period", help="inline tolling period HH:MM-HH:MM")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("optimize", help="closed-loop toll optimization")
    o.add_argument("--scenario", help="scenario JSON, or 'desk'")
    o.add_argument("--model", choices=[m for m in MODELS if m != "none"])
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--time-dependent", action="store_true")
    o.add_argument("--interval-min", type=float)
    o.add_argument("--strict", action="store_true", help="exit 2 unless converged")
    o.add_argument("--out")
    _add_gains(o)
    o.set_defaults(func=cmd_optimize)

    n = sub.add_parser("nfd", help="no-toll NFD series, envelope fit, critical state")
    n.add_argument("--scenario", help="scenario JSON, or 'desk'")
    n.add_argument("--seeds", type=int, default=10)
    n.add_argument("--out")
    n.set_defaults(func=cmd_nfd)

    w = sub.add_parser("sweep-seeds", help="re-run converged tolls over several seeds")
    w.add_argument("--scenario", help="scenario JSON, or 'desk'")
    w.add_argument("--models", default="cordon,distance,jdtt,jddt")
    w.add_argument("--seeds", type=int, default=10)
    w.add_argument("--seed", type=int, default=0, help="seed used during optimization")
    w.add_argument("--strict", action="store_true")
    w.add_argument("--out")
    _add_gains(w)
    w.set_defaults(func=cmd_sweep_seeds)

    d = sub.add_parser("sweep-demand", help="optimize across demand multipliers")
    d.add_argument("--scenario", help="scenario JSON, or 'desk'")
    d.add_argument("--model", default="distance", choices=[m for m in MODELS if m != "none"])
    d.add_argument("--from", dest="from_", type=float, default=1.0)
    d.add_argument("--to", type=float, default=1.35)
    d.add_argument("--step", type=float, default=0.05)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--strict", action="store_true")
    d.add_argument("--out")
    _add_gains(d)
    d.set_defaults(func=cmd_sweep_demand)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("missing command; see --help")
        return args.func(args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
