"""Optimize every pricing model on the desk grid and compare them over seeds.

    python scripts/compare_models.py --seeds 10
"""

import argparse
import json

import numpy as np

from nfdtoll import sbo
from nfdtoll.scenario import desk_scenario

MODELS = ("cordon", "distance", "time", "delay", "jdtt", "jddt")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10, help="evaluation seeds 0..N-1")
    ap.add_argument("--seed", type=int, default=0, help="seed used for optimization")
    ap.add_argument("--time-dependent", action="store_true", help="also evaluate time-dependent jdtt")
    ap.add_argument("--out", help="write JSON here instead of stdout")
    args = ap.parse_args(argv)

    sc = desk_scenario()
    base = sbo.baseline(sc, args.seed)
    runs = {"cordon": sbo.optimize(sc, "cordon", args.seed, base=base)}
    runs["distance"] = sbo.optimize(sc, "distance", args.seed, base=base)
    for m in ("time", "delay", "jdtt"):
        runs[m] = sbo.optimize(sc, m, args.seed, base=base, reference=runs["cordon"])
    runs["jddt"] = sbo.optimize(sc, "jddt", args.seed, base=base, reference=runs["cordon"], phase1=runs["distance"])
    if args.time_dependent:
        runs["jdtt-td"] = sbo.optimize(sc, "jdtt", args.seed, base=base, reference=runs["cordon"], time_dependent=True)
    for m, r in runs.items():
        print(f"{m:9s} {r.status:30s} {len(r.iterations):2d} runs  K_max {max(r.iterations[-1].k_max):.2f}", flush=True)

    schedules = {m: r.schedule for m, r in runs.items() if r.schedule is not None}
    rep, env = sbo.multi_seed_evaluate(sc, schedules, range(args.seeds), base[2].period)
    print(f"\n{'model':9s} {'loop area':>10s} {'max sigma':>10s} {'entries':>8s}  (medians)")
    for m, ev in rep.items():
        print(f"{m:9s} {np.median(ev.loop_area):10.1f} {np.median(ev.max_sigma):10.2f} {np.median(ev.entries):8.0f}")
    result = {
        "k_cr": base[2].k_cr,
        "period": list(base[2].period),
        "envelope": [env.a, env.b, env.c],
        "runs": {m: sbo.run_report(r) for m, r in runs.items()},
        "evaluation": {m: ev.summary() for m, ev in rep.items()},
    }
    if args.out:
        with open(args.out, "w") as f:
            json.dump(result, f, indent=2, default=lambda x: None)


if __name__ == "__main__":
    main()
