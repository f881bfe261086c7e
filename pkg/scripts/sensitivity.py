"""Sensitivity of the joint models to the weights omega1 (jdtt) and omega2 (jddt).

    python scripts/sensitivity.py --omega1 0.5 1 2 3 --omega2 0.25 0.5 0.75 1
"""

import argparse
import json
from dataclasses import replace

from nfdtoll import sbo
from nfdtoll.scenario import desk_scenario


def summarize(run, label, value):
    rates = run.iterations[-1].rates[0] if run.iterations[-1].rates else {}
    return {
        label: value,
        "status": run.status,
        "runs": len(run.iterations),
        "k_max": run.iterations[-1].k_max,
        "rates": rates,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--omega1", type=float, nargs="*", default=[0.5, 1.0, 2.0, 3.0])
    ap.add_argument("--omega2", type=float, nargs="*", default=[0.25, 0.5, 0.75, 1.0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="write JSON here instead of stdout")
    args = ap.parse_args(argv)

    sc = desk_scenario()
    base = sbo.baseline(sc, args.seed)
    cordon = sbo.optimize(sc, "cordon", args.seed, base=base)
    distance = sbo.optimize(sc, "distance", args.seed, base=base)
    result = {"k_cr": base[2].k_cr, "jdtt": [], "jddt": []}
    for w in args.omega1:
        cfg = replace(sc.control, omega1=w)
        run = sbo.optimize(sc, "jdtt", args.seed, config=cfg, base=base, reference=cordon)
        result["jdtt"].append(summarize(run, "omega1", w))
        print(f"jdtt omega1={w:g}: {run.status} after {len(run.iterations)} runs", flush=True)
    scale = sbo.optimize(sc, "jddt", args.seed, base=base, reference=cordon, phase1=distance).scale
    for w in args.omega2:
        cfg = replace(sc.control, omega2=w)
        run = sbo.optimize(sc, "jddt", args.seed, config=cfg, base=base, scale=scale, phase1=distance)
        result["jddt"].append(summarize(run, "omega2", w))
        print(f"jddt omega2={w:g}: {run.status} after {len(run.iterations)} runs", flush=True)
    text = json.dumps(result, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)


if __name__ == "__main__":
    main()
