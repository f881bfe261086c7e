"""Raise demand on a storage-tight desk grid until the distance toll stops converging.

    python scripts/demand_sweep.py --multipliers 1.0 1.25 1.5
"""

import argparse
import json

from nfdtoll import sbo
from nfdtoll.scenario import LinkClass, desk_scenario


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--multipliers", type=float, nargs="+", default=[1.0, 1.25, 1.5])
    ap.add_argument("--model", default="distance")
    ap.add_argument("--street-jam", type=float, default=130.0, help="street jam density, veh/km/lane")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="write JSON here")
    args = ap.parse_args(argv)

    sc = desk_scenario(street=LinkClass(jam_density_vpkmpl=args.street_jam), name="desk-tight")
    entries = sbo.demand_sweep(sc, args.multipliers, args.model, args.seed)
    rows = []
    for e in entries:
        r = e.run
        k_max = max(r.iterations[-1].k_max)
        rates = r.iterations[-1].rates[0] if r.iterations[-1].rates else {}
        print(f"x{e.multiplier:<5g} {r.status:30s} {len(r.iterations):2d} runs  K_max {k_max:.2f}  periphery K peak {e.periphery.K.max():.2f}")
        rows.append({"multiplier": e.multiplier, "status": r.status, "runs": len(r.iterations), "k_max": k_max, "rates": rates})
    if args.out:
        with open(args.out, "w") as f:
            json.dump(rows, f, indent=2)


if __name__ == "__main__":
    main()
