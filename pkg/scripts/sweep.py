"""Solve one instance across a range of epsilon, k or beta values.

Writes one CSV row per value with the initial and final objective, the
user-cost change, the number of lines whose fleet moved, and run time.

    python scripts/sweep.py --instance runs/small --param epsilon --values 0 0.01 0.05 0.1 inf
    python scripts/sweep.py --instance runs/small --param k --values 1 3 5 10 --epsilon 0.05
    python scripts/sweep.py --instance runs/small --param beta --values 0.5 1 1.5 2 --epsilon 0.05
"""

import argparse
import csv
import dataclasses
import math
from pathlib import Path

from samp.access import AccessParams
from samp.assignment import UserCostWeights
from samp.io import read_network, read_od
from samp.solver import SolverConfig, solve


def config_for(param: str, value: float, base: SolverConfig) -> SolverConfig:
    if param == "epsilon":
        return dataclasses.replace(base, weights=dataclasses.replace(base.weights, epsilon=value))
    if param == "k":
        return dataclasses.replace(base, access=dataclasses.replace(base.access, k_count=int(value)))
    return dataclasses.replace(base, access=dataclasses.replace(base.access, beta=value))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instance", required=True, help="directory with network/ and od.csv")
    ap.add_argument("--param", choices=["epsilon", "k", "beta"], required=True)
    ap.add_argument("--values", type=float, nargs="+", required=True)
    ap.add_argument("--epsilon", type=float, default=0.01, help="epsilon when sweeping another parameter")
    ap.add_argument("--iters", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="CSV path (default: <instance>/sweep_<param>.csv)")
    args = ap.parse_args()

    root = Path(args.instance)
    net = read_network(root / "network")
    od = read_od(root / "od.csv")
    base = SolverConfig(iterations=args.iters, seed=args.seed, weights=UserCostWeights(epsilon=args.epsilon),
                        access=AccessParams())
    out = Path(args.out) if args.out else root / f"sweep_{args.param}.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([args.param, "objective_initial", "objective_final", "rel_gain", "user_cost_change",
                    "lines_changed", "assignments", "seconds"])
        for v in args.values:
            res = solve(net, od, config_for(args.param, v, base))
            uc = (res.final_user_cost / res.baseline_user_cost - 1) if res.baseline_user_cost else math.nan
            moved = sum(a != b for a, b in zip(res.initial_y, res.y))
            gain = res.objective / res.initial_objective - 1
            w.writerow([v, f"{res.initial_objective:.8g}", f"{res.objective:.8g}", f"{gain:.6g}", f"{uc:.6g}",
                        moved, res.counters.assignment_evals, f"{res.timings['total']:.1f}"])
            fh.flush()
            print(f"{args.param}={v}: objective {res.initial_objective:.6g} -> {res.objective:.6g} ({gain:+.2%}), "
                  f"{moved} lines changed")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
