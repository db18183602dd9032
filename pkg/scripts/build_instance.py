"""Generate an artificial instance and write it in the CLI's file layout.

    python scripts/build_instance.py --out runs/default
    python scripts/build_instance.py --out runs/small --rows 4 --cols 5 --communities 10 \
        --facilities 4 --total-fleet 60 --fleet-max 12
"""

import argparse
import dataclasses
import json
import logging
import time
from pathlib import Path

from samp.cli import plain
from samp.io import write_boardings, write_fleet, write_network, write_od
from samp.pipeline.artificial import ArtificialNetConfig, generate_artificial


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rows", type=int)
    ap.add_argument("--cols", type=int)
    ap.add_argument("--communities", type=int, dest="n_communities")
    ap.add_argument("--facilities", type=int, dest="n_facilities")
    ap.add_argument("--total-fleet", type=int, dest="total_fleet")
    ap.add_argument("--fleet-max", type=int, dest="fleet_max")
    ap.add_argument("--no-fleet-search", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    overrides = {k: v for k, v in vars(args).items()
                 if k in {f.name for f in dataclasses.fields(ArtificialNetConfig)} and v is not None}
    cfg = ArtificialNetConfig(**overrides, fleet_search=not args.no_fleet_search)
    t0 = time.perf_counter()
    inst = generate_artificial(cfg)
    elapsed = time.perf_counter() - t0

    out = Path(args.out)
    write_network(inst.network, out / "network")
    write_od(inst.od, out / "od.csv")
    write_fleet(inst.fleet, out / "fleet.csv")
    write_boardings(inst.boardings, out / "boardings.csv")
    info = {"config": plain(cfg), "seconds": elapsed, "lines": inst.network.n_lines,
            "stops": len(inst.network.stops), "fleet_search_moves": inst.fleet_search_moves,
            "ipf_iterations": inst.ipf.iterations, "ipf_error": inst.ipf.error, "trips": inst.od.total}
    (out / "instance.json").write_text(json.dumps(info, indent=2) + "\n")
    print(f"{out}: {info['lines']} lines, {info['stops']} stops, {info['trips']:.0f} trips, {elapsed:.1f} s")


if __name__ == "__main__":
    main()
