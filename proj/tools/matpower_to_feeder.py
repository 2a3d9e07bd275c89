#!/usr/bin/env python3
"""Convert a MATPOWER distribution case (.m) into the feeder JSON schema.

Branch impedances in the MATPOWER distribution cases are given in ohms; they
are re-expressed in p.u. on the feeder's own S_base so that every shipped
feeder is self-contained.
"""
import argparse
import json
import re


def block(text, name):
    m = re.search(r"mpc\." + name + r"\s*=\s*\[(.*?)\];", text, re.S)
    rows = []
    for line in m.group(1).split("\n"):
        line = line.split("%")[0].strip().rstrip(";")
        if line:
            rows.append([float(v) for v in line.split()])
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("case")
    ap.add_argument("--name", required=True)
    ap.add_argument("--s-base-mva", type=float, required=True)
    ap.add_argument("--switch-cost", type=float, required=True)
    ap.add_argument("--solar", type=int, nargs="*", default=[])
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    text = open(args.case).read()
    buses = block(text, "bus")
    branches = block(text, "branch")
    kv = buses[0][9]
    z_base = kv * kv / args.s_base_mva
    ids = {int(b[0]): k for k, b in enumerate(buses)}

    doc = {
        "name": args.name,
        "s_base_mva": args.s_base_mva,
        "v_base_kv": kv,
        "switch_cost": args.switch_cost,
        "solar_buses": args.solar,
        "buses": [
            {
                "id": ids[int(b[0])],
                "label": int(b[0]),
                "kind": "substation" if int(b[1]) == 3 else "load",
                "p_kw": b[2],
                "q_kvar": b[3],
            }
            for b in buses
        ],
        "branches": [
            {
                "id": k,
                "from": ids[int(br[0])],
                "to": ids[int(br[1])],
                "r_pu": br[2] / z_base,
                "x_pu": br[3] / z_base,
                "switchable": True,
                "closed": int(br[10]) == 1,
            }
            for k, br in enumerate(branches)
        ],
    }
    with open(args.out, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
