"""Regenerate src/doekit/data/eulv_feeder.json.

Source: the IEEE European LV test feeder as shipped with pandapower
(``pandapower/networks/IEEE_European_LV_Off_Peak_1.json``).  Only the line,
load and transformer tables are used; pandapower itself is not needed.

    python scripts/make_eulv_feeder.py path/to/IEEE_European_LV_Off_Peak_1.json
"""
import argparse
import io
import json
import math
from pathlib import Path

import pandas as pd

from doekit.feeder import feeder_from_document, reduce_feeder

OUT = Path(__file__).resolve().parents[1] / "src" / "doekit" / "data" / "eulv_feeder.json"


def table(obj, key):
    entry = obj[key]
    return pd.read_json(io.StringIO(entry["_object"]), orient=entry.get("orient", "split"))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("source")
    ap.add_argument("--s-base-kva", type=float, default=10.0)
    ap.add_argument("--out", default=str(OUT))
    args = ap.parse_args()

    obj = json.loads(Path(args.source).read_text())["_object"]
    bus, line = table(obj, "bus"), table(obj, "line")
    load, trafo = table(obj, "asymmetric_load"), table(obj, "trafo").iloc[0]

    v_ph = trafo.vn_lv_kv * 1e3 / math.sqrt(3)
    z_base = v_ph ** 2 / (args.s_base_kva * 1e3)
    name = {i: str(b) for i, b in zip(bus.index, bus["name"])}

    # transformer as a series impedance, per phase, referred to the LV side
    z_t = trafo.vk_percent / 100 * trafo.vn_lv_kv ** 2 / trafo.sn_mva
    r_t = trafo.vkr_percent / 100 * trafo.vn_lv_kv ** 2 / trafo.sn_mva
    lines = [{"from": name[trafo.hv_bus], "to": name[trafo.lv_bus],
              "r_pu": r_t / z_base, "x_pu": math.sqrt(z_t ** 2 - r_t ** 2) / z_base,
              "s_max_kva": trafo.sn_mva * 1e3 / 3}]
    for ln in line.itertuples():
        lines.append({"from": name[ln.from_bus], "to": name[ln.to_bus],
                      "r_pu": ln.r_ohm_per_km * ln.length_km / z_base,
                      "x_pu": ln.x_ohm_per_km * ln.length_km / z_base,
                      "s_max_kva": ln.max_i_ka * 1e3 * v_ph / 1e3})

    customers = []
    for ld in load.itertuples():
        p = (ld.p_a_mw + ld.p_b_mw + ld.p_c_mw) * 1e3
        q = (ld.q_a_mvar + ld.q_b_mvar + ld.q_c_mvar) * 1e3
        customers.append({"node": name[ld.bus], "label": ld.name, "p_max_kw": 5.0,
                          "q_max_kvar": 2.0, "p_fixed_kw": p, "q_fixed_kvar": q})
    cust = {c["node"] for c in customers}
    doc = {
        "name": "eulv",
        "base": {"s_kva": args.s_base_kva, "v_volts": v_ph},
        "slack": {"id": name[trafo.hv_bus], "v0_pu2": 1.0},
        "nodes": [{"id": name[i], "customer": name[i] in cust} for i in bus.index],
        "lines": lines,
        "customers": customers,
    }
    feeder = reduce_feeder(feeder_from_document(doc))
    out = feeder.to_document()
    out["name"] = "eulv"
    labels = {c["node"]: c["label"] for c in customers}
    for c in out["customers"]:
        c["label"] = labels[c["node"]]
    Path(args.out).write_text(json.dumps(out, indent=1))
    print(f"{feeder.n} nodes, {len(feeder.customers)} customers -> {args.out}")


if __name__ == "__main__":
    main()
