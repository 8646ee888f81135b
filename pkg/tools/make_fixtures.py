"""Regenerate the bundled 118-bus family of fixtures.

The 118-bus network uses the standard IEEE-118 topology (bus/branch graph,
transformer locations and taps, generator locations). Impedances, loads,
and dispatch are representative values generated deterministically here,
sized so the case solves comfortably from a flat start. Run from the repo
root:  python tools/make_fixtures.py
"""

import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "gridse" / "fixtures"

# (from, to) pairs of the standard IEEE-118 graph; 186 branches.
EDGES = [
    (1, 2), (1, 3), (4, 5), (3, 5), (5, 6), (6, 7), (8, 9), (8, 5), (9, 10),
    (4, 11), (5, 11), (11, 12), (2, 12), (3, 12), (7, 12), (11, 13), (12, 14),
    (13, 15), (14, 15), (12, 16), (15, 17), (16, 17), (17, 18), (18, 19),
    (19, 20), (15, 19), (20, 21), (21, 22), (22, 23), (23, 24), (23, 25),
    (26, 25), (25, 27), (27, 28), (28, 29), (30, 17), (8, 30), (26, 30),
    (17, 31), (29, 31), (23, 32), (31, 32), (27, 32), (15, 33), (19, 34),
    (35, 36), (35, 37), (33, 37), (34, 36), (34, 37), (38, 37), (37, 39),
    (37, 40), (30, 38), (39, 40), (40, 41), (40, 42), (41, 42), (43, 44),
    (34, 43), (44, 45), (45, 46), (46, 47), (46, 48), (47, 49), (42, 49),
    (42, 49), (45, 49), (48, 49), (49, 50), (49, 51), (51, 52), (52, 53),
    (53, 54), (49, 54), (49, 54), (54, 55), (54, 56), (55, 56), (56, 57),
    (50, 57), (56, 58), (51, 58), (54, 59), (56, 59), (56, 59), (55, 59),
    (59, 60), (59, 61), (60, 61), (60, 62), (61, 62), (63, 59), (63, 64),
    (64, 61), (38, 65), (64, 65), (49, 66), (49, 66), (62, 66), (62, 67),
    (65, 66), (66, 67), (65, 68), (47, 69), (49, 69), (68, 69), (69, 70),
    (24, 70), (70, 71), (24, 72), (71, 72), (71, 73), (70, 74), (70, 75),
    (69, 75), (74, 75), (76, 77), (69, 77), (75, 77), (77, 78), (78, 79),
    (77, 80), (77, 80), (79, 80), (68, 81), (81, 80), (77, 82), (82, 83),
    (83, 84), (83, 85), (84, 85), (85, 86), (86, 87), (85, 88), (85, 89),
    (88, 89), (89, 90), (89, 90), (90, 91), (89, 92), (89, 92), (91, 92),
    (92, 93), (92, 94), (93, 94), (94, 95), (80, 96), (82, 96), (94, 96),
    (80, 97), (80, 98), (80, 99), (92, 100), (94, 100), (95, 96), (96, 97),
    (98, 100), (99, 100), (100, 101), (92, 102), (101, 102), (100, 103),
    (100, 104), (103, 104), (103, 105), (100, 106), (104, 105), (105, 106),
    (105, 107), (105, 108), (106, 107), (108, 109), (103, 110), (109, 110),
    (110, 111), (110, 112), (17, 113), (32, 113), (32, 114), (27, 115),
    (114, 115), (68, 116), (12, 117), (75, 118), (76, 118),
]

# transformer branches (from, to) -> tap ratio
TRANSFORMERS = {
    (8, 5): 0.985, (26, 25): 0.960, (30, 17): 0.960, (38, 37): 0.935,
    (63, 59): 0.960, (64, 61): 0.985, (65, 66): 0.935, (68, 69): 0.935,
    (81, 80): 0.935,
}

GEN_BUSES = [
    1, 4, 6, 8, 10, 12, 15, 18, 19, 24, 25, 26, 27, 31, 32, 34, 36, 40, 42,
    46, 49, 54, 55, 56, 59, 61, 62, 65, 66, 69, 70, 72, 73, 74, 76, 77, 80,
    85, 87, 89, 90, 91, 92, 99, 100, 103, 104, 105, 107, 110, 111, 112, 113, 116,
]
SLACK = 69

# active dispatch of the major plants, MW; bus 69 is dispatched too so that
# tiled copies (where it is demoted from slack to a plain generator bus)
# stay internally balanced
PLANT_P = {
    10: 450, 12: 85, 25: 220, 26: 314, 31: 7, 46: 19, 49: 204, 54: 48,
    59: 155, 61: 160, 65: 391, 66: 392, 69: 516, 80: 477, 87: 4, 89: 607,
    100: 252, 103: 40, 111: 36,
}

TABLE13_AREAS = {
    "area1": list(range(1, 21)) + [117],
    "area2": list(range(21, 33)) + list(range(70, 76)) + [113, 114, 115],
    "area3": list(range(33, 60)),
    "area4": [68, 69] + list(range(76, 100)) + [116, 118],
    "area5": list(range(60, 68)) + list(range(100, 113)),
}


def make_case(p69=None):
    rng = np.random.default_rng(118)
    buses, branches, loads, gens = [], [], [], []
    genset = set(GEN_BUSES)
    for i in range(1, 119):
        kind = "slack" if i == SLACK else ("generator" if i in genset else "load")
        buses.append({"id": str(i), "kind": kind, "gs": 0.0, "bs": 0.0, "base_kv": 138})
    for f, t in EDGES:
        if (f, t) in TRANSFORMERS:
            entry = {
                "from": str(f), "to": str(t),
                "r": 0.0, "x": round(float(rng.uniform(0.02, 0.04)), 5),
                "b": 0.0, "tap": TRANSFORMERS[(f, t)],
            }
        else:
            x = round(float(rng.uniform(0.03, 0.15)), 5)
            entry = {
                "from": str(f), "to": str(t),
                "r": round(x / 6, 5), "x": x, "b": round(x * 0.3, 5),
            }
        branches.append(entry)
    total_load = 0.0
    for i in range(1, 119):
        if i in PLANT_P or i == SLACK:
            continue
        p = 12 + ((i * 7) % 29)
        q = round(p * 0.3, 1)
        loads.append({"bus": str(i), "p": float(p), "q": q})
        total_load += p
    plant_total = sum(p for b, p in PLANT_P.items() if b != SLACK)
    scale = 0.85 * total_load / plant_total
    for g in GEN_BUSES:
        if g == SLACK:
            # scheduled output only matters in tiled copies where the slack
            # is demoted; sized in a second pass to the standalone slack output
            p = p69 if p69 is not None else 0.0
        else:
            p = round(PLANT_P.get(g, 0.0) * scale, 1)
        vset = round(1.0 + ((g * 3) % 5) * 0.008, 3)
        gens.append({"bus": str(g), "p": p, "vset": vset})
    return {
        "name": "ieee118",
        "note": "Standard IEEE-118 topology (graph, transformer taps, generator buses); impedances, loads and dispatch are representative synthetic values.",
        "base_mva": 100.0,
        "buses": buses,
        "branches": branches,
        "loads": loads,
        "gens": gens,
    }


def make_partition():
    return {
        "name": "ieee118_areas5",
        "areas": [
            {"name": name, "buses": [str(b) for b in sorted(ids)]}
            for name, ids in TABLE13_AREAS.items()
        ],
    }


def owner_of(bus, areas):
    for name, ids in areas.items():
        if bus in ids:
            return name
    raise KeyError(bus)


def make_plan(case):
    adj = {}
    for br in case["branches"]:
        adj.setdefault(int(br["from"]), set()).add(int(br["to"]))
        adj.setdefault(int(br["to"]), set()).add(int(br["from"]))
    # greedy dominating set: PMU buses must cover every bus (itself or a neighbor)
    uncovered = set(range(1, 119))
    pmu_buses = []
    while uncovered:
        best = max(range(1, 119), key=lambda b: len(({b} | adj[b]) & uncovered))
        pmu_buses.append(best)
        uncovered -= {best} | adj[best]
    pmu_buses.sort()

    areas = TABLE13_AREAS
    scada, pmu = [], []
    vm_buses = [1, 21, 30, 44, 56, 69, 77, 90, 100, 110]
    for b in vm_buses:
        scada.append({"kind": "vm", "bus": str(b), "sigma": 0.004, "area": owner_of(b, areas)})
    for b in range(1, 119):
        area = owner_of(b, areas)
        scada.append({"kind": "p_inj", "bus": str(b), "sigma": 0.01, "area": area})
        scada.append({"kind": "q_inj", "bus": str(b), "sigma": 0.01, "area": area})
    for k, br in enumerate(case["branches"]):
        if k % 4 != 0:
            continue
        f = int(br["from"])
        area = owner_of(f, areas)
        ref = [br["from"], br["to"]]
        scada.append({"kind": "p_flow", "branch": ref, "end": "from", "sigma": 0.01, "area": area})
        scada.append({"kind": "q_flow", "branch": ref, "end": "from", "sigma": 0.01, "area": area})
    seen_pairs = set()
    for b in pmu_buses:
        currents = []
        for br in case["branches"]:
            f, t = int(br["from"]), int(br["to"])
            if b in (f, t) and (f, t) not in seen_pairs:
                currents.append([br["from"], br["to"]])
                seen_pairs.add((f, t))
        pmu.append({
            "bus": str(b), "currents": currents,
            "sigma_v": 0.001, "sigma_i": 0.001, "area": owner_of(b, areas),
        })
    return {
        "name": "ieee118_plan",
        "note": "PMUs on a greedy dominating set (global phasor coverage); SCADA: injections everywhere, flows on every 4th branch, 10 voltage points.",
        "scada": scada,
        "pmu": pmu,
    }


def make_ties():
    ties = []
    for k in range(9):
        ties.append({
            "copy_a": k, "bus_a": "30", "copy_b": (k + 1) % 9, "bus_b": "38",
            "params": {"r": 0.01, "x": 0.08},
        })
    return {
        "name": "ieee1062",
        "note": "Nine copies of ieee118 joined in a ring: copy k bus 30 to copy k+1 bus 38.",
        "tile": {"base": "ieee118.json", "copies": 9, "ties": ties},
    }


def main():
    import sys

    sys.path.insert(0, str(OUT.parents[2]))
    from gridse.network import load_case
    from gridse.powerflow import solve_power_flow

    case = make_case()
    op = solve_power_flow(load_case(case))
    model = load_case(case)
    p69 = round(float(op.p[model.slack_index]) * case["base_mva"], 1)
    case = make_case(p69=p69)
    (OUT / "ieee118.json").write_text(json.dumps(case, indent=1))
    (OUT / "ieee118_areas5.json").write_text(json.dumps(make_partition(), indent=1))
    (OUT / "ieee118_plan.json").write_text(json.dumps(make_plan(case), indent=1))
    (OUT / "ieee1062.json").write_text(json.dumps(make_ties(), indent=1))
    print("fixtures written to", OUT)


if __name__ == "__main__":
    main()
