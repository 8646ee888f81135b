"""Bundled fixture documents and helpers to resolve/build them."""

from __future__ import annotations

import json
import os
from pathlib import Path

_PKG_DIR = Path(__file__).parent

ENV_VAR = "GRIDSE_FIXTURES"


def fixtures_root() -> Path:
    """Fixture directory; override with the GRIDSE_FIXTURES environment variable."""
    env = os.environ.get(ENV_VAR)
    return Path(env) if env else _PKG_DIR


def fixture_path(name: str) -> Path:
    """Resolve a fixture reference: absolute paths win, then the fixture root."""
    p = Path(name)
    if p.is_absolute() and p.exists():
        return p
    cand = fixtures_root() / name
    if cand.exists():
        return cand
    bundled = _PKG_DIR / name
    if bundled.exists():
        return bundled
    if p.exists():
        return p
    raise FileNotFoundError(f"fixture {name!r} not found (root: {fixtures_root()})")


def load_fixture(name: str) -> dict:
    return json.loads(fixture_path(name).read_text())


def load_case_fixture(name: str):
    """Load a case fixture; documents with a ``tile`` key are expanded."""
    from ..network import load_case, tile_network

    doc = load_fixture(name)
    if "tile" in doc:
        spec = doc["tile"]
        base = load_case_fixture(spec["base"])
        ties = [
            (t["copy_a"], t["bus_a"], t["copy_b"], t["bus_b"], t.get("params", {}))
            for t in spec["ties"]
        ]
        return tile_network(base, int(spec["copies"]), ties)
    return load_case(doc)


def tiled_partition(copies: int, base_model, prefix="copy"):
    """One area per copy of a tiled network."""
    from ..network import make_partition

    return [
        (f"{prefix}{k}", [f"{k}:{b}" for b in base_model.bus_ids]) for k in range(copies)
    ]


def replicate_plan(plan_doc: dict, copies: int) -> dict:
    """Replicate a measurement-plan document over every copy of a tiled network."""
    out = {"name": plan_doc.get("name", "plan") + f"_x{copies}", "scada": [], "pmu": []}
    for k in range(copies):
        area = f"copy{k}"
        for e in plan_doc.get("scada", ()):
            e2 = dict(e)
            if "bus" in e2:
                e2["bus"] = f"{k}:{e2['bus']}"
            if "branch" in e2:
                e2["branch"] = [f"{k}:{b}" for b in e2["branch"]]
            e2["area"] = area
            out["scada"].append(e2)
        for e in plan_doc.get("pmu", ()):
            e2 = dict(e)
            e2["bus"] = f"{k}:{e2['bus']}"
            e2["currents"] = [[f"{k}:{a}" for a in br] for br in e2["currents"]]
            e2["area"] = area
            out["pmu"].append(e2)
    return out
