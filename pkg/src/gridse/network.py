"""Network model: buses, branches, per-unit admittance, multi-area partitions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

BUS_KINDS = ("slack", "generator", "load")


class SchemaError(ValueError):
    """A case/partition/plan document violates its schema."""


class NetworkError(ValueError):
    """A structurally invalid network (duplicate ids, disconnected, ...)."""


@dataclass(frozen=True)
class Bus:
    id: str
    kind: str = "load"
    gs: float = 0.0  # shunt conductance, pu on system base
    bs: float = 0.0  # shunt susceptance, pu
    base_kv: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: str
    to_bus: str
    r: float
    x: float
    b: float = 0.0  # total line charging susceptance, pu
    tap: float = 1.0
    shift: float = 0.0  # phase shift, rad
    status: bool = True


@dataclass(frozen=True)
class Load:
    bus: str
    p: float  # pu
    q: float  # pu


@dataclass(frozen=True)
class Gen:
    bus: str
    p: float  # scheduled active power, pu
    vset: float = 1.0


class NetworkModel:
    """Immutable grid model in per-unit on ``base_mva``.

    Bus ids are opaque strings; dense indices are assigned once in bus
    order and used by every matrix in the package.
    """

    def __init__(self, buses, branches, base_mva=100.0, loads=(), gens=()):
        self.buses = tuple(buses)
        self.branches = tuple(branches)
        self.base_mva = float(base_mva)
        self.loads = tuple(loads)
        self.gens = tuple(gens)
        self._index = {}
        for i, bus in enumerate(self.buses):
            if bus.id in self._index:
                raise NetworkError(f"duplicate bus id {bus.id!r}")
            if bus.kind not in BUS_KINDS:
                raise NetworkError(f"bus {bus.id!r}: unknown kind {bus.kind!r}")
            self._index[bus.id] = i
        slacks = [b.id for b in self.buses if b.kind == "slack"]
        if len(slacks) != 1:
            raise NetworkError(f"exactly one slack bus required, found {len(slacks)}")
        self.slack_id = slacks[0]
        self.slack_index = self._index[self.slack_id]
        for k, br in enumerate(self.branches):
            for end in (br.from_bus, br.to_bus):
                if end not in self._index:
                    raise NetworkError(f"branch {k} ({br.from_bus}-{br.to_bus}): unknown bus {end!r}")
            if br.r < 0:
                raise NetworkError(f"branch {k}: negative resistance")
            if br.x == 0:
                raise NetworkError(f"branch {k}: zero reactance")
            if br.tap == 0:
                raise NetworkError(f"branch {k}: zero tap ratio")
        for ld in self.loads:
            if ld.bus not in self._index:
                raise NetworkError(f"load at unknown bus {ld.bus!r}")
        for g in self.gens:
            if g.bus not in self._index:
                raise NetworkError(f"generator at unknown bus {g.bus!r}")
        self._check_connected()

    # -- basic accessors ---------------------------------------------------

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def bus_ids(self):
        return tuple(b.id for b in self.buses)

    def index(self, bus_id):
        try:
            return self._index[bus_id]
        except KeyError:
            raise NetworkError(f"unknown bus {bus_id!r}") from None

    def branch_index(self, from_bus, to_bus):
        """First branch matching the endpoint pair (either orientation)."""
        for k, br in enumerate(self.branches):
            if (br.from_bus, br.to_bus) == (from_bus, to_bus) or (
                br.to_bus, br.from_bus
            ) == (from_bus, to_bus):
                return k
        raise NetworkError(f"no branch between {from_bus!r} and {to_bus!r}")

    def in_service(self):
        return [k for k, br in enumerate(self.branches) if br.status]

    def _check_connected(self):
        n = self.n_bus
        if n == 0:
            raise NetworkError("empty network")
        adj = [[] for _ in range(n)]
        for br in self.branches:
            if not br.status:
                continue
            f, t = self._index[br.from_bus], self._index[br.to_bus]
            adj[f].append(t)
            adj[t].append(f)
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        if not seen.all():
            missing = [self.buses[i].id for i in np.flatnonzero(~seen)[:5]]
            raise NetworkError(f"network graph is disconnected (e.g. buses {missing})")

    def adjacency(self):
        """Neighbor bus indices per bus over in-service branches."""
        adj = [set() for _ in range(self.n_bus)]
        for br in self.branches:
            if not br.status:
                continue
            f, t = self._index[br.from_bus], self._index[br.to_bus]
            adj[f].add(t)
            adj[t].add(f)
        return adj

    # -- injection schedules ----------------------------------------------

    def scheduled_injections(self):
        """Net scheduled (P, Q) per bus in pu: generation minus load."""
        p = np.zeros(self.n_bus)
        q = np.zeros(self.n_bus)
        for ld in self.loads:
            i = self._index[ld.bus]
            p[i] -= ld.p
            q[i] -= ld.q
        for g in self.gens:
            p[self._index[g.bus]] += g.p
        return p, q

    def voltage_setpoints(self):
        """Per-bus magnitude setpoints; 1.0 where no generator specifies one."""
        vset = np.ones(self.n_bus)
        for g in self.gens:
            vset[self._index[g.bus]] = g.vset
        return vset

    def bus_kinds(self):
        return np.array([b.kind for b in self.buses])


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Sparse node admittance plus per-branch two-port coefficients.

    ``yff/yft/ytf/ytt`` are aligned with the model branch list and are
    zero for out-of-service branches, so branch flows can be evaluated
    without re-checking status.
    """

    ybus: sp.csr_matrix
    yff: np.ndarray
    yft: np.ndarray
    ytf: np.ndarray
    ytt: np.ndarray
    f_idx: np.ndarray
    t_idx: np.ndarray


def branch_admittances(branch):
    """Two-port (yff, yft, ytf, ytt) of a single pi-model branch."""
    ys = 1.0 / complex(branch.r, branch.x)
    ych = 0.5j * branch.b
    t = branch.tap * np.exp(1j * branch.shift)
    yff = (ys + ych) / (branch.tap**2)
    yft = -ys / np.conj(t)
    ytf = -ys / t
    ytt = ys + ych
    return yff, yft, ytf, ytt


def build_admittance(model: NetworkModel) -> AdmittanceMatrix:
    """Assemble the node admittance matrix from the standard pi model."""
    n = model.n_bus
    nl = len(model.branches)
    yff = np.zeros(nl, dtype=complex)
    yft = np.zeros(nl, dtype=complex)
    ytf = np.zeros(nl, dtype=complex)
    ytt = np.zeros(nl, dtype=complex)
    f_idx = np.zeros(nl, dtype=int)
    t_idx = np.zeros(nl, dtype=int)
    rows, cols, vals = [], [], []
    for k, br in enumerate(model.branches):
        f_idx[k] = model.index(br.from_bus)
        t_idx[k] = model.index(br.to_bus)
        if not br.status:
            continue
        yff[k], yft[k], ytf[k], ytt[k] = branch_admittances(br)
        rows += [f_idx[k], f_idx[k], t_idx[k], t_idx[k]]
        cols += [f_idx[k], t_idx[k], f_idx[k], t_idx[k]]
        vals += [yff[k], yft[k], ytf[k], ytt[k]]
    for i, bus in enumerate(model.buses):
        if bus.gs or bus.bs:
            rows.append(i)
            cols.append(i)
            vals.append(complex(bus.gs, bus.bs))
    ybus = sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)
    return AdmittanceMatrix(ybus, yff, yft, ytf, ytt, f_idx, t_idx)


# -- case documents ---------------------------------------------------------


def _as_document(doc):
    if isinstance(doc, dict):
        return doc
    if isinstance(doc, Path):
        return json.loads(doc.read_text())
    if isinstance(doc, str):
        s = doc.lstrip()
        if s.startswith("{"):
            return json.loads(doc)
        return json.loads(Path(doc).read_text())
    raise SchemaError(f"unsupported document type {type(doc)!r}")


def load_case(document) -> NetworkModel:
    """Build a NetworkModel from a case document (dict, JSON text, or path).

    Loads, generator schedules, and bus shunts are given in MW/Mvar and
    converted to per-unit on ``base_mva``; branch impedances are already pu.
    """
    doc = _as_document(document)
    try:
        base = float(doc["base_mva"])
        bus_docs = doc["buses"]
        branch_docs = doc["branches"]
    except KeyError as e:
        raise SchemaError(f"case document missing field {e.args[0]!r}") from None
    if base <= 0:
        raise SchemaError("base_mva must be positive")
    buses = []
    for i, bd in enumerate(bus_docs):
        try:
            buses.append(
                Bus(
                    id=str(bd["id"]),
                    kind=bd.get("kind", "load"),
                    gs=float(bd.get("gs", 0.0)) / base,
                    bs=float(bd.get("bs", 0.0)) / base,
                    base_kv=float(bd.get("base_kv", 0.0)),
                )
            )
        except KeyError as e:
            raise SchemaError(f"buses[{i}]: missing field {e.args[0]!r}") from None
    branches = []
    for i, rd in enumerate(branch_docs):
        try:
            branches.append(
                Branch(
                    from_bus=str(rd["from"]),
                    to_bus=str(rd["to"]),
                    r=float(rd["r"]),
                    x=float(rd["x"]),
                    b=float(rd.get("b", 0.0)),
                    tap=float(rd.get("tap", 1.0)) or 1.0,
                    shift=float(rd.get("shift", 0.0)),
                    status=bool(rd.get("status", True)),
                )
            )
        except KeyError as e:
            raise SchemaError(f"branches[{i}]: missing field {e.args[0]!r}") from None
    loads = [
        Load(bus=str(ld["bus"]), p=float(ld["p"]) / base, q=float(ld.get("q", 0.0)) / base)
        for ld in doc.get("loads", ())
    ]
    gens = [
        Gen(bus=str(g["bus"]), p=float(g.get("p", 0.0)) / base, vset=float(g.get("vset", 1.0)))
        for g in doc.get("gens", ())
    ]
    return NetworkModel(buses, branches, base, loads, gens)


# -- partitions --------------------------------------------------------------


class PartitionError(ValueError):
    """Invalid multi-area partition."""


@dataclass(frozen=True)
class Partition:
    """Disjoint bus areas covering the network, with boundary structure.

    ``boundary[a]`` holds the area's buses incident to an in-service
    inter-area branch; ``neighbors[a]`` the adjacent area indices.
    """

    names: tuple
    areas: tuple  # tuple of tuples of bus ids
    owner: dict = field(repr=False)  # bus id -> area index
    boundary: tuple = field(repr=False)
    neighbors: tuple = field(repr=False)

    @property
    def n_areas(self):
        return len(self.areas)

    def area_of(self, bus_id):
        return self.owner[bus_id]


def make_partition(named_areas, model: NetworkModel) -> Partition:
    """Build (and validate) a Partition from [(name, [bus ids...]), ...]."""
    owner = {}
    names, areas = [], []
    for a, (name, bus_list) in enumerate(named_areas):
        names.append(str(name))
        ids = tuple(str(b) for b in bus_list)
        for b in ids:
            if b not in model.bus_ids:
                raise PartitionError(f"area {name!r}: unknown bus {b!r}")
            if b in owner:
                raise PartitionError(f"bus {b!r} appears in more than one area")
            owner[b] = a
        areas.append(ids)
    uncovered = set(model.bus_ids) - set(owner)
    if uncovered:
        raise PartitionError(f"buses not covered by any area: {sorted(uncovered)[:5]}")
    boundary = [set() for _ in areas]
    neighbors = [set() for _ in areas]
    for br in model.branches:
        if not br.status:
            continue
        af, at = owner[br.from_bus], owner[br.to_bus]
        if af != at:
            boundary[af].add(br.from_bus)
            boundary[at].add(br.to_bus)
            neighbors[af].add(at)
            neighbors[at].add(af)
    return Partition(
        names=tuple(names),
        areas=tuple(areas),
        owner=owner,
        boundary=tuple(frozenset(b) for b in boundary),
        neighbors=tuple(frozenset(s) for s in neighbors),
    )


def load_partition(document, model: NetworkModel) -> Partition:
    """Parse a partition document ``{"areas": [{name, buses}]}``."""
    doc = _as_document(document)
    try:
        area_docs = doc["areas"]
    except KeyError:
        raise SchemaError("partition document missing field 'areas'") from None
    named = []
    for i, ad in enumerate(area_docs):
        try:
            named.append((ad.get("name", f"area{i}"), ad["buses"]))
        except KeyError:
            raise SchemaError(f"areas[{i}]: missing field 'buses'") from None
    return make_partition(named, model)


def serialize_partition(partition: Partition) -> dict:
    return {
        "areas": [
            {"name": name, "buses": list(buses)}
            for name, buses in zip(partition.names, partition.areas)
        ]
    }


# -- network tiling -----------------------------------------------------------


def tile_network(base: NetworkModel, copies: int, tie_spec) -> NetworkModel:
    """Replicate ``base`` ``copies`` times and join the copies by tie branches.

    Bus ids are namespaced ``"{copy}:{id}"``. Copy 0 keeps the slack; the
    other copies' slack buses are demoted to generator buses. Each tie is
    ``(copy_a, bus_a, copy_b, bus_b, params)`` with params holding at least
    ``r`` and ``x``.
    """
    if copies < 1:
        raise NetworkError("copies must be >= 1")

    def nid(k, bus_id):
        return f"{k}:{bus_id}"

    buses, branches, loads, gens = [], [], [], []
    for k in range(copies):
        for bus in base.buses:
            kind = bus.kind
            if kind == "slack" and k > 0:
                kind = "generator"
            buses.append(Bus(nid(k, bus.id), kind, bus.gs, bus.bs, bus.base_kv))
        for br in base.branches:
            branches.append(
                Branch(nid(k, br.from_bus), nid(k, br.to_bus), br.r, br.x, br.b, br.tap, br.shift, br.status)
            )
        for ld in base.loads:
            loads.append(Load(nid(k, ld.bus), ld.p, ld.q))
        for g in base.gens:
            gens.append(Gen(nid(k, g.bus), g.p, g.vset))
    for i, tie in enumerate(tie_spec):
        ka, ba, kb, bb, params = tie
        for k, b in ((ka, ba), (kb, bb)):
            if not 0 <= k < copies:
                raise NetworkError(f"tie {i}: invalid copy index {k}")
            if str(b) not in base.bus_ids:
                raise NetworkError(f"tie {i}: unknown bus {b!r} in base network")
        branches.append(
            Branch(
                nid(ka, str(ba)),
                nid(kb, str(bb)),
                r=float(params.get("r", 0.0)),
                x=float(params["x"]),
                b=float(params.get("b", 0.0)),
                tap=float(params.get("tap", 1.0)),
                shift=float(params.get("shift", 0.0)),
            )
        )
    return NetworkModel(buses, branches, base.base_mva, loads, gens)
