"""SCADA/PMU measurement models, observability, synthesis, and bad-data injection.

SCADA measurements are nonlinear functions of the polar state (V, theta);
PMU phasors are linear in the rectangular state (e, f). Both can also be
evaluated in polar coordinates for pooled ("hybrid") estimation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .network import NetworkModel, SchemaError, build_admittance, _as_document
from .powerflow import StateVector

SCADA_KINDS = ("vm", "va", "p_inj", "q_inj", "p_flow", "q_flow")
_KIND_CODE = {k: i for i, k in enumerate(SCADA_KINDS)}


@dataclass(frozen=True)
class ScadaEntry:
    kind: str
    bus: int = -1        # dense bus index (vm/va/p_inj/q_inj)
    branch: int = -1     # dense branch index (p_flow/q_flow)
    from_end: bool = True
    sigma: float = 0.01
    area: str = ""


@dataclass(frozen=True)
class PmuComponent:
    """One scalar row of the PMU model: a rectangular part of a phasor."""

    is_current: bool
    bus: int = -1        # voltage-phasor bus (also the metered end for currents)
    branch: int = -1
    from_end: bool = True
    part: int = 0        # 0 = real, 1 = imaginary
    sigma: float = 0.001
    area: str = ""
    pmu: int = -1        # owning PMU device index


class MeasurementPlan:
    """Typed SCADA entries and PMU components with resolved dense indices."""

    def __init__(self, model: NetworkModel, scada, pmu_components, pmu_buses=()):
        self.scada = tuple(scada)
        self.pmu = tuple(pmu_components)
        self.pmu_buses = tuple(pmu_buses)  # bus index per PMU device
        for i, e in enumerate(self.scada):
            if e.kind not in SCADA_KINDS:
                raise SchemaError(f"scada[{i}]: unknown kind {e.kind!r}")
            if e.sigma <= 0:
                raise SchemaError(f"scada[{i}]: sigma must be positive")
        for i, c in enumerate(self.pmu):
            if c.sigma <= 0:
                raise SchemaError(f"pmu component {i}: sigma must be positive")
            if c.is_current:
                br = model.branches[c.branch]
                ends = (model.index(br.from_bus), model.index(br.to_bus))
                if c.bus not in ends:
                    raise SchemaError(
                        f"pmu component {i}: current branch not incident to PMU bus"
                    )

    @property
    def n_scada(self):
        return len(self.scada)

    @property
    def n_pmu(self):
        return len(self.pmu)

    def areas(self):
        seen = []
        for e in self.scada + self.pmu:
            if e.area not in seen:
                seen.append(e.area)
        return seen

    def scada_indices(self, area=None, kinds=None):
        return np.array(
            [
                i
                for i, e in enumerate(self.scada)
                if (area is None or e.area == area)
                and (kinds is None or e.kind in kinds)
            ],
            dtype=int,
        )

    def pmu_indices(self, area=None):
        return np.array(
            [i for i, c in enumerate(self.pmu) if area is None or c.area == area],
            dtype=int,
        )

    def scada_sigma(self):
        return np.array([e.sigma for e in self.scada])

    def pmu_sigma(self):
        return np.array([c.sigma for c in self.pmu])

    def describe(self, ref):
        """Human-readable label of a measurement reference ("scada"|"pmu", idx)."""
        side, i = ref
        if side == "scada":
            e = self.scada[i]
            loc = f"bus {e.bus}" if e.branch < 0 else f"branch {e.branch}:{'f' if e.from_end else 't'}"
            return f"scada[{i}] {e.kind}@{loc}"
        c = self.pmu[i]
        part = "re" if c.part == 0 else "im"
        if c.is_current:
            return f"pmu[{i}] I{part}@branch {c.branch}:{'f' if c.from_end else 't'}"
        return f"pmu[{i}] V{part}@bus {c.bus}"


def load_plan(document, model: NetworkModel) -> MeasurementPlan:
    """Parse a measurement-plan document against a model."""
    doc = _as_document(document)
    scada = []
    for i, ed in enumerate(doc.get("scada", ())):
        try:
            kind = ed["kind"]
            sigma = float(ed["sigma"])
        except KeyError as e:
            raise SchemaError(f"scada[{i}]: missing field {e.args[0]!r}") from None
        area = str(ed.get("area", ""))
        if kind in ("vm", "va", "p_inj", "q_inj"):
            scada.append(
                ScadaEntry(kind, bus=model.index(str(ed["bus"])), sigma=sigma, area=area)
            )
        elif kind in ("p_flow", "q_flow"):
            f, t = ed["branch"]
            scada.append(
                ScadaEntry(
                    kind,
                    branch=model.branch_index(str(f), str(t)),
                    from_end=ed.get("end", "from") == "from",
                    sigma=sigma,
                    area=area,
                )
            )
        else:
            raise SchemaError(f"scada[{i}]: unknown kind {kind!r}")
    comps = []
    pmu_buses = []
    for p, pd in enumerate(doc.get("pmu", ())):
        bus = model.index(str(pd["bus"]))
        pmu_buses.append(bus)
        area = str(pd.get("area", ""))
        sv = float(pd.get("sigma_v", 0.001))
        si = float(pd.get("sigma_i", 0.001))
        for part in (0, 1):
            comps.append(PmuComponent(False, bus=bus, part=part, sigma=sv, area=area, pmu=p))
        for f, t in pd.get("currents", ()):
            k = model.branch_index(str(f), str(t))
            br = model.branches[k]
            from_end = model.index(br.from_bus) == bus
            if not from_end and model.index(br.to_bus) != bus:
                raise SchemaError(f"pmu[{p}]: current branch {f}-{t} not incident to bus {pd['bus']}")
            for part in (0, 1):
                comps.append(
                    PmuComponent(True, bus=bus, branch=k, from_end=from_end, part=part,
                                 sigma=si, area=area, pmu=p)
                )
    return MeasurementPlan(model, scada, comps, pmu_buses)


# -- support and reachability -------------------------------------------------


def scada_support(model, plan, idx):
    """Bus-index support of each selected SCADA row."""
    adj = model.adjacency()
    out = []
    for i in idx:
        e = plan.scada[i]
        if e.kind in ("vm", "va"):
            out.append({e.bus})
        elif e.kind in ("p_inj", "q_inj"):
            out.append({e.bus} | adj[e.bus])
        else:
            br = model.branches[e.branch]
            out.append({model.index(br.from_bus), model.index(br.to_bus)})
    return out


def pmu_support(model, plan, idx):
    out = []
    for i in idx:
        c = plan.pmu[i]
        if c.is_current:
            br = model.branches[c.branch]
            out.append({model.index(br.from_bus), model.index(br.to_bus)})
        else:
            out.append({c.bus})
    return out


def pmu_reachable(model, plan, idx):
    """Buses whose voltage is fixed by the selected PMU components.

    Standard phasor rule: start from voltage-phasor buses and extend
    breadth-first through branches whose current is measured.
    """
    seeds = set()
    edges = []
    for i in idx:
        c = plan.pmu[i]
        if c.is_current:
            br = model.branches[c.branch]
            edges.append((model.index(br.from_bus), model.index(br.to_bus)))
        else:
            seeds.add(c.bus)
    reach = set(seeds)
    changed = True
    while changed:
        changed = False
        for f, t in edges:
            if f in reach and t not in reach:
                reach.add(t)
                changed = True
            elif t in reach and f not in reach:
                reach.add(f)
                changed = True
    return reach


# -- evaluation ----------------------------------------------------------------


class SubsetEvaluator:
    """h(x) and Jacobians for chosen measurement rows over a bus subset.

    Polar state layout: [theta of subset buses except refs, V of subset buses].
    Rectangular layout: [e of subset buses, f of subset buses].
    """

    def __init__(self, model, plan, scada_idx=None, pmu_idx=None, bus_subset=None,
                 refs=(), admittance=None):
        y = admittance or build_admittance(model)
        n = model.n_bus
        self.model = model
        self.plan = plan
        self.scada_idx = np.arange(plan.n_scada) if scada_idx is None else np.asarray(scada_idx, dtype=int)
        self.pmu_idx = np.arange(plan.n_pmu) if pmu_idx is None else np.asarray(pmu_idx, dtype=int)
        self.buses = np.arange(n) if bus_subset is None else np.asarray(bus_subset, dtype=int)
        self.ns = len(self.buses)
        self._local = -np.ones(n, dtype=int)
        self._local[self.buses] = np.arange(self.ns)
        self.refs = tuple(sorted(self._local[list(refs)])) if len(refs) else ()
        if any(r < 0 for r in self.refs):
            raise ValueError("reference bus outside subset")
        self.theta_keep = np.array([i for i in range(self.ns) if i not in self.refs], dtype=int)
        self.n_cols_polar = len(self.theta_keep) + self.ns
        # dense local admittance; rows are complete only for buses whose whole
        # neighborhood is inside the subset, which support validation enforces
        self.ysub = y.ybus[self.buses][:, self.buses].toarray()
        self._prepare_rows(model, plan, y)

    def _prepare_rows(self, model, plan, y):
        loc = self._local
        kinds = np.array([_KIND_CODE[plan.scada[i].kind] for i in self.scada_idx], dtype=int)
        self.s_kind = kinds
        self.s_bus = np.array([loc[plan.scada[i].bus] if plan.scada[i].bus >= 0 else -1 for i in self.scada_idx], dtype=int)
        rows_br = np.array([plan.scada[i].branch for i in self.scada_idx], dtype=int)
        ends = np.array([plan.scada[i].from_end for i in self.scada_idx], dtype=bool)
        supports = scada_support(model, plan, self.scada_idx)
        for where, sup in zip(self.scada_idx, supports):
            if any(loc[b] < 0 for b in sup):
                raise ValueError(f"scada row {where} not supported by bus subset")
        # branch terminal data per flow row, oriented metered-end first
        self.s_a = np.zeros(len(kinds), dtype=int)
        self.s_b = np.zeros(len(kinds), dtype=int)
        self.s_y1 = np.zeros(len(kinds), dtype=complex)
        self.s_y2 = np.zeros(len(kinds), dtype=complex)
        flow = (kinds == _KIND_CODE["p_flow"]) | (kinds == _KIND_CODE["q_flow"])
        for r in np.flatnonzero(flow):
            k = rows_br[r]
            if ends[r]:
                a, b2 = y.f_idx[k], y.t_idx[k]
                y1, y2 = y.yff[k], y.yft[k]
            else:
                a, b2 = y.t_idx[k], y.f_idx[k]
                y1, y2 = y.ytt[k], y.ytf[k]
            self.s_a[r], self.s_b[r] = loc[a], loc[b2]
            self.s_y1[r], self.s_y2[r] = y1, y2
        self.s_flow = flow
        self.s_is_q = (kinds == _KIND_CODE["q_inj"]) | (kinds == _KIND_CODE["q_flow"])
        self.s_inj = (kinds == _KIND_CODE["p_inj"]) | (kinds == _KIND_CODE["q_inj"])
        self.s_vm = kinds == _KIND_CODE["vm"]
        self.s_va = kinds == _KIND_CODE["va"]
        # PMU components
        self.p_isi = np.array([plan.pmu[i].is_current for i in self.pmu_idx], dtype=bool)
        self.p_part = np.array([plan.pmu[i].part for i in self.pmu_idx], dtype=int)
        self.p_a = np.zeros(len(self.pmu_idx), dtype=int)
        self.p_b = np.zeros(len(self.pmu_idx), dtype=int)
        self.p_y1 = np.zeros(len(self.pmu_idx), dtype=complex)
        self.p_y2 = np.zeros(len(self.pmu_idx), dtype=complex)
        for r, i in enumerate(self.pmu_idx):
            c = plan.pmu[i]
            if c.is_current:
                k = c.branch
                if c.from_end:
                    a, b2 = y.f_idx[k], y.t_idx[k]
                    y1, y2 = y.yff[k], y.yft[k]
                else:
                    a, b2 = y.t_idx[k], y.f_idx[k]
                    y1, y2 = y.ytt[k], y.ytf[k]
            else:
                a, b2, y1, y2 = c.bus, c.bus, 0, 0
            if loc[a] < 0 or loc[b2] < 0:
                raise ValueError(f"pmu component {i} not supported by bus subset")
            self.p_a[r], self.p_b[r] = loc[a], loc[b2]
            self.p_y1[r], self.p_y2[r] = y1, y2

    # -- polar -----------------------------------------------------------------

    def h_polar(self, vm, va):
        """Stacked [scada rows, pmu components] at a polar state."""
        v = vm * np.exp(1j * va)
        out_s = np.zeros(len(self.s_kind))
        if self.s_vm.any():
            out_s[self.s_vm] = vm[self.s_bus[self.s_vm]]
        if self.s_va.any():
            out_s[self.s_va] = va[self.s_bus[self.s_va]]
        if self.s_inj.any():
            rows = np.flatnonzero(self.s_inj)
            kb = self.s_bus[rows]
            s = v[kb] * np.conj(self.ysub[kb] @ v)
            out_s[rows] = np.where(self.s_is_q[rows], s.imag, s.real)
        if self.s_flow.any():
            rows = np.flatnonzero(self.s_flow)
            valp = v[self.s_a[rows]] * np.conj(
                self.s_y1[rows] * v[self.s_a[rows]] + self.s_y2[rows] * v[self.s_b[rows]]
            )
            out_s[rows] = np.where(self.s_is_q[rows], valp.imag, valp.real)
        out_p = self._pmu_complex(v)
        return np.concatenate([out_s, out_p])

    def _pmu_complex(self, v):
        if len(self.pmu_idx) == 0:
            return np.zeros(0)
        ph = np.where(
            self.p_isi,
            self.p_y1 * v[self.p_a] + self.p_y2 * v[self.p_b],
            v[self.p_a],
        )
        return np.where(self.p_part == 0, ph.real, ph.imag)

    def jac_polar(self, vm, va):
        """Rows ordered as [scada, pmu]; columns [theta(non-ref), V]."""
        ns = self.ns
        v = vm * np.exp(1j * va)
        m = len(self.s_kind) + len(self.pmu_idx)
        h_th = np.zeros((m, ns))
        h_vm = np.zeros((m, ns))
        rows_vm = np.flatnonzero(self.s_vm)
        h_vm[rows_vm, self.s_bus[rows_vm]] = 1.0
        rows_va = np.flatnonzero(self.s_va)
        h_th[rows_va, self.s_bus[rows_va]] = 1.0
        rows_inj = np.flatnonzero(self.s_inj)
        if len(rows_inj):
            kb = self.s_bus[rows_inj]
            ib = self.ysub[kb] @ v
            a = -1j * (v[kb, None] * np.conj(self.ysub[kb]) * np.conj(v)[None, :])
            a[np.arange(len(kb)), kb] += 1j * v[kb] * np.conj(ib)
            bmat = v[kb, None] * np.conj(self.ysub[kb]) * np.conj(v)[None, :] / vm[None, :]
            bmat[np.arange(len(kb)), kb] += np.conj(ib) * v[kb] / vm[kb]
            isq = self.s_is_q[rows_inj]
            h_th[rows_inj] = np.where(isq[:, None], a.imag, a.real)
            h_vm[rows_inj] = np.where(isq[:, None], bmat.imag, bmat.real)
        rows_fl = np.flatnonzero(self.s_flow)
        if len(rows_fl):
            av, bv = self.s_a[rows_fl], self.s_b[rows_fl]
            y1, y2 = self.s_y1[rows_fl], self.s_y2[rows_fl]
            vaa, vbb = v[av], v[bv]
            cur = y1 * vaa + y2 * vbb
            d_tha = 1j * (vaa * np.conj(cur) - np.abs(vaa) ** 2 * np.conj(y1))
            d_thb = -1j * vaa * np.conj(y2) * np.conj(vbb)
            d_va = np.conj(cur) * vaa / vm[av] + vm[av] * np.conj(y1)
            d_vb = vaa * np.conj(y2) * np.conj(vbb) / vm[bv]
            isq = self.s_is_q[rows_fl]

            def put(target, cols, vals):
                target[rows_fl, cols] += np.where(isq, vals.imag, vals.real)

            put(h_th, av, d_tha)
            put(h_th, bv, d_thb)
            put(h_vm, av, d_va)
            put(h_vm, bv, d_vb)
        if len(self.pmu_idx):
            off = len(self.s_kind)
            rows = np.arange(len(self.pmu_idx))
            isi = self.p_isi
            av, bv = self.p_a, self.p_b
            y1 = np.where(isi, self.p_y1, 1.0)
            y2 = np.where(isi, self.p_y2, 0.0)
            d_tha = 1j * y1 * v[av]
            d_thb = 1j * y2 * v[bv]
            d_va = y1 * v[av] / vm[av]
            d_vb = y2 * v[bv] / vm[bv]
            re = self.p_part == 0

            def putp(target, cols, vals):
                np.add.at(target, (off + rows, cols), np.where(re, vals.real, vals.imag))

            putp(h_th, av, d_tha)
            putp(h_th, bv, d_thb)
            putp(h_vm, av, d_va)
            putp(h_vm, bv, d_vb)
        return np.hstack([h_th[:, self.theta_keep], h_vm])

    # -- rectangular (PMU-linear) ------------------------------------------------

    def design_rect(self):
        """Constant PMU design matrix; columns [e of subset, f of subset]."""
        ns = self.ns
        m = len(self.pmu_idx)
        c = np.zeros((m, 2 * ns))
        rows = np.arange(m)
        isi = self.p_isi
        y1 = np.where(isi, self.p_y1, 1.0)
        y2 = np.where(isi, self.p_y2, 0.0)
        re = self.p_part == 0
        # a phasor y*v contributes [[Re y, -Im y],[Im y, Re y]] on (e, f)
        np.add.at(c, (rows, self.p_a), np.where(re, y1.real, y1.imag))
        np.add.at(c, (rows, ns + self.p_a), np.where(re, -y1.imag, y1.real))
        np.add.at(c, (rows, self.p_b), np.where(re, y2.real, y2.imag))
        np.add.at(c, (rows, ns + self.p_b), np.where(re, -y2.imag, y2.real))
        return c

    def h_rect(self, e, f):
        v = e + 1j * f
        return self._pmu_complex(v)


# -- spec-level wrappers --------------------------------------------------------


def evaluate_scada(model, state: StateVector, plan, admittance=None):
    """Noise-free SCADA values at a state (plan row order)."""
    ev = SubsetEvaluator(model, plan, pmu_idx=[], admittance=admittance)
    return ev.h_polar(state.vm, state.va)


def evaluate_pmu(model, state: StateVector, plan, admittance=None):
    """Noise-free PMU component values (rectangular parts) at a state."""
    ev = SubsetEvaluator(model, plan, scada_idx=[], admittance=admittance)
    return ev.h_rect(state.e, state.f)


def scada_jacobian(model, state: StateVector, plan, admittance=None):
    """d h_scada / d(theta, V); thetas of all non-slack buses first, then all V."""
    ev = SubsetEvaluator(
        model, plan, pmu_idx=[], refs=(model.slack_index,), admittance=admittance
    )
    return ev.jac_polar(state.vm, state.va)


def pmu_design_matrix(model, plan, admittance=None):
    """Constant matrix mapping [e; f] to PMU component values."""
    ev = SubsetEvaluator(model, plan, scada_idx=[], admittance=admittance)
    return ev.design_rect()


# -- observability ---------------------------------------------------------------


RANK_TOL = 1e-8


@dataclass(frozen=True)
class ObservabilityEntry:
    scope: str
    kind: str
    observable: bool
    unobservable_buses: tuple
    rank: int
    n_states: int


@dataclass(frozen=True)
class ObservabilityReport:
    entries: tuple

    def get(self, scope, kind):
        for e in self.entries:
            if e.scope == scope and e.kind == kind:
                return e
        raise KeyError((scope, kind))

    def observable(self, scope, kind):
        return self.get(scope, kind).observable


def _null_support(matrix, cols_per_bus):
    """Bus ids whose state columns intersect the numerical null space."""
    m = np.asarray(matrix)
    n_cols = m.shape[1]
    if m.shape[0] == 0:
        return list(range(len(cols_per_bus))), 0
    u, s, vt = np.linalg.svd(m, full_matrices=True)
    tol = RANK_TOL * max(1.0, s[0] if len(s) else 0.0)
    rank = int((s > tol).sum())
    null = vt[rank:]
    bad = set()
    if null.size:
        support = (np.abs(null) > 1e-6).any(axis=0)
        for b, cols in enumerate(cols_per_bus):
            if any(support[c] for c in cols if c < n_cols):
                bad.add(b)
    return sorted(bad), rank


def _scada_matrix_and_cols(model, plan, idx, buses, refs, admittance):
    ev = SubsetEvaluator(model, plan, scada_idx=idx, pmu_idx=[], bus_subset=buses,
                         refs=refs, admittance=admittance)
    vm = np.ones(ev.ns)
    va = np.zeros(ev.ns)
    h = ev.jac_polar(vm, va)
    nth = len(ev.theta_keep)
    cols_per_bus = []
    for i in range(ev.ns):
        cols = []
        pos = np.flatnonzero(ev.theta_keep == i)
        if len(pos):
            cols.append(int(pos[0]))
        cols.append(nth + i)
        cols_per_bus.append(cols)
    return h, cols_per_bus, ev


def _pmu_matrix_and_cols(model, plan, idx, buses, admittance):
    ev = SubsetEvaluator(model, plan, scada_idx=[], pmu_idx=idx, bus_subset=buses,
                         admittance=admittance)
    c = ev.design_rect()
    cols_per_bus = [[i, ev.ns + i] for i in range(ev.ns)]
    return c, cols_per_bus, ev


def check_observability(model, plan, partition=None, scope="global") -> ObservabilityReport:
    """Numeric observability of the SCADA and PMU sets at the flat state.

    ``scope="global"`` ranks the full-network matrices; ``scope="area"``
    (requires a partition) checks each area using only its own measurements
    over its own buses plus the external buses those measurements touch.
    """
    y = build_admittance(model)
    entries = []
    if scope == "global":
        for kind in ("scada", "pmu"):
            if kind == "scada":
                h, cols, ev = _scada_matrix_and_cols(
                    model, plan, None, None, (model.slack_index,), y
                )
            else:
                h, cols, ev = _pmu_matrix_and_cols(model, plan, None, None, y)
            bad, rank = _null_support(h, cols)
            entries.append(
                ObservabilityEntry(
                    scope="global",
                    kind=kind,
                    observable=len(bad) == 0,
                    unobservable_buses=tuple(model.bus_ids[ev.buses[b]] for b in bad),
                    rank=rank,
                    n_states=h.shape[1],
                )
            )
    elif scope == "area":
        if partition is None:
            raise ValueError("area scope requires a partition")
        for a, name in enumerate(partition.names):
            own = np.array(sorted(model.index(b) for b in partition.areas[a]))
            own_set = set(own.tolist())
            for kind in ("scada", "pmu"):
                if kind == "scada":
                    idx = plan.scada_indices(area=name)
                    sup = set().union(*scada_support(model, plan, idx)) if len(idx) else set()
                    buses = np.array(sorted(own_set | sup))
                    if model.slack_index in own_set:
                        refs = (model.slack_index,)
                    else:
                        bnd = sorted(model.index(b) for b in partition.boundary[a])
                        refs = (bnd[0],) if bnd else (int(own[0]),)
                    h, cols, ev = _scada_matrix_and_cols(model, plan, idx, buses, refs, y)
                else:
                    idx = plan.pmu_indices(area=name)
                    sup = set().union(*pmu_support(model, plan, idx)) if len(idx) else set()
                    buses = np.array(sorted(own_set | sup))
                    h, cols, ev = _pmu_matrix_and_cols(model, plan, idx, buses, y)
                bad, rank = _null_support(h, cols)
                bad_own = [b for b in bad if int(ev.buses[b]) in own_set]
                entries.append(
                    ObservabilityEntry(
                        scope=name,
                        kind=kind,
                        observable=len(bad_own) == 0,
                        unobservable_buses=tuple(model.bus_ids[ev.buses[b]] for b in bad_own),
                        rank=rank,
                        n_states=h.shape[1],
                    )
                )
    else:
        raise ValueError(f"unknown scope {scope!r}")
    return ObservabilityReport(tuple(entries))


# -- synthesis and bad data -------------------------------------------------------


@dataclass
class MeasurementSet:
    """Measurement values for a plan, plus activity masks and truth labels.

    Corrections never reindex: removal clears the active flag, replacement
    rewrites the value and inflates the sigma scale, so entry references
    stay stable through the whole bad-data pipeline.
    """

    plan: MeasurementPlan
    z_scada: np.ndarray
    z_pmu: np.ndarray
    active_scada: np.ndarray = None
    active_pmu: np.ndarray = None
    sigma_scale_scada: np.ndarray = None
    sigma_scale_pmu: np.ndarray = None
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.active_scada is None:
            self.active_scada = np.ones(self.plan.n_scada, dtype=bool)
        if self.active_pmu is None:
            self.active_pmu = np.ones(self.plan.n_pmu, dtype=bool)
        if self.sigma_scale_scada is None:
            self.sigma_scale_scada = np.ones(self.plan.n_scada)
        if self.sigma_scale_pmu is None:
            self.sigma_scale_pmu = np.ones(self.plan.n_pmu)
        if not (np.isfinite(self.z_scada).all() and np.isfinite(self.z_pmu).all()):
            raise ValueError("measurement values must be finite")

    def copy(self):
        return MeasurementSet(
            plan=self.plan,
            z_scada=self.z_scada.copy(),
            z_pmu=self.z_pmu.copy(),
            active_scada=self.active_scada.copy(),
            active_pmu=self.active_pmu.copy(),
            sigma_scale_scada=self.sigma_scale_scada.copy(),
            sigma_scale_pmu=self.sigma_scale_pmu.copy(),
            labels=dict(self.labels),
        )

    def scada_sigmas(self):
        return self.plan.scada_sigma() * self.sigma_scale_scada

    def pmu_sigmas(self):
        return self.plan.pmu_sigma() * self.sigma_scale_pmu

    def value(self, ref):
        side, i = ref
        return self.z_scada[i] if side == "scada" else self.z_pmu[i]

    def set_value(self, ref, value):
        side, i = ref
        if side == "scada":
            self.z_scada[i] = value
        else:
            self.z_pmu[i] = value

    def sigma(self, ref):
        side, i = ref
        return self.scada_sigmas()[i] if side == "scada" else self.pmu_sigmas()[i]

    def bad_refs(self):
        return set(self.labels)


def _rng(*entropy):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def synthesize(model, plan, truth, seed) -> MeasurementSet:
    """Draw one noisy measurement set around a true operating point.

    Separate counter-based streams are keyed per (seed, block), so the
    draw for an entry never depends on evaluation order.
    """
    state = truth.state if hasattr(truth, "state") else truth
    z_s = evaluate_scada(model, state, plan)
    z_p = evaluate_pmu(model, state, plan)
    if plan.n_scada:
        z_s = z_s + plan.scada_sigma() * _rng(seed, 0).standard_normal(plan.n_scada)
    if plan.n_pmu:
        z_p = z_p + plan.pmu_sigma() * _rng(seed, 1).standard_normal(plan.n_pmu)
    return MeasurementSet(plan=plan, z_scada=z_s, z_pmu=z_p)


def _resolve_selector(sel, plan, model, rng):
    """Return the entry reference ("scada"|"pmu", index) a selector names."""
    if "random" in sel:
        pool = sel["random"]
        if pool == "scada":
            cand = [("scada", int(i)) for i in range(plan.n_scada)]
        elif pool == "pmu":
            cand = [("pmu", int(i)) for i in range(plan.n_pmu)]
        elif pool in SCADA_KINDS:
            cand = [("scada", int(i)) for i in plan.scada_indices(kinds=(pool,))]
        else:
            raise SchemaError(f"unknown random pool {pool!r}")
        if not cand:
            raise SchemaError(f"no candidates for random pool {pool!r}")
        return cand[int(rng.integers(len(cand)))]
    side = sel.get("type", "scada")
    if side == "scada":
        kind = sel["kind"]
        if kind in ("vm", "va", "p_inj", "q_inj"):
            bus = model.index(str(sel["bus"]))
            matches = [
                i for i, e in enumerate(plan.scada) if e.kind == kind and e.bus == bus
            ]
        else:
            k = model.branch_index(*[str(b) for b in sel["branch"]])
            from_end = sel.get("end", "from") == "from"
            matches = [
                i
                for i, e in enumerate(plan.scada)
                if e.kind == kind and e.branch == k and e.from_end == from_end
            ]
        if len(matches) != 1:
            raise SchemaError(f"selector {sel} matched {len(matches)} scada entries")
        return ("scada", matches[0])
    if side == "pmu":
        bus = model.index(str(sel["bus"]))
        part = {"re": 0, "im": 1}[sel.get("part", "re")]
        if "branch" in sel:
            k = model.branch_index(*[str(b) for b in sel["branch"]])
            matches = [
                i
                for i, c in enumerate(plan.pmu)
                if c.is_current and c.branch == k and c.bus == bus and c.part == part
            ]
        else:
            matches = [
                i
                for i, c in enumerate(plan.pmu)
                if not c.is_current and c.bus == bus and c.part == part
            ]
        if len(matches) != 1:
            raise SchemaError(f"selector {sel} matched {len(matches)} pmu components")
        return ("pmu", matches[0])
    raise SchemaError(f"unknown selector type {side!r}")


def inject_bad_data(mset: MeasurementSet, specs, seed, model=None) -> MeasurementSet:
    """Apply gross-error specs and record truth labels on the returned copy."""
    out = mset.copy()
    plan = mset.plan
    for si, spec in enumerate(specs or ()):
        rng = _rng(seed, 2, si)
        mode = spec.get("mode", "sigma")
        value = float(spec.get("value", 20.0))
        if mode == "conforming":
            bus = model.index(str(spec["bus"]))
            k = model.branch_index(*[str(b) for b in spec["branch"]])
            from_end = spec.get("end", "from") == "from"
            refs = []
            for kind, match in (("p_inj", lambda e: e.bus == bus),
                                ("p_flow", lambda e: e.branch == k and e.from_end == from_end)):
                found = [i for i, e in enumerate(plan.scada) if e.kind == kind and match(e)]
                if len(found) != 1:
                    raise SchemaError(f"conforming spec {spec}: no unique {kind} entry")
                refs.append(("scada", found[0]))
            sign = 1.0 if not spec.get("random_sign") else float(rng.choice((-1.0, 1.0)))
            for ref in refs:
                old = out.value(ref)
                delta = sign * value * out.sigma(ref)
                out.set_value(ref, old + delta)
                out.labels[ref] = {"original": float(old), "injected": float(old + delta)}
            continue
        ref = _resolve_selector(spec["select"], plan, model, rng)
        old = out.value(ref)
        if mode == "absolute":
            new = float(spec["value"])
        elif mode == "sigma":
            sign = 1.0 if not spec.get("random_sign") else float(rng.choice((-1.0, 1.0)))
            new = old + sign * value * out.sigma(ref)
        else:
            raise SchemaError(f"unknown bad-data mode {mode!r}")
        out.set_value(ref, new)
        out.labels[ref] = {"original": float(old), "injected": float(new)}
    return out
