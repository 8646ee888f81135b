"""ADMM consensus coordination of per-area estimators.

Each area solves a regularized local WLS over its own measurements; areas
exchange boundary-state copies with the owning neighbor, which averages
them into the consensus value and sends it back. Only global observability
is required: locally unobservable directions are anchored through the
consensus prox term.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .estimators import (
    LocalEstimate,
    ObservabilityError,
    PolarPseudo,
    PolarSolver,
    RectPseudo,
    RectSolver,
)
from .measurement import (
    MeasurementSet,
    pmu_reachable,
    pmu_support,
    scada_support,
)
from .network import NetworkModel, Partition, build_admittance
from .powerflow import StateVector


@dataclass(frozen=True)
class AdmmOptions:
    """Consensus solver options.

    Residual norms are measured in state units (pu / rad): primal is the
    copy-vs-consensus disagreement, dual the per-copy consensus movement.
    The penalty default matches the largest measurement weights (sigma
    0.001 -> weight 1e6); penalties far below the weight scale make the
    gauge modes of slack-free areas almost free and stall convergence.
    """

    rho: float = 1e6
    eps: float = 1e-6
    max_iter: int = 500
    adaptive_rho: bool = False  # residual balancing (mu=10, factor 2)
    over_relax: float = 1.0  # 1.0 = plain ADMM; 1.5-1.8 accelerates
    local_tol: float = 1e-8
    local_max_iter: int = 25
    huber_k: float = None
    record_objective: bool = True
    parallel_areas: bool = False


@dataclass
class AdmmTrace:
    primal: np.ndarray
    dual: np.ndarray
    objective: np.ndarray
    disagreement: np.ndarray  # (iterations, areas): max |copy - consensus|
    rho: np.ndarray

    def __len__(self):
        return len(self.primal)


def consensus_residuals(trace: AdmmTrace):
    """Primal/dual/objective series of a run, for tables and plots."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    return {
        "primal": trace.primal.copy(),
        "dual": trace.dual.copy(),
        "objective": trace.objective.copy(),
    }


@dataclass
class InteractionLog:
    """Directed (sender, receiver) area pairs used by consensus messages."""

    pairs: frozenset
    messages_per_iteration: int


@dataclass
class DistributedEstimate:
    kind: str
    bus_ids: tuple
    support: np.ndarray
    vm: np.ndarray
    va: np.ndarray
    var_vm: np.ndarray
    var_va: np.ndarray
    areas: list
    trace: AdmmTrace
    converged: bool
    iterations: int
    interactions: InteractionLog
    objective: float
    consensus: dict = field(default_factory=dict)  # (comp, bus) -> value
    duals: dict = field(default_factory=dict)  # (area, comp, bus) -> value

    def state(self) -> StateVector:
        if not self.support.all():
            raise ValueError("estimate does not cover every bus")
        return StateVector(self.vm.copy(), self.va.copy())

    def to_dict(self):
        return {
            "kind": self.kind,
            "buses": list(self.bus_ids),
            "support": self.support.tolist(),
            "vm": [None if not s else v for s, v in zip(self.support, self.vm)],
            "va": [None if not s else v for s, v in zip(self.support, self.va)],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "objective": float(self.objective),
            "trace": {
                "primal": self.trace.primal.tolist(),
                "dual": self.trace.dual.tolist(),
                "objective": self.trace.objective.tolist(),
            },
        }


class _AreaProblem:
    __slots__ = ("index", "name", "own", "buses", "solver", "layout", "vm", "va",
                 "x", "objective", "prox_cols", "prox_entries", "copy_slice", "active")

    def __init__(self, index, name):
        self.index = index
        self.name = name
        self.active = False


def _split_pseudo(pseudo, owner_of_bus, n_areas, rect):
    """Partition pseudo rows by the area owning their bus."""
    out = [None] * n_areas
    if pseudo is None or len(pseudo) == 0:
        return out
    cls = RectPseudo if rect else PolarPseudo
    for a in range(n_areas):
        mask = owner_of_bus[pseudo.bus_idx] == a
        if mask.any():
            out[a] = cls(pseudo.bus_idx[mask], pseudo.comp[mask],
                         pseudo.value[mask], pseudo.sigma[mask])
    return out


def run_admm(model: NetworkModel, partition: Partition, measurements: MeasurementSet,
             kind: str = "scada", opts: AdmmOptions = None, pseudo=None,
             warm: DistributedEstimate = None, admittance=None) -> DistributedEstimate:
    """Decentralized WLS of one estimator kind ("scada", "pmu", or "hybrid").

    Raises ObservabilityError if the pooled active measurement set is not
    globally observable for the requested kind.
    """
    opts = opts or AdmmOptions()
    if opts.rho <= 0 or opts.eps <= 0:
        raise ValueError("rho and eps must be positive")
    y = admittance or build_admittance(model)
    plan = measurements.plan
    n = model.n_bus
    owner_of_bus = np.zeros(n, dtype=int)
    for b_id, a in partition.owner.items():
        owner_of_bus[model.index(b_id)] = a

    rect = kind == "pmu"
    pseudo_by_area = _split_pseudo(pseudo, owner_of_bus, partition.n_areas, rect)

    _check_global_observability(model, measurements, kind, y, pseudo)

    areas = []
    for a, name in enumerate(partition.names):
        ap = _AreaProblem(a, name)
        own = np.array(sorted(model.index(b) for b in partition.areas[a]), dtype=int)
        ap.own = own
        sc_idx = np.array([], dtype=int)
        pm_idx = np.array([], dtype=int)
        if kind in ("scada", "hybrid"):
            sc_idx = plan.scada_indices(area=name)
            sc_idx = sc_idx[measurements.active_scada[sc_idx]]
        if kind in ("pmu", "hybrid"):
            pm_idx = plan.pmu_indices(area=name)
            pm_idx = pm_idx[measurements.active_pmu[pm_idx]]
        ps = pseudo_by_area[a]
        if rect:
            reach = pmu_reachable(model, plan, pm_idx)
            if ps is not None:
                reach = set(reach) | {int(b) for b in ps.bus_idx}
            if not reach:
                areas.append(ap)  # inactive: nothing observable from here
                continue
            buses = np.array(sorted(reach), dtype=int)
            loc = -np.ones(n, dtype=int)
            loc[buses] = np.arange(len(buses))
            keep = [
                i for i, sup in zip(pm_idx, pmu_support(model, plan, pm_idx))
                if all(loc[b] >= 0 for b in sup)
            ]
            keep = np.asarray(keep, dtype=int)
            ap.solver = RectSolver(
                model, plan, measurements.z_pmu[keep], measurements.pmu_sigmas()[keep],
                keep, buses, admittance=y, pseudo=ps, huber_k=opts.huber_k,
            )
            ap.x = np.concatenate([np.ones(len(buses)), np.zeros(len(buses))])
            ap.layout = "rect"
        else:
            sup = set()
            for s in scada_support(model, plan, sc_idx):
                sup |= s
            for s in pmu_support(model, plan, pm_idx):
                sup |= s
            if ps is not None:
                sup |= {int(b) for b in ps.bus_idx}
            buses = np.array(sorted(set(own.tolist()) | sup), dtype=int)
            refs = (model.slack_index,) if model.slack_index in own else ()
            z = np.concatenate([measurements.z_scada[sc_idx], measurements.z_pmu[pm_idx]])
            sig = np.concatenate([
                measurements.scada_sigmas()[sc_idx], measurements.pmu_sigmas()[pm_idx]
            ])
            ap.solver = PolarSolver(model, plan, z, sig, sc_idx, pm_idx, buses, refs,
                                    admittance=y, pseudo=ps, huber_k=opts.huber_k)
            ap.vm = np.ones(len(buses))
            ap.va = np.zeros(len(buses))
            ap.layout = "polar"
        ap.buses = buses
        ap.active = True
        areas.append(ap)

    # -- consensus bookkeeping --------------------------------------------------
    comps = ("e", "f") if rect else ("vm", "va")
    holders = {}  # (comp, bus) -> list[(area, col)] with col -1 for a fixed copy
    for ap in areas:
        if not ap.active:
            continue
        for pos, b in enumerate(ap.buses):
            for ci, comp in enumerate(comps):
                col = ap.solver.col_of(pos, ci)
                if col < 0 and not (comp == "va" and b == model.slack_index):
                    continue
                holders.setdefault((comp, int(b)), []).append((ap.index, col))
    keys = sorted(k for k, v in holders.items() if len(v) >= 2)
    key_id = {k: i for i, k in enumerate(keys)}
    n_entries = len(keys)
    c_area, c_col, c_entry = [], [], []
    for k in keys:
        for a, col in holders[k]:
            c_area.append(a)
            c_col.append(col)
            c_entry.append(key_id[k])
    c_area = np.array(c_area, dtype=int)
    c_col = np.array(c_col, dtype=int)
    c_entry = np.array(c_entry, dtype=int)
    n_copies = len(c_area)
    entry_count = np.bincount(c_entry, minlength=n_entries).astype(float)

    # per-area copy views and prox columns
    for ap in areas:
        if not ap.active:
            continue
        sel = np.flatnonzero(c_area == ap.index)
        ap.copy_slice = sel
        good = c_col[sel] >= 0
        ap.prox_cols = c_col[sel][good]
        ap.prox_entries = c_entry[sel][good]

    # interaction log: every copy travels holder <-> owner of the bus
    pairs = set()
    msgs = 0
    for k in keys:
        owner = int(owner_of_bus[k[1]])
        for a, _ in holders[k]:
            if a != owner:
                pairs.add((a, owner))
                pairs.add((owner, a))
                msgs += 2
    interactions = InteractionLog(pairs=frozenset(pairs), messages_per_iteration=msgs)

    z = np.array([1.0 if k[0] in ("vm", "e") else 0.0 for k in keys])
    u = np.zeros(n_copies)
    if warm is not None:
        for i, k in enumerate(keys):
            z[i] = warm.consensus.get(k, z[i])
        for i in range(n_copies):
            k = keys[c_entry[i]]
            u[i] = warm.duals.get((int(c_area[i]), k[0], k[1]), 0.0)
        for ap in areas:
            if not ap.active:
                continue
            if ap.layout == "polar":
                sup = warm.support[ap.buses]
                ap.vm = np.where(sup, warm.vm[ap.buses], 1.0)
                ap.va = np.where(sup, warm.va[ap.buses], 0.0)
                if model.slack_index in ap.buses:
                    ap.va[np.searchsorted(ap.buses, model.slack_index)] *= (
                        0.0 if model.slack_index in ap.own else 1.0
                    )
            else:
                sup = warm.support[ap.buses]
                e = np.where(sup, warm.vm[ap.buses] * np.cos(warm.va[ap.buses]), 1.0)
                f = np.where(sup, warm.vm[ap.buses] * np.sin(warm.va[ap.buses]), 0.0)
                ap.x = np.concatenate([e, f])

    rho = float(opts.rho)
    primal_hist, dual_hist, obj_hist, rho_hist, dis_hist = [], [], [], [], []
    converged = False
    active_areas = [ap for ap in areas if ap.active]

    def solve_area(ap):
        sel = ap.copy_slice
        prox = None
        if len(ap.prox_cols):
            target = z[ap.prox_entries] - u[sel[c_col[sel] >= 0]]
            prox = (ap.prox_cols, target, rho)
        if ap.layout == "polar":
            if prox is None:
                # no consensus coupling (single-area or isolated): full solve
                vm, va, *_ = ap.solver.solve(
                    ap.vm, ap.va, tol=opts.local_tol,
                    max_iter=max(50, opts.local_max_iter), require_observable=False,
                )
            else:
                vm, va = ap.solver.solve_fast(
                    ap.vm, ap.va, prox, max_iter=min(2, opts.local_max_iter)
                )
            j = ap.solver.measurement_objective(vm, va) if opts.record_objective else 0.0
            return (vm, va, j)
        x, j, _ = ap.solver.solve(x0=ap.x, prox=prox)
        if not opts.record_objective:
            j = 0.0
        return (x, None, j)

    it = 0
    for it in range(1, opts.max_iter + 1):
        if opts.parallel_areas and len(active_areas) > 1:
            with ThreadPoolExecutor(max_workers=len(active_areas)) as ex:
                results = list(ex.map(solve_area, active_areas))
        else:
            results = [solve_area(ap) for ap in active_areas]
        obj = 0.0
        for ap, res in zip(active_areas, results):
            if ap.layout == "polar":
                ap.vm, ap.va, ap.objective = res
            else:
                ap.x, _, ap.objective = res
            obj += ap.objective
        # gather copies
        cv = np.zeros(n_copies)
        for ap in active_areas:
            sel = ap.copy_slice
            cols = c_col[sel]
            good = cols >= 0
            xloc = np.concatenate([ap.va[ap.solver.ev.theta_keep], ap.vm]) if ap.layout == "polar" else ap.x
            vals = np.zeros(len(sel))
            vals[good] = xloc[cols[good]]
            cv[sel] = vals  # fixed copies stay 0 (slack angle)
        z_old = z
        cv_hat = cv
        if opts.over_relax != 1.0:
            cv_hat = opts.over_relax * cv + (1.0 - opts.over_relax) * z_old[c_entry]
        sums = np.zeros(n_entries)
        np.add.at(sums, c_entry, cv_hat + u)
        z = sums / entry_count
        u = u + cv_hat - z[c_entry]
        diff = cv - z[c_entry]
        # both residuals in state units (pu / rad) so eps thresholds stay
        # meaningful for any penalty scale: primal = copy disagreement,
        # dual = per-copy consensus movement
        primal = float(np.linalg.norm(diff))
        dual = float(np.linalg.norm((z - z_old)[c_entry]))
        dis = np.zeros(len(areas))
        for ap in active_areas:
            if len(ap.copy_slice):
                dis[ap.index] = float(np.max(np.abs(diff[ap.copy_slice])))
        primal_hist.append(primal)
        dual_hist.append(dual)
        obj_hist.append(obj if opts.record_objective else np.nan)
        rho_hist.append(rho)
        dis_hist.append(dis)
        if max(primal, dual) < opts.eps:
            converged = True
            break
        if opts.adaptive_rho and n_entries:
            if primal > 10.0 * dual and dual > 0:
                rho *= 2.0
                u /= 2.0
            elif dual > 10.0 * primal and primal >= 0:
                rho /= 2.0
                u *= 2.0

    # -- assembly ----------------------------------------------------------------
    vm_g = np.full(n, np.nan)
    va_g = np.full(n, np.nan)
    support = np.zeros(n, dtype=bool)
    local_list = []
    for ap in areas:
        if not ap.active:
            continue
        if ap.layout == "polar":
            cov = ap.solver.covariance(ap.vm, ap.va, rho0=opts.rho, cols=ap.prox_cols)
            est = LocalEstimate(
                area=ap.name, kind=kind, bus_idx=ap.buses,
                bus_ids=tuple(model.bus_ids[b] for b in ap.buses),
                vm=ap.vm, va=ap.va, cov=cov, layout="polar",
                theta_keep=ap.solver.ev.theta_keep, objective=ap.objective,
                iterations=it, converged=converged,
            )
        else:
            ns = len(ap.buses)
            v = ap.x[:ns] + 1j * ap.x[ns:]
            cov = ap.solver.covariance(rho0=opts.rho, cols=ap.prox_cols)
            est = LocalEstimate(
                area=ap.name, kind=kind, bus_idx=ap.buses,
                bus_ids=tuple(model.bus_ids[b] for b in ap.buses),
                vm=np.abs(v), va=np.angle(v), cov=cov, layout="rect",
                theta_keep=np.arange(ns), objective=ap.objective,
                iterations=it, converged=converged,
            )
        local_list.append(est)
        own_mask = np.isin(ap.buses, ap.own)
        gidx = ap.buses[own_mask]
        vm_g[gidx] = est.vm[own_mask]
        va_g[gidx] = est.va[own_mask]
        support[gidx] = True
    # per-entry variances of the assembled estimate: at the consensus optimum
    # the distributed solution coincides with the pooled WLS, whose
    # covariance is the statistically meaningful one for fusion weights
    var_vm_g, var_va_g = _pooled_variances(
        model, measurements, kind, vm_g, va_g, support, y, pseudo
    )

    consensus = {k: float(z[i]) for i, k in enumerate(keys)}
    duals = {}
    for i in range(n_copies):
        k = keys[c_entry[i]]
        duals[(int(c_area[i]), k[0], k[1])] = float(u[i])
    trace = AdmmTrace(
        primal=np.array(primal_hist),
        dual=np.array(dual_hist),
        objective=np.array(obj_hist),
        disagreement=np.array(dis_hist) if dis_hist else np.zeros((0, len(areas))),
        rho=np.array(rho_hist),
    )
    return DistributedEstimate(
        kind=kind,
        bus_ids=model.bus_ids,
        support=support,
        vm=vm_g,
        va=va_g,
        var_vm=var_vm_g,
        var_va=var_va_g,
        areas=local_list,
        trace=trace,
        converged=converged,
        iterations=it,
        interactions=interactions,
        objective=float(obj_hist[-1]) if obj_hist else 0.0,
        consensus=consensus,
        duals=duals,
    )


def _pooled_variances(model, measurements, kind, vm, va, support, y, pseudo=None):
    """Diagonal of the pooled-WLS covariance at the assembled state."""
    from .measurement import SubsetEvaluator

    n = model.n_bus
    plan = measurements.plan
    var_vm = np.full(n, np.nan)
    var_va = np.full(n, np.nan)
    if kind == "pmu":
        pm = np.flatnonzero(measurements.active_pmu)
        reach = sorted(pmu_reachable(model, plan, pm))
        if pseudo is not None and len(pseudo):
            reach = sorted(set(reach) | {int(b) for b in pseudo.bus_idx})
        buses = np.array(reach, dtype=int)
        loc = -np.ones(n, dtype=int)
        loc[buses] = np.arange(len(buses))
        keep = np.array(
            [i for i, sup in zip(pm, pmu_support(model, plan, pm))
             if all(loc[b] >= 0 for b in sup)], dtype=int)
        solver = RectSolver(model, plan, measurements.z_pmu[keep],
                            measurements.pmu_sigmas()[keep], keep, buses,
                            admittance=y, pseudo=pseudo)
        cov = solver.covariance()
        ns = len(buses)
        d_e = np.diag(cov)[:ns]
        d_f = np.diag(cov)[ns:]
        d_ef = np.array([cov[i, ns + i] for i in range(ns)])
        for p, b in enumerate(buses):
            if not support[b]:
                continue
            e = vm[b] * np.cos(va[b])
            f = vm[b] * np.sin(va[b])
            v2 = vm[b] ** 2
            var_vm[b] = (e**2 * d_e[p] + 2 * e * f * d_ef[p] + f**2 * d_f[p]) / v2
            var_va[b] = (f**2 * d_e[p] - 2 * e * f * d_ef[p] + e**2 * d_f[p]) / v2**2
        return var_vm, var_va
    sc = np.flatnonzero(measurements.active_scada)
    pm = np.flatnonzero(measurements.active_pmu) if kind == "hybrid" else np.array([], dtype=int)
    z = np.concatenate([measurements.z_scada[sc], measurements.z_pmu[pm]])
    sig = np.concatenate([measurements.scada_sigmas()[sc], measurements.pmu_sigmas()[pm]])
    solver = PolarSolver(model, plan, z, sig, sc, pm, np.arange(n),
                         (model.slack_index,), admittance=y, pseudo=pseudo)
    cov = solver.covariance(vm, va)
    d = np.diag(cov)
    nth = len(solver.ev.theta_keep)
    var_va[solver.ev.theta_keep] = d[:nth]
    var_va[model.slack_index] = 0.0
    var_vm[:] = d[nth:]
    return var_vm, var_va


def _check_global_observability(model, measurements, kind, y, pseudo=None):
    """Rank-check the pooled active rows for the requested estimator kind."""
    plan = measurements.plan
    n = model.n_bus
    if kind == "pmu":
        pm = np.flatnonzero(measurements.active_pmu)
        reach = pmu_reachable(model, plan, pm)
        if pseudo is not None and len(pseudo):
            reach = set(reach) | {int(b) for b in pseudo.bus_idx}
        missing = [model.bus_ids[b] for b in range(n) if b not in reach]
        if missing:
            raise ObservabilityError(
                f"PMU set not globally observable; unreached buses {missing[:5]}"
            )
        return
    sc = np.flatnonzero(measurements.active_scada)
    pm = np.flatnonzero(measurements.active_pmu) if kind == "hybrid" else np.array([], dtype=int)
    z = np.concatenate([measurements.z_scada[sc], measurements.z_pmu[pm]])
    sig = np.concatenate([measurements.scada_sigmas()[sc], measurements.pmu_sigmas()[pm]])
    solver = PolarSolver(model, plan, z, sig, sc, pm, np.arange(n),
                         (model.slack_index,), admittance=y, pseudo=pseudo)
    gain = solver.gain_matrix(np.ones(n), np.zeros(n))
    sval = np.linalg.svd(gain, compute_uv=False)
    if sval[-1] <= 1e-8 * max(1.0, sval[0]) * len(sval):
        raise ObservabilityError(f"{kind} measurement set not globally observable")
