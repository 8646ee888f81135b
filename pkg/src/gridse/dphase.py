"""Parallel two-track pipeline: SCADA and PMU decentralized estimates,
state-set extension to a common support, cross-validating bad-data
processing, and inverse-variance fusion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .admm import AdmmOptions, DistributedEstimate, run_admm
from .network import NetworkModel, Partition, build_admittance
from .powerflow import StateVector
from .reports import EstimationReport

_VAR_FLOOR = 1e-16


@dataclass
class ExtendedEstimate:
    """One track's estimate propagated onto the full bus set."""

    kind: str
    bus_ids: tuple
    support: np.ndarray
    vm: np.ndarray
    va: np.ndarray
    var_vm: np.ndarray
    var_va: np.ndarray
    provenance: np.ndarray  # "direct" | "extended" | "" (uncovered)
    slack_index: int
    unreached: tuple = ()


@dataclass
class FusedEstimate:
    bus_ids: tuple
    support: np.ndarray
    vm: np.ndarray
    va: np.ndarray
    var_vm: np.ndarray
    var_va: np.ndarray
    weight_scada_vm: np.ndarray  # weight on the SCADA track per entry
    weight_scada_va: np.ndarray
    gauge_shift: float = 0.0


def _polar_to_rect_var(vm, va, var_vm, var_va):
    e, f = vm * np.cos(va), vm * np.sin(va)
    var_e = np.cos(va) ** 2 * var_vm + f**2 * var_va
    var_f = np.sin(va) ** 2 * var_vm + e**2 * var_va
    return e, f, var_e, var_f

def _rect_to_polar_var(e, f, var_e, var_f):
    v2 = e**2 + f**2
    var_vm = (e**2 * var_e + f**2 * var_f) / v2
    var_va = (f**2 * var_e + e**2 * var_f) / v2**2
    return var_vm, var_va


def extend_state_set(local: DistributedEstimate, model: NetworkModel, plan,
                     partition: Partition, measurements, target_support=None,
                     admittance=None) -> ExtendedEstimate:
    """Propagate an estimate onto the companion support.

    PMU-track entries reach new buses through branches whose current is
    measured, inverting the branch current equation with the measured
    phasor; variances propagate first-order and never fall below the
    source entry's. SCADA-track extension is the identity on its support.
    """
    y = admittance or build_admittance(model)
    n = model.n_bus
    support = local.support.copy()
    vm = local.vm.copy()
    va = local.va.copy()
    var_vm = np.maximum(np.where(np.isnan(local.var_vm), 0.0, local.var_vm), _VAR_FLOOR)
    var_va = np.maximum(np.where(np.isnan(local.var_va), 0.0, local.var_va), _VAR_FLOOR)
    var_vm[~support] = np.nan
    var_va[~support] = np.nan
    provenance = np.where(support, "direct", "").astype(object)

    if local.kind != "scada":
        # collect measured current phasors still active, as complex values
        currents = {}
        for i, c in enumerate(plan.pmu):
            if not c.is_current or not measurements.active_pmu[i]:
                continue
            key = (c.branch, c.from_end)
            entry = currents.setdefault(key, {})
            part = "re" if c.part == 0 else "im"
            entry[part] = (measurements.z_pmu[i], measurements.pmu_sigmas()[i] ** 2)
        changed = True
        while changed:
            changed = False
            for (k, from_end), comp in sorted(currents.items()):
                if "re" not in comp or "im" not in comp:
                    continue
                a, b = (y.f_idx[k], y.t_idx[k]) if from_end else (y.t_idx[k], y.f_idx[k])
                y1, y2 = (y.yff[k], y.yft[k]) if from_end else (y.ytt[k], y.ytf[k])
                i_meas = complex(comp["re"][0], comp["im"][0])
                var_i = (comp["re"][1], comp["im"][1])
                for src, dst, c_v, c_i in (
                    (a, b, -y1 / y2, 1.0 / y2),
                    (b, a, -y2 / y1, 1.0 / y1),
                ):
                    if not support[src] or support[dst]:
                        continue
                    v_src = vm[src] * np.exp(1j * va[src])
                    v_new = c_v * v_src + c_i * i_meas
                    e_s, f_s, ve_s, vf_s = _polar_to_rect_var(
                        vm[src], va[src], var_vm[src], var_va[src]
                    )

                    def rot_var(c, ve, vf):
                        return (c.real**2 * ve + c.imag**2 * vf,
                                c.imag**2 * ve + c.real**2 * vf)

                    ve1, vf1 = rot_var(c_v, ve_s, vf_s)
                    ve2, vf2 = rot_var(c_i, var_i[0], var_i[1])
                    vvm, vva = _rect_to_polar_var(
                        v_new.real, v_new.imag, ve1 + ve2, vf1 + vf2
                    )
                    vm[dst] = abs(v_new)
                    va[dst] = np.angle(v_new)
                    # extension cannot be more certain than its source entry
                    var_vm[dst] = max(vvm, var_vm[src])
                    var_va[dst] = max(vva, var_va[src])
                    support[dst] = True
                    provenance[dst] = "extended"
                    changed = True

    target = np.ones(n, dtype=bool) if target_support is None else np.asarray(target_support)
    unreached = tuple(model.bus_ids[i] for i in np.flatnonzero(target & ~support))
    return ExtendedEstimate(
        kind=local.kind,
        bus_ids=model.bus_ids,
        support=support,
        vm=vm,
        va=va,
        var_vm=var_vm,
        var_va=var_va,
        provenance=provenance,
        slack_index=model.slack_index,
        unreached=unreached,
    )


def fuse(scada_ext: ExtendedEstimate, pmu_ext: ExtendedEstimate,
         gauge="pmu-to-scada") -> FusedEstimate:
    """Per-entry inverse-variance mean of the two extended tracks.

    The tracks carry different angle gauges: SCADA is slack-referenced,
    PMU absolute. By default the PMU track is shifted into the
    slack-referenced gauge (the gauge truth states and error metrics
    use); ``gauge="scada-to-pmu"`` instead moves the SCADA track onto the
    PMU absolute reference, which leaves the fused angles carrying the
    PMU slack-entry noise as a common-mode offset. Entries covered by
    only one track pass through with weight one.
    """
    n = len(scada_ext.bus_ids)
    slack = scada_ext.slack_index
    shift = 0.0
    if scada_ext.support[slack] and pmu_ext.support[slack]:
        shift = float(pmu_ext.va[slack] - scada_ext.va[slack])
    if gauge == "pmu-to-scada":
        va_s = scada_ext.va
        va_p = pmu_ext.va - shift
    elif gauge == "scada-to-pmu":
        va_s = scada_ext.va + shift
        va_p = pmu_ext.va
    else:
        raise ValueError(f"unknown gauge rule {gauge!r}")
    support = scada_ext.support | pmu_ext.support
    vm = np.full(n, np.nan)
    va = np.full(n, np.nan)
    var_vm = np.full(n, np.nan)
    var_va = np.full(n, np.nan)
    w_vm = np.full(n, np.nan)
    w_va = np.full(n, np.nan)
    for i in range(n):
        s_ok, p_ok = scada_ext.support[i], pmu_ext.support[i]
        if not (s_ok or p_ok):
            continue
        if s_ok and p_ok:
            for (xs, xp, vs, vp, val, var, wgt) in (
                (scada_ext.vm[i], pmu_ext.vm[i], scada_ext.var_vm[i], pmu_ext.var_vm[i], vm, var_vm, w_vm),
                (va_s[i], va_p[i], scada_ext.var_va[i], pmu_ext.var_va[i], va, var_va, w_va),
            ):
                ws = 1.0 / max(vs, _VAR_FLOOR)
                wp = 1.0 / max(vp, _VAR_FLOOR)
                val[i] = (ws * xs + wp * xp) / (ws + wp)
                var[i] = 1.0 / (ws + wp)
                wgt[i] = ws / (ws + wp)
        elif s_ok:
            vm[i], va[i] = scada_ext.vm[i], va_s[i]
            var_vm[i], var_va[i] = scada_ext.var_vm[i], scada_ext.var_va[i]
            w_vm[i] = w_va[i] = 1.0
        else:
            vm[i], va[i] = pmu_ext.vm[i], va_p[i]
            var_vm[i], var_va[i] = pmu_ext.var_vm[i], pmu_ext.var_va[i]
            w_vm[i] = w_va[i] = 0.0
    return FusedEstimate(
        bus_ids=scada_ext.bus_ids,
        support=support,
        vm=vm,
        va=va,
        var_vm=var_vm,
        var_va=var_va,
        weight_scada_vm=w_vm,
        weight_scada_va=w_va,
        gauge_shift=shift,
    )


def anchors_from_track(ext: ExtendedEstimate, layout, model, bd_opts):
    """Companion-track state as weak pseudo-measurements for identification.

    PMU angles are absolute while the SCADA track is slack-referenced, so
    angle values are moved into the receiving problem's gauge.
    """
    from .estimators import PolarPseudo, RectPseudo

    idx = np.flatnonzero(ext.support)
    if len(idx) == 0:
        return None
    floor = bd_opts.sigma_floor
    slack = ext.slack_index
    shift = float(ext.va[slack]) if ext.support[slack] else 0.0
    buses, comps, vals, sigs = [], [], [], []
    if layout == "polar":
        # receiving side is the slack-referenced SCADA problem
        for i in idx:
            buses.append(i)
            comps.append(0)
            vals.append(ext.vm[i])
            sigs.append(max(np.sqrt(ext.var_vm[i]), floor))
            if i != slack:
                buses.append(i)
                comps.append(1)
                vals.append(ext.va[i] - shift)
                sigs.append(max(np.sqrt(ext.var_va[i]), floor))
        return PolarPseudo(np.array(buses, dtype=int), np.array(comps, dtype=int),
                           np.array(vals), np.array(sigs))
    for i in idx:
        # receiving side estimates absolute rectangular state; a SCADA
        # track arrives slack-referenced, which matches the simulation
        # gauge, so values pass through unshifted
        e = ext.vm[i] * np.cos(ext.va[i])
        f = ext.vm[i] * np.sin(ext.va[i])
        ve = np.cos(ext.va[i]) ** 2 * ext.var_vm[i] + f**2 * ext.var_va[i]
        vf = np.sin(ext.va[i]) ** 2 * ext.var_vm[i] + e**2 * ext.var_va[i]
        for comp, val, var in ((0, e, ve), (1, f, vf)):
            buses.append(i)
            comps.append(comp)
            vals.append(val)
            sigs.append(max(np.sqrt(var), floor))
    return RectPseudo(np.array(buses, dtype=int), np.array(comps, dtype=int),
                      np.array(vals), np.array(sigs))


@dataclass(frozen=True)
class DphaseOptions:
    admm: AdmmOptions = AdmmOptions()
    bd: object = None  # BdOptions; defaulted in run_dphase
    parallel_tracks: bool = False


def run_dphase(model, partition, plan, measurements, opts: DphaseOptions = None,
               admittance=None) -> EstimationReport:
    """Figure-16-style two-track pipeline on one measurement set."""
    from .baddata import BdOptions, cross_validate, lnrt_loop, per_area_residual_stats

    opts = opts or DphaseOptions()
    bd_opts = opts.bd or BdOptions()
    y = admittance or build_admittance(model)
    stage_iters = {}

    def scada_dse(mset, warm=None, pseudo=None):
        return run_admm(model, partition, mset, "scada", opts.admm,
                        pseudo=pseudo, warm=warm, admittance=y)

    def pmu_dse(mset, warm=None, pseudo=None):
        return run_admm(model, partition, mset, "pmu", opts.admm,
                        pseudo=pseudo, warm=warm, admittance=y)

    try:
        if opts.parallel_tracks:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=2) as ex:
                f_s = ex.submit(scada_dse, measurements)
                f_p = ex.submit(pmu_dse, measurements)
                dse_s, dse_p = f_s.result(), f_p.result()
        else:
            dse_s = scada_dse(measurements)
            dse_p = pmu_dse(measurements)
        stage_iters["scada_dse"] = dse_s.iterations
        stage_iters["pmu_dse"] = dse_p.iterations

        ext_s = extend_state_set(dse_s, model, plan, partition, measurements, admittance=y)
        ext_p = extend_state_set(dse_p, model, plan, partition, measurements, admittance=y)
        cv = cross_validate(ext_s, ext_p, plan, measurements, model, bd_opts, admittance=y)

        def extension_hint(est, mset):
            ext = extend_state_set(est, model, plan, partition, mset, admittance=y)
            if not ext.support.all():
                # fall back to the raw-run extension for still-unreached buses
                vm = np.where(ext.support, ext.vm, ext_p.vm)
                va = np.where(ext.support, ext.va, ext_p.va)
                return vm, va
            return ext.vm, ext.va

        # unresolved disputes mean the blame heuristic could not decide, so
        # both sides investigate them under anchored identification
        scada_susp = bool(cv.scada_suspect_buses) or bool(cv.unresolved)
        pmu_susp = bool(cv.pmu_suspect_buses) or bool(cv.unresolved)

        def stats_for(side):
            def fn(ms, est, pseudo):
                return per_area_residual_stats(model, ms, side, partition, est,
                                               bd_opts, pseudo=pseudo, admittance=y)
            return fn

        mset_s, bd_s, dse_s2 = lnrt_loop(
            model, measurements, "scada", scada_dse, bd_opts,
            ident_pseudo=anchors_from_track(ext_p, "polar", model, bd_opts),
            warm=dse_s, suspects=scada_susp,
            final_pseudo=cv.pseudo_for_scada, stats_fn=stats_for("scada"),
            admittance=y,
        )
        ext_s_mid = extend_state_set(dse_s2, model, plan, partition, mset_s, admittance=y)
        mset_p, bd_p, dse_p2 = lnrt_loop(
            model, mset_s, "pmu", pmu_dse, bd_opts,
            hint_fn=extension_hint,
            ident_pseudo=anchors_from_track(ext_s_mid, "rect", model, bd_opts),
            warm=dse_p, suspects=pmu_susp,
            final_pseudo=cv.pseudo_for_pmu, stats_fn=stats_for("pmu"),
            admittance=y,
        )
        stage_iters["scada_rees"] = dse_s2.iterations
        stage_iters["pmu_rees"] = dse_p2.iterations

        ext_s2 = extend_state_set(dse_s2, model, plan, partition, mset_p, admittance=y)
        ext_p2 = extend_state_set(dse_p2, model, plan, partition, mset_p, admittance=y)
        fused = fuse(ext_s2, ext_p2)

        flags = bd_s.flagged_refs() + bd_p.flagged_refs()
        return EstimationReport(
            strategy="dphase",
            bus_ids=model.bus_ids,
            support=fused.support,
            vm=np.where(fused.support, fused.vm, np.nan),
            va=np.where(fused.support, fused.va, np.nan),
            converged=dse_s2.converged and dse_p2.converged,
            objective=dse_s2.objective + dse_p2.objective,
            bd=[bd_s, bd_p],
            cross_validation=cv,
            stage_iterations=stage_iters,
            flags=flags,
            extras={
                "fused": fused,
                "extended_scada": ext_s2,
                "extended_pmu": ext_p2,
                "dse_scada": dse_s2,
                "dse_pmu": dse_p2,
            },
        )
    except Exception as exc:  # partial report on stage failure
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        n = model.n_bus
        return EstimationReport(
            strategy="dphase",
            bus_ids=model.bus_ids,
            support=np.zeros(n, dtype=bool),
            vm=np.full(n, np.nan),
            va=np.full(n, np.nan),
            converged=False,
            objective=np.nan,
            stage_iterations=stage_iters,
            failure=f"{type(exc).__name__}: {exc}",
        )
