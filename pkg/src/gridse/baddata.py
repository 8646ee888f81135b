"""Bad-data detection, identification, and correction; strategy baselines.

Detection is a chi-square test on the weighted residual sum; identification
is the largest normalized residual (residual over the square root of its
sensitivity-covariance diagonal); correction removes the entry when global
observability survives, otherwise replaces it with the model value at the
current estimate under an inflated sigma.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .admm import AdmmOptions, _check_global_observability, run_admm
from .estimators import (
    LocalEstimate,
    ObservabilityError,
    PolarPseudo,
    RectPseudo,
)
from .measurement import (
    MeasurementSet,
    SubsetEvaluator,
    pmu_reachable,
    pmu_support,
    scada_support,
)
from .network import build_admittance
from .reports import BdReport, CrossValidationReport, EstimationReport

STRATEGIES = ("dphase", "dse", "dse_lnrt", "rdse")
STRATEGY_ALIASES = {"no-bdp": "dse", "lnrt": "dse_lnrt", "rdse": "rdse", "dphase": "dphase"}


@dataclass(frozen=True)
class BdOptions:
    alpha: float = 0.01
    lam: float = 3.0  # identification threshold on normalized residuals
    lambda_x: float = 3.0  # cross-validation discrepancy threshold
    rounds: int = 5
    mode: str = "remove"  # remove | replace
    sigma_inflation: float = 10.0
    critical_tol: float = 1e-6  # Omega_ii below this fraction of R_ii is critical
    unresolved_ratio: float = 1.25
    sigma_floor: float = 1e-6
    huber_k: float = 1.5


@dataclass
class ResidualStats:
    refs: list
    residual: np.ndarray
    sigma: np.ndarray
    r_norm: np.ndarray  # |r| / sqrt(Omega_ii); nan where critical
    identifiable: np.ndarray
    objective: float
    m: int
    n: int


def _active_rows(measurements, side):
    plan = measurements.plan
    sc = np.flatnonzero(measurements.active_scada) if side in ("scada", "hybrid") else np.array([], dtype=int)
    pm = np.flatnonzero(measurements.active_pmu) if side in ("pmu", "hybrid") else np.array([], dtype=int)
    return sc, pm


def _normalized_residuals(hmat, w, sigma, r, critical_tol, extra_rows=None):
    """|r|/sqrt(Omega_ii) for the leading len(r) rows of the (possibly
    augmented) problem; Omega = R - H G^-1 H^T."""
    h_all = hmat if extra_rows is None else np.vstack([hmat, extra_rows[0]])
    w_all = w if extra_rows is None else np.concatenate([w, extra_rows[1]])
    gain = (h_all * w_all[:, None]).T @ h_all
    # per-area gains are legitimately singular (local gauge freedom); the
    # pseudo-inverse leaves those directions out of the sensitivity
    x = np.linalg.pinv(gain, hermitian=True) @ hmat.T
    omega_diag = sigma**2 - np.einsum("ij,ji->i", hmat, x)
    crit = omega_diag <= critical_tol * sigma**2
    r_norm = np.full(len(r), np.nan)
    ok = ~crit
    r_norm[ok] = np.abs(r[ok]) / np.sqrt(omega_diag[ok])
    return r_norm, ok


def residual_stats(model, measurements, side, vm, va, admittance=None,
                   critical_tol=1e-6, pseudo=None) -> ResidualStats:
    """Pooled residuals and normalized residuals of one side at a state.

    ``pseudo`` rows (state anchors) join the sensitivity model, making
    otherwise-critical entries identifiable, but are excluded from the
    statistic, the row count, and the reported residuals.
    """
    y = admittance or build_admittance(model)
    plan = measurements.plan
    sc, pm = _active_rows(measurements, side)
    refs = [("scada", int(i)) for i in sc] + [("pmu", int(i)) for i in pm]
    z = np.concatenate([measurements.z_scada[sc], measurements.z_pmu[pm]])
    sigma = np.concatenate([measurements.scada_sigmas()[sc], measurements.pmu_sigmas()[pm]])
    w = 1.0 / sigma**2
    extra = None
    if side == "pmu":
        reach = sorted(pmu_reachable(model, plan, pm))
        buses = np.array(reach, dtype=int)
        ev = SubsetEvaluator(model, plan, scada_idx=[], pmu_idx=pm, bus_subset=buses,
                             admittance=y)
        e = vm * np.cos(va)
        f = vm * np.sin(va)
        h_val = ev.h_rect(e[buses], f[buses])
        hmat = ev.design_rect()
        n = hmat.shape[1]
        if pseudo is not None and len(pseudo):
            loc = ev._local
            rows, wts = [], []
            for b, comp, sig_p in zip(pseudo.bus_idx, pseudo.comp, pseudo.sigma):
                lb = loc[int(b)]
                if lb < 0:
                    continue
                row = np.zeros(n)
                row[lb + (ev.ns if comp == 1 else 0)] = 1.0
                rows.append(row)
                wts.append(1.0 / sig_p**2)
            if rows:
                extra = (np.array(rows), np.array(wts))
    else:
        ev = SubsetEvaluator(model, plan, scada_idx=sc, pmu_idx=pm,
                             refs=(model.slack_index,), admittance=y)
        h_val = ev.h_polar(vm, va)
        hmat = ev.jac_polar(vm, va)
        n = hmat.shape[1]
        if pseudo is not None and len(pseudo):
            nth = len(ev.theta_keep)
            theta_col = -np.ones(ev.ns, dtype=int)
            theta_col[ev.theta_keep] = np.arange(nth)
            rows, wts = [], []
            for b, comp, sig_p in zip(pseudo.bus_idx, pseudo.comp, pseudo.sigma):
                lb = int(b)
                col = nth + lb if comp == 0 else int(theta_col[lb])
                if col < 0:
                    continue
                row = np.zeros(n)
                row[col] = 1.0
                rows.append(row)
                wts.append(1.0 / sig_p**2)
            if rows:
                extra = (np.array(rows), np.array(wts))
    r = z - h_val
    j = float(np.sum(w * r * r))
    m = len(z)
    r_norm, ok = _normalized_residuals(hmat, w, sigma, r, critical_tol, extra)
    return ResidualStats(
        refs=refs, residual=r, sigma=sigma, r_norm=r_norm,
        identifiable=ok, objective=j, m=m, n=n,
    )


def per_area_residual_stats(model, measurements, side, partition, dse,
                            bd_opts, pseudo=None, admittance=None) -> ResidualStats:
    """Decentralized residual statistics: each area normalizes its own rows.

    An area only has its own measurements, so boundary-coupled entries are
    weakly identifiable locally (the honest price of decentralization);
    companion-track anchors, when provided, restore identifiability. The
    statistic and row count aggregate across areas, leaving the global
    chi-square detection test unchanged.
    """
    y = admittance or build_admittance(model)
    plan = measurements.plan
    refs_all, r_all, sig_all, rn_all, ok_all = [], [], [], [], []
    j_total = 0.0
    m_total = 0
    by_area = {est.area: est for est in dse.areas}
    for a, name in enumerate(partition.names):
        est = by_area.get(name)
        if est is None:
            continue
        sc = np.array([], dtype=int)
        pm = np.array([], dtype=int)
        if side in ("scada", "hybrid"):
            sc = plan.scada_indices(area=name)
            sc = sc[measurements.active_scada[sc]]
        if side in ("pmu", "hybrid"):
            pm = plan.pmu_indices(area=name)
            pm = pm[measurements.active_pmu[pm]]
        if len(sc) + len(pm) == 0:
            continue
        buses = est.bus_idx
        loc = -np.ones(model.n_bus, dtype=int)
        loc[buses] = np.arange(len(buses))
        z = np.concatenate([measurements.z_scada[sc], measurements.z_pmu[pm]])
        sigma = np.concatenate([measurements.scada_sigmas()[sc],
                                measurements.pmu_sigmas()[pm]])
        w = 1.0 / sigma**2
        if est.layout == "rect":
            ev = SubsetEvaluator(model, plan, scada_idx=[], pmu_idx=pm,
                                 bus_subset=buses, admittance=y)
            e = est.vm * np.cos(est.va)
            f = est.vm * np.sin(est.va)
            h_val = ev.h_rect(e, f)
            hmat = ev.design_rect()
            theta_col = None
            nth = 0
        else:
            own = set(partition.areas[a])
            refs_area = (
                (model.slack_index,)
                if model.bus_ids[model.slack_index] in own and loc[model.slack_index] >= 0
                else ()
            )
            ev = SubsetEvaluator(model, plan, scada_idx=sc, pmu_idx=pm,
                                 bus_subset=buses, refs=refs_area, admittance=y)
            h_val = ev.h_polar(est.vm, est.va)
            hmat = ev.jac_polar(est.vm, est.va)
            nth = len(ev.theta_keep)
            theta_col = -np.ones(ev.ns, dtype=int)
            theta_col[ev.theta_keep] = np.arange(nth)
        extra = None
        if pseudo is not None and len(pseudo):
            rows, wts = [], []
            ncols = hmat.shape[1]
            for b, comp, sig_p in zip(pseudo.bus_idx, pseudo.comp, pseudo.sigma):
                lb = loc[int(b)]
                if lb < 0:
                    continue
                if est.layout == "rect":
                    col = int(lb) + (ev.ns if comp == 1 else 0)
                else:
                    col = nth + int(lb) if comp == 0 else int(theta_col[lb])
                    if col < 0:
                        continue
                row = np.zeros(ncols)
                row[col] = 1.0
                rows.append(row)
                wts.append(1.0 / sig_p**2)
            if rows:
                extra = (np.array(rows), np.array(wts))
        r = z - h_val
        rn, ok = _normalized_residuals(hmat, w, sigma, r, bd_opts.critical_tol, extra)
        refs_all += [("scada", int(i)) for i in sc] + [("pmu", int(i)) for i in pm]
        r_all.append(r)
        sig_all.append(sigma)
        rn_all.append(rn)
        ok_all.append(ok)
        j_total += float(np.sum(w * r * r))
        m_total += len(z)
    if side == "pmu":
        pm_all = np.flatnonzero(measurements.active_pmu)
        n_global = 2 * len(pmu_reachable(model, plan, pm_all))
    else:
        n_global = 2 * model.n_bus - 1
    return ResidualStats(
        refs=refs_all,
        residual=np.concatenate(r_all) if r_all else np.zeros(0),
        sigma=np.concatenate(sig_all) if sig_all else np.zeros(0),
        r_norm=np.concatenate(rn_all) if rn_all else np.zeros(0),
        identifiable=np.concatenate(ok_all) if ok_all else np.zeros(0, dtype=bool),
        objective=j_total,
        m=m_total,
        n=n_global,
    )


def chi_square_detect(estimate, alpha=0.01, m=None, n=None):
    """Chi-square global test: fire when J exceeds the (1 - alpha) quantile.

    Accepts a LocalEstimate (J, m, n taken from it), a ResidualStats, or an
    explicit J with m and n. Requires redundancy m > n.
    """
    if isinstance(estimate, ResidualStats):
        j, m, n = estimate.objective, estimate.m, estimate.n
    elif isinstance(estimate, LocalEstimate):
        j = estimate.objective
        n = estimate.cov.shape[0]
        if m is None:
            raise ValueError("m (row count) required with a LocalEstimate")
    else:
        j = float(estimate)
        if m is None or n is None:
            raise ValueError("m and n required with a bare statistic")
    dof = m - n
    if dof <= 0:
        raise ValueError(f"no redundancy: m={m} <= n={n}")
    threshold = float(chi2.ppf(1.0 - alpha, dof))
    return bool(j > threshold), float(j), threshold, dof


def lnrt_identify(model, measurements, estimate, side="hybrid", lam=3.0,
                  admittance=None, stats=None):
    """Largest normalized residual above the threshold, or None.

    ``estimate`` supplies the evaluation state: a (vm, va) pair covering
    every bus, or any object with vm/va arrays.
    """
    if stats is None:
        vm, va = (estimate if isinstance(estimate, tuple) else (estimate.vm, estimate.va))
        stats = residual_stats(model, measurements, side, vm, va, admittance=admittance)
    if not stats.identifiable.any():
        return None, stats
    i = int(np.nanargmax(np.where(stats.identifiable, stats.r_norm, -np.inf)))
    if not np.isfinite(stats.r_norm[i]) or stats.r_norm[i] <= lam:
        return None, stats
    return (stats.refs[i], float(stats.r_norm[i])), stats


def _evaluate_rows(model, measurements, refs, vm, va, admittance=None):
    """Model values of specific measurement rows at a state."""
    from .measurement import evaluate_pmu, evaluate_scada
    from .powerflow import StateVector

    state = StateVector(vm, va)
    plan = measurements.plan
    h_s = h_p = None
    out = {}
    for ref in refs:
        side, i = ref
        if side == "scada":
            if h_s is None:
                h_s = evaluate_scada(model, state, plan, admittance=admittance)
            out[ref] = float(h_s[i])
        else:
            if h_p is None:
                h_p = evaluate_pmu(model, state, plan, admittance=admittance)
            out[ref] = float(h_p[i])
    return out


def correct(measurements, flags, mode="remove", model=None, state=None,
            kind_for_check="hybrid", sigma_inflation=10.0, admittance=None):
    """Apply removal/replacement corrections; removal falls back to
    replacement when it would break global observability."""
    out = measurements.copy()
    actions = []
    if not flags:
        return out, actions
    replacements = None
    for ref in flags:
        act = mode
        if mode == "remove":
            trial = out.copy()
            side, i = ref
            if side == "scada":
                trial.active_scada[i] = False
            else:
                trial.active_pmu[i] = False
            try:
                _check_global_observability(model, trial, kind_for_check,
                                            admittance or build_admittance(model))
                out = trial
            except ObservabilityError:
                act = "replace"  # fallback keeps the network observable
        if act == "replace":
            if state is None:
                raise ValueError("replace mode needs an evaluation state")
            if replacements is None:
                replacements = _evaluate_rows(model, out, flags, state[0], state[1],
                                              admittance=admittance)
            side, i = ref
            out.set_value(ref, replacements[ref])
            if side == "scada":
                out.sigma_scale_scada[i] *= sigma_inflation
            else:
                out.sigma_scale_pmu[i] *= sigma_inflation
        actions.append((ref, act))
    return out, actions


def lnrt_loop(model, measurements, side, estimate_fn, bd_opts: BdOptions,
              hint_fn=None, ident_pseudo=None, warm=None, suspects=False,
              final_pseudo=None, stats_fn=None, admittance=None):
    """Detect-identify-correct rounds for one side.

    Detection (the chi-square trigger) always runs on the side's own,
    un-anchored estimate. Identification re-estimates with the companion
    track's state as pseudo-measurement anchors (``ident_pseudo``) so the
    gross entry's residual is not absorbed into the state. Corrections
    and the final re-estimation never carry the anchors, keeping the two
    tracks independent for fusion. ``hint_fn(est, mset)`` completes a
    partial-support estimate (the PMU track's extension). Returns
    (corrected set, BdReport, final estimate).
    """
    y = admittance or build_admittance(model)
    mset = measurements.copy()
    est = warm if warm is not None else estimate_fn(mset)

    def eval_state(e, ms):
        if not e.support.all():
            if hint_fn is None:
                raise ValueError("partial-support estimate needs a hint_fn")
            return hint_fn(e, ms)
        return e.vm, e.va

    if stats_fn is None:
        def stats_fn(ms, e, pseudo):
            vm, va = eval_state(e, ms)
            return residual_stats(model, ms, side, vm, va, admittance=y,
                                  critical_tol=bd_opts.critical_tol, pseudo=pseudo)

    report = BdReport(side=side, statistic=0.0, dof=0, threshold=0.0,
                      alpha=bd_opts.alpha, detected=False)
    for round_no in range(bd_opts.rounds):
        stats = stats_fn(mset, est, None)
        if stats.m <= stats.n:
            report.notes.append(f"no redundancy (m={stats.m}, n={stats.n})")
            break
        detected, j, thr, dof = chi_square_detect(stats, alpha=bd_opts.alpha)
        if round_no == 0:
            report.statistic, report.threshold, report.dof, report.detected = j, thr, dof, detected
        if not detected and not (suspects and round_no == 0):
            break
        if ident_pseudo is not None:
            anchored = estimate_fn(mset, warm=est, pseudo=ident_pseudo)
            stats_i = stats_fn(mset, anchored, ident_pseudo)
            vm_i, va_i = eval_state(anchored, mset)
        else:
            vm_i, va_i = eval_state(est, mset)
            stats_i = stats
        picked, stats_i = lnrt_identify(model, mset, (vm_i, va_i), side=side,
                                        lam=bd_opts.lam, admittance=y, stats=stats_i)
        if picked is None:
            bad = [r for r, c in zip(stats_i.refs, ~stats_i.identifiable) if c]
            if bad:
                report.unidentifiable.extend(bad)
                report.notes.append("largest residuals sit on critical entries")
            break
        ref, r_norm = picked
        kind_for_check = side if side != "hybrid" else "hybrid"
        mset, actions = correct(
            mset, [ref], mode=bd_opts.mode, model=model, state=(vm_i, va_i),
            kind_for_check=kind_for_check, sigma_inflation=bd_opts.sigma_inflation,
            admittance=y,
        )
        report.flagged.append((ref, r_norm, actions[0][1]))
        report.rounds = round_no + 1
        est = estimate_fn(mset, warm=est)
    if final_pseudo is not None and len(final_pseudo):
        # cross-validation issues the cleaner track's entries into the
        # suspect side's re-estimation
        est = estimate_fn(mset, warm=est, pseudo=final_pseudo)
    return mset, report, est


def cross_validate(scada_ext, pmu_ext, plan, measurements, model,
                   bd_opts: BdOptions = None, admittance=None) -> CrossValidationReport:
    """Compare the two extended tracks entry by entry.

    Disputed entries (standardized discrepancy above lambda_x) blame the
    side whose own measurements disagree more with the companion state;
    the cleaner side's entries become pseudo-measurements for the suspect
    side's re-estimation.
    """
    bd_opts = bd_opts or BdOptions()
    y = admittance or build_admittance(model)
    n = len(scada_ext.bus_ids)
    shift = 0.0
    slack = scada_ext.slack_index
    if scada_ext.support[slack] and pmu_ext.support[slack]:
        shift = float(pmu_ext.va[slack] - scada_ext.va[slack])
    disputes = []
    both = scada_ext.support & pmu_ext.support
    for i in np.flatnonzero(both):
        dv = abs(scada_ext.vm[i] - pmu_ext.vm[i])
        sv = np.sqrt(scada_ext.var_vm[i] + pmu_ext.var_vm[i])
        if dv / max(sv, 1e-12) > bd_opts.lambda_x:
            disputes.append((i, "vm", dv / max(sv, 1e-12)))
        da = abs(np.angle(np.exp(1j * (scada_ext.va[i] + shift - pmu_ext.va[i]))))
        sa = np.sqrt(scada_ext.var_va[i] + pmu_ext.var_va[i])
        if da / max(sa, 1e-12) > bd_opts.lambda_x:
            disputes.append((i, "va", da / max(sa, 1e-12)))
    report = CrossValidationReport()
    if not disputes:
        report.pseudo_for_scada = None
        report.pseudo_for_pmu = None
        return report

    # score each side's own rows against the companion's state; the
    # denominator carries the companion state's propagated variance so a
    # biased companion does not get the blame pinned on precise rows
    sc, pm = _active_rows(measurements, "hybrid")
    sc_sup = scada_support(model, plan, sc)
    pm_sup = pmu_support(model, plan, pm)
    ev = SubsetEvaluator(model, plan, scada_idx=sc, pmu_idx=pm, admittance=y)
    z = np.concatenate([measurements.z_scada[sc], measurements.z_pmu[pm]])
    sig = np.concatenate([measurements.scada_sigmas()[sc], measurements.pmu_sigmas()[pm]])

    def state_var_of_rows(ext):
        jac = ev.jac_polar(ext.vm, ext.va)
        nth = len(ev.theta_keep)
        var_cols = np.concatenate([
            np.nan_to_num(ext.var_va[ev.theta_keep], nan=0.0),
            np.nan_to_num(ext.var_vm, nan=0.0),
        ])
        return (jac**2) @ var_cols

    h_at_pmu = ev.h_polar(pmu_ext.vm, pmu_ext.va)
    hvar_pmu = state_var_of_rows(pmu_ext)
    scada_aligned = type(pmu_ext)(
        kind=scada_ext.kind, bus_ids=scada_ext.bus_ids, support=scada_ext.support,
        vm=scada_ext.vm, va=scada_ext.va + shift, var_vm=scada_ext.var_vm,
        var_va=scada_ext.var_va, provenance=scada_ext.provenance,
        slack_index=scada_ext.slack_index,
    )
    h_at_scada = ev.h_polar(scada_aligned.vm, scada_aligned.va)
    hvar_scada = state_var_of_rows(scada_aligned)
    n_sc = len(sc)
    score_rows_s = np.abs(z[:n_sc] - h_at_pmu[:n_sc]) / np.sqrt(
        sig[:n_sc] ** 2 + hvar_pmu[:n_sc]
    )
    score_rows_p = np.abs(z[n_sc:] - h_at_scada[n_sc:]) / np.sqrt(
        sig[n_sc:] ** 2 + hvar_scada[n_sc:]
    )

    def bus_score(bus, supports, scores):
        vals = [s for sup, s in zip(supports, scores) if bus in sup]
        return max(vals) if vals else 0.0

    scada_bad, pmu_bad, unresolved = set(), set(), []
    for i, comp, d in disputes:
        s_s = bus_score(i, sc_sup, score_rows_s)
        s_p = bus_score(i, pm_sup, score_rows_p)
        hi, lo = max(s_s, s_p), min(s_s, s_p)
        if hi <= bd_opts.lam or hi < bd_opts.unresolved_ratio * lo:
            unresolved.append((scada_ext.bus_ids[i], comp, d))
            report.disputes.append((scada_ext.bus_ids[i], comp, d, "unresolved"))
            continue
        if s_s >= s_p:
            scada_bad.add(i)
            report.disputes.append((scada_ext.bus_ids[i], comp, d, "scada"))
        else:
            pmu_bad.add(i)
            report.disputes.append((scada_ext.bus_ids[i], comp, d, "pmu"))
    report.unresolved = unresolved
    report.scada_suspect_buses = tuple(scada_ext.bus_ids[i] for i in sorted(scada_bad))
    report.pmu_suspect_buses = tuple(scada_ext.bus_ids[i] for i in sorted(pmu_bad))

    # pseudo-measurements: clean side anchors the suspect side's re-estimation
    if scada_bad:
        buses, comps, vals, sigs = [], [], [], []
        for i in sorted(scada_bad):
            buses.append(i)
            comps.append(0)
            vals.append(pmu_ext.vm[i])
            sigs.append(max(np.sqrt(pmu_ext.var_vm[i]), bd_opts.sigma_floor))
            if i != slack:
                buses.append(i)
                comps.append(1)
                # PMU angles are absolute; move them into the SCADA gauge
                vals.append(pmu_ext.va[i] - shift)
                sigs.append(max(np.sqrt(pmu_ext.var_va[i]), bd_opts.sigma_floor))
        report.pseudo_for_scada = PolarPseudo(
            np.array(buses, dtype=int), np.array(comps, dtype=int),
            np.array(vals), np.array(sigs),
        )
    if pmu_bad:
        buses, comps, vals, sigs = [], [], [], []
        for i in sorted(pmu_bad):
            va_abs = scada_ext.va[i] + shift
            e, f, ve, vf = _rect_pseudo_parts(
                scada_ext.vm[i], va_abs, scada_ext.var_vm[i], scada_ext.var_va[i]
            )
            for comp, val, var in ((0, e, ve), (1, f, vf)):
                buses.append(i)
                comps.append(comp)
                vals.append(val)
                sigs.append(max(np.sqrt(var), bd_opts.sigma_floor))
        report.pseudo_for_pmu = RectPseudo(
            np.array(buses, dtype=int), np.array(comps, dtype=int),
            np.array(vals), np.array(sigs),
        )
    return report


def _rect_pseudo_parts(vm, va, var_vm, var_va):
    e, f = vm * np.cos(va), vm * np.sin(va)
    ve = np.cos(va) ** 2 * var_vm + f**2 * var_va
    vf = np.sin(va) ** 2 * var_vm + e**2 * var_va
    return e, f, ve, vf


# -- strategy runner -------------------------------------------------------------


@dataclass
class Trial:
    """One realized estimation task: model, partition, plan, measurements."""

    model: object
    partition: object
    plan: object
    measurements: MeasurementSet
    admm: AdmmOptions = AdmmOptions()
    bd: BdOptions = BdOptions()
    admittance: object = None

    def __post_init__(self):
        if self.admittance is None:
            self.admittance = build_admittance(self.model)


def run_baseline(strategy, trial: Trial) -> EstimationReport:
    """Run one strategy ("dphase", "dse", "dse_lnrt", "rdse") on a trial."""
    strategy = STRATEGY_ALIASES.get(strategy, strategy)
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    model, part, plan = trial.model, trial.partition, trial.plan
    mset, y = trial.measurements, trial.admittance
    if strategy == "dphase":
        from .dphase import DphaseOptions, run_dphase

        return run_dphase(model, part, plan, mset,
                          DphaseOptions(admm=trial.admm, bd=trial.bd), admittance=y)
    try:
        if strategy == "rdse":
            from dataclasses import replace as dc_replace

            opts = dc_replace(trial.admm, huber_k=trial.bd.huber_k)
            dse = run_admm(model, part, mset, "hybrid", opts, admittance=y)
            bd_list = []
            flags = []
        elif strategy == "dse":
            dse = run_admm(model, part, mset, "hybrid", trial.admm, admittance=y)
            bd_list = []
            flags = []
        else:  # dse_lnrt
            initial = run_admm(model, part, mset, "hybrid", trial.admm, admittance=y)

            def refit(ms, warm=None, pseudo=None):
                return run_admm(model, part, ms, "hybrid", trial.admm,
                                warm=warm, pseudo=pseudo, admittance=y)

            def stats_fn(ms, est, pseudo):
                return per_area_residual_stats(model, ms, "hybrid", part, est,
                                               trial.bd, pseudo=pseudo, admittance=y)

            _, bd_rep, dse = lnrt_loop(model, mset, "hybrid", refit, trial.bd,
                                       warm=initial, stats_fn=stats_fn, admittance=y)
            bd_list = [bd_rep]
            flags = bd_rep.flagged_refs()
        return EstimationReport(
            strategy=strategy,
            bus_ids=model.bus_ids,
            support=dse.support,
            vm=dse.vm,
            va=dse.va,
            converged=dse.converged,
            objective=dse.objective,
            bd=bd_list,
            stage_iterations={"dse": dse.iterations},
            flags=flags,
            extras={"dse": dse},
        )
    except Exception as exc:
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        n = model.n_bus
        return EstimationReport(
            strategy=strategy,
            bus_ids=model.bus_ids,
            support=np.zeros(n, dtype=bool),
            vm=np.full(n, np.nan),
            va=np.full(n, np.nan),
            converged=False,
            objective=np.nan,
            failure=f"{type(exc).__name__}: {exc}",
        )
