"""Per-area estimators: nonlinear SCADA WLS (Gauss-Newton) and linear PMU WLS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measurement import MeasurementSet, SubsetEvaluator, pmu_reachable
from .powerflow import StateVector


class EstimationError(RuntimeError):
    pass


class ObservabilityError(EstimationError):
    pass


@dataclass(frozen=True)
class PolarPseudo:
    """Direct state observations (V or theta) used as extra WLS rows."""

    bus_idx: np.ndarray
    comp: np.ndarray  # 0 = vm, 1 = va
    value: np.ndarray
    sigma: np.ndarray

    @staticmethod
    def empty():
        z = np.zeros(0)
        return PolarPseudo(z.astype(int), z.astype(int), z, z)

    def __len__(self):
        return len(self.value)


@dataclass(frozen=True)
class RectPseudo:
    """Direct rectangular state observations (e or f) as extra rows."""

    bus_idx: np.ndarray
    comp: np.ndarray  # 0 = e, 1 = f
    value: np.ndarray
    sigma: np.ndarray

    @staticmethod
    def empty():
        z = np.zeros(0)
        return RectPseudo(z.astype(int), z.astype(int), z, z)

    def __len__(self):
        return len(self.value)


@dataclass
class LocalEstimate:
    """State estimate over a bus subset, exposed in polar coordinates."""

    area: str
    kind: str  # scada | pmu | hybrid
    bus_idx: np.ndarray  # global dense indices, subset order
    bus_ids: tuple
    vm: np.ndarray
    va: np.ndarray
    cov: np.ndarray  # over the internal state layout
    layout: str  # "polar" | "rect"
    theta_keep: np.ndarray  # polar: subset positions carrying a theta column
    objective: float
    iterations: int
    converged: bool
    grad_norm: float = 0.0

    def var_polar(self):
        """Per-bus (var_vm, var_va) from the covariance diagonal."""
        ns = len(self.bus_idx)
        var_vm = np.zeros(ns)
        var_va = np.zeros(ns)
        if self.layout == "polar":
            nth = len(self.theta_keep)
            d = np.diag(self.cov)
            var_va[self.theta_keep] = d[:nth]
            var_vm[:] = d[nth:]
        else:
            e = self.vm * np.cos(self.va)
            f = self.vm * np.sin(self.va)
            see = np.diag(self.cov)[:ns]
            sff = np.diag(self.cov)[ns:]
            sef = np.array([self.cov[i, ns + i] for i in range(ns)])
            v2 = self.vm**2
            var_vm[:] = (e**2 * see + 2 * e * f * sef + f**2 * sff) / v2
            var_va[:] = (f**2 * see - 2 * e * f * sef + e**2 * sff) / v2**2
        return var_vm, var_va


def _huber_factor(r_std, k):
    a = np.abs(r_std)
    return np.where(a <= k, 1.0, k / np.maximum(a, 1e-300))


def _huber_loss(r_std, k):
    a = np.abs(r_std)
    return np.where(a <= k, 0.5 * a**2, k * a - 0.5 * k**2)


class PolarSolver:
    """Gauss-Newton WLS over a measurement subset in polar coordinates.

    Supports pseudo state rows, a proximal anchor on selected columns
    (the ADMM x-update), and Huber reweighting.
    """

    def __init__(self, model, plan, z, sigma, scada_idx, pmu_idx, buses, refs,
                 admittance=None, pseudo: PolarPseudo = None, huber_k=None):
        self.ev = SubsetEvaluator(model, plan, scada_idx=scada_idx, pmu_idx=pmu_idx,
                                  bus_subset=buses, refs=refs, admittance=admittance)
        self.pseudo = pseudo if pseudo is not None and len(pseudo) else None
        if self.pseudo is not None:
            pb = self.ev._local[self.pseudo.bus_idx]
            if np.any(pb < 0):
                raise EstimationError("pseudo-measurement bus outside subset")
            self._pb = pb
        self.z = np.asarray(z, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if self.pseudo is not None:
            self.z = np.concatenate([self.z, self.pseudo.value])
            sigma = np.concatenate([sigma, self.pseudo.sigma])
        self.sigma = sigma
        self.w = 1.0 / sigma**2
        self.huber_k = huber_k
        nth = len(self.ev.theta_keep)
        self._theta_col_of = -np.ones(self.ev.ns, dtype=int)
        self._theta_col_of[self.ev.theta_keep] = np.arange(nth)

    @property
    def n_cols(self):
        return self.ev.n_cols_polar

    def col_of(self, local_bus, comp):
        """Column of (bus position, comp) with comp 0 = vm, 1 = va; -1 if absent."""
        if comp == 1:
            c = self._theta_col_of[local_bus]
            return int(c) if c >= 0 else -1
        return len(self.ev.theta_keep) + int(local_bus)

    def h(self, vm, va):
        base = self.ev.h_polar(vm, va)
        if self.pseudo is None:
            return base
        extra = np.where(self.pseudo.comp == 0, vm[self._pb], va[self._pb])
        return np.concatenate([base, extra])

    def jac(self, vm, va):
        base = self.ev.jac_polar(vm, va)
        if self.pseudo is None:
            return base
        extra = np.zeros((len(self.pseudo), base.shape[1]))
        for r in range(len(self.pseudo)):
            c = self.col_of(self._pb[r], 1 if self.pseudo.comp[r] == 1 else 0)
            if c >= 0:
                extra[r, c] = 1.0
        return np.vstack([base, extra])

    def _x_to_state(self, x, vm, va):
        nth = len(self.ev.theta_keep)
        va = va.copy()
        vm = vm.copy()
        va[self.ev.theta_keep] = x[:nth]
        vm[:] = x[nth:]
        return vm, va

    def _state_to_x(self, vm, va):
        return np.concatenate([va[self.ev.theta_keep], vm])

    def objective(self, vm, va, prox=None):
        r = self.z - self.h(vm, va)
        r_std = r / self.sigma
        if self.huber_k is not None:
            j = float(2 * np.sum(_huber_loss(r_std, self.huber_k)))
        else:
            j = float(np.sum(self.w * r * r))
        if prox is not None:
            cols, target, rho = prox
            x = self._state_to_x(vm, va)
            j += float(0.5 * rho * np.sum((x[cols] - target) ** 2))
        return j

    def measurement_objective(self, vm, va):
        r = self.z - self.h(vm, va)
        return float(np.sum(self.w * r * r))

    def solve_fast(self, vm, va, prox, max_iter=4, step_tol=1e-10):
        """Plain Gauss-Newton without line search: the ADMM x-update path.

        Safe on warm starts where steps are small; magnitudes are kept
        positive by halving the step if needed.
        """
        vm = vm.copy()
        va = va.copy()
        x = self._state_to_x(vm, va)
        cols, target, rho = prox if prox is not None else (None, None, 0.0)
        for _ in range(max_iter):
            jac = self.jac(vm, va)
            r = self.z - self.h(vm, va)
            w = self.w
            if self.huber_k is not None:
                w = self.w * _huber_factor(r / self.sigma, self.huber_k)
            g = jac.T @ (w * r)
            gain = (jac * w[:, None]).T @ jac
            if rho > 0.0:
                g[cols] += 0.5 * rho * (target - x[cols])
                gain[cols, cols] += 0.5 * rho
            try:
                dx = np.linalg.solve(gain, g)
            except np.linalg.LinAlgError:
                dx = np.linalg.lstsq(gain, g, rcond=None)[0]
            alpha = 1.0
            for _ in range(20):
                x_new = x + alpha * dx
                vm_new, va_new = self._x_to_state(x_new, vm, va)
                if np.all(vm_new > 0):
                    break
                alpha *= 0.5
            x, vm, va = x_new, vm_new, va_new
            if np.max(np.abs(alpha * dx)) < step_tol:
                break
        return vm, va

    def solve(self, vm0=None, va0=None, tol=1e-8, max_iter=50, prox=None,
              require_observable=True):
        """Minimize the (augmented) WLS objective; returns a solution record."""
        ns = self.ev.ns
        vm = np.ones(ns) if vm0 is None else np.asarray(vm0, dtype=float).copy()
        va = np.zeros(ns) if va0 is None else np.asarray(va0, dtype=float).copy()
        x = self._state_to_x(vm, va)
        n = len(x)
        rho = 0.0
        cols = target = None
        if prox is not None:
            cols, target, rho = prox
        j_prev = self.objective(vm, va, prox)
        it = 0
        converged = False
        grad_norm = np.inf
        while it < max_iter:
            h_val = self.h(vm, va)
            jac = self.jac(vm, va)
            r = self.z - h_val
            w = self.w
            if self.huber_k is not None:
                w = self.w * _huber_factor(r / self.sigma, self.huber_k)
            g = jac.T @ (w * r)
            gain = (jac * w[:, None]).T @ jac
            if rho > 0.0:
                # objective carries (rho/2)||x_c - t||^2; with f = sum w r^2 the
                # consistent half-gradient is (rho/2)(t - x_c)
                g = g.copy()
                g[cols] += 0.5 * rho * (target - x[cols])
                gain = gain.copy()
                gain[cols, cols] += 0.5 * rho
            grad_norm = float(np.linalg.norm(g))
            if grad_norm < tol:
                converged = True
                break
            try:
                dx = np.linalg.solve(gain, g)
            except np.linalg.LinAlgError:
                if require_observable and rho == 0.0:
                    raise ObservabilityError(
                        "gain matrix singular: measurement set unobservable"
                    ) from None
                dx = np.linalg.lstsq(gain, g, rcond=None)[0]
            alpha = 1.0
            improved = False
            for _ in range(30):
                x_new = x + alpha * dx
                vm_new, va_new = self._x_to_state(x_new, vm, va)
                if np.all(vm_new > 0):
                    j_new = self.objective(vm_new, va_new, prox)
                    if j_new <= j_prev + 1e-14 * max(1.0, abs(j_prev)):
                        improved = True
                        break
                alpha *= 0.5
            if not improved:
                break
            step = float(np.max(np.abs(x_new - x)))
            x, vm, va, j_prev = x_new, vm_new, va_new, j_new
            it += 1
            if step < 1e-12 * max(1.0, float(np.max(np.abs(x)))):
                converged = True
                break
        if require_observable and rho == 0.0 and not converged and it == 0:
            # never moved: check rank explicitly for a clear error
            jac = self.jac(vm, va)
            if np.linalg.matrix_rank(jac) < n:
                raise ObservabilityError("measurement set unobservable")
        return vm, va, j_prev, it, converged, grad_norm

    def gain_matrix(self, vm, va, rho0=0.0, cols=None):
        jac = self.jac(vm, va)
        gain = (jac * self.w[:, None]).T @ jac
        if rho0 > 0.0 and cols is not None and len(cols):
            gain = gain.copy()
            gain[cols, cols] += 0.5 * rho0
        return gain

    def covariance(self, vm, va, rho0=0.0, cols=None):
        gain = self.gain_matrix(vm, va, rho0, cols)
        try:
            return np.linalg.inv(gain)
        except np.linalg.LinAlgError:
            return np.linalg.pinv(gain)


class RectSolver:
    """Closed-form weighted linear solve of the PMU model in (e, f)."""

    def __init__(self, model, plan, z, sigma, pmu_idx, buses, admittance=None,
                 pseudo: RectPseudo = None, huber_k=None):
        self.ev = SubsetEvaluator(model, plan, scada_idx=[], pmu_idx=pmu_idx,
                                  bus_subset=buses, admittance=admittance)
        self.c = self.ev.design_rect()
        self.z = np.asarray(z, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if pseudo is not None and len(pseudo):
            pb = self.ev._local[pseudo.bus_idx]
            if np.any(pb < 0):
                raise EstimationError("pseudo-measurement bus outside subset")
            extra = np.zeros((len(pseudo), self.c.shape[1]))
            for r in range(len(pseudo)):
                extra[r, pb[r] + (self.ev.ns if pseudo.comp[r] == 1 else 0)] = 1.0
            self.c = np.vstack([self.c, extra])
            self.z = np.concatenate([self.z, pseudo.value])
            sigma = np.concatenate([sigma, pseudo.sigma])
        self.sigma = sigma
        self.w = 1.0 / sigma**2
        self.huber_k = huber_k
        self._plain_gain = (self.c * self.w[:, None]).T @ self.c

    @property
    def n_cols(self):
        return self.c.shape[1]

    def col_of(self, local_bus, comp):
        return int(local_bus) + (self.ev.ns if comp == 1 else 0)

    def solve(self, x0=None, prox=None, max_iter=10):
        cols = target = None
        rho = 0.0
        if prox is not None:
            cols, target, rho = prox
        gain = self._plain_gain
        rhs = self.c.T @ (self.w * self.z)
        if rho > 0.0:
            gain = gain.copy()
            gain[cols, cols] += 0.5 * rho
        x = x0
        it = 0
        while True:
            w = self.w
            if self.huber_k is not None and x is not None:
                r_std = (self.z - self.c @ x) / self.sigma
                w = self.w * _huber_factor(r_std, self.huber_k)
                gain = (self.c * w[:, None]).T @ self.c
                if rho > 0.0:
                    gain = gain.copy()
                    gain[cols, cols] += 0.5 * rho
                rhs = self.c.T @ (w * self.z)
            b = rhs.copy()
            if rho > 0.0:
                b[cols] += 0.5 * rho * target
            try:
                x_new = np.linalg.solve(gain, b)
            except np.linalg.LinAlgError:
                if rho == 0.0:
                    raise ObservabilityError(
                        "PMU gain matrix singular over the estimable set"
                    ) from None
                x_new = np.linalg.lstsq(gain, b, rcond=None)[0]
            it += 1
            if self.huber_k is None or (x is not None and np.max(np.abs(x_new - x)) < 1e-12) or it >= max_iter:
                x = x_new
                break
            x = x_new
        r = self.z - self.c @ x
        j = float(np.sum(self.w * r * r))
        return x, j, it

    def objective(self, x, prox=None):
        r = self.z - self.c @ x
        j = float(np.sum(self.w * r * r))
        if prox is not None:
            cols, target, rho = prox
            j += float(0.5 * rho * np.sum((x[cols] - target) ** 2))
        return j

    def measurement_objective_at(self, x):
        r = self.z - self.c @ x
        return float(np.sum(self.w * r * r))

    def covariance(self, rho0=0.0, cols=None):
        gain = self._plain_gain
        if rho0 > 0.0 and cols is not None and len(cols):
            gain = gain.copy()
            gain[cols, cols] += 0.5 * rho0
        try:
            return np.linalg.inv(gain)
        except np.linalg.LinAlgError:
            return np.linalg.pinv(gain)


# -- public estimators ---------------------------------------------------------


def wls_estimate(model, measurements: MeasurementSet, init: StateVector = None,
                 scada_idx=None, pmu_idx=None, bus_subset=None, angle_ref=None,
                 tol=1e-8, max_iter=50, pseudo=None, huber_k=None, area="",
                 admittance=None) -> LocalEstimate:
    """Gauss-Newton WLS from SCADA rows (optionally pooled with PMU rows).

    ``angle_ref`` names the bus whose angle is pinned to the gauge; it
    defaults to the model slack when inside the subset, else the
    lowest-indexed subset bus. Raises ObservabilityError when the gain
    matrix is singular.
    """
    plan = measurements.plan
    if scada_idx is None:
        scada_idx = np.flatnonzero(measurements.active_scada)
    else:
        scada_idx = np.asarray(scada_idx, dtype=int)
        scada_idx = scada_idx[measurements.active_scada[scada_idx]]
    if pmu_idx is None:
        pmu_idx = np.array([], dtype=int)
    else:
        pmu_idx = np.asarray(pmu_idx, dtype=int)
        pmu_idx = pmu_idx[measurements.active_pmu[pmu_idx]]
    kind = "hybrid" if len(pmu_idx) else "scada"
    buses = np.arange(model.n_bus) if bus_subset is None else np.asarray(bus_subset, dtype=int)
    if angle_ref is None:
        ref = model.slack_index if model.slack_index in buses else int(buses[0])
    else:
        ref = model.index(angle_ref) if isinstance(angle_ref, str) else int(angle_ref)
    z = np.concatenate([measurements.z_scada[scada_idx], measurements.z_pmu[pmu_idx]])
    sig = np.concatenate([measurements.scada_sigmas()[scada_idx],
                          measurements.pmu_sigmas()[pmu_idx]])
    solver = PolarSolver(model, plan, z, sig, scada_idx, pmu_idx, buses, (ref,),
                         admittance=admittance, pseudo=pseudo, huber_k=huber_k)
    vm0 = va0 = None
    if init is not None:
        vm0, va0 = init.vm[buses], init.va[buses]
    vm, va, j, it, conv, gnorm = solver.solve(vm0, va0, tol=tol, max_iter=max_iter)
    cov = solver.covariance(vm, va)
    return LocalEstimate(
        area=area, kind=kind, bus_idx=buses,
        bus_ids=tuple(model.bus_ids[b] for b in buses),
        vm=vm, va=va, cov=cov, layout="polar", theta_keep=solver.ev.theta_keep,
        objective=solver.measurement_objective(vm, va),
        iterations=it, converged=conv, grad_norm=gnorm,
    )


def pmu_linear_estimate(model, measurements: MeasurementSet, pmu_idx=None,
                        area="", admittance=None, pseudo=None) -> LocalEstimate:
    """One-shot weighted linear PMU estimate over the estimable bus set."""
    plan = measurements.plan
    if pmu_idx is None:
        pmu_idx = np.flatnonzero(measurements.active_pmu)
    else:
        pmu_idx = np.asarray(pmu_idx, dtype=int)
        pmu_idx = pmu_idx[measurements.active_pmu[pmu_idx]]
    reach = pmu_reachable(model, plan, pmu_idx)
    if pseudo is not None and len(pseudo):
        reach = set(reach) | set(int(b) for b in pseudo.bus_idx)
    if not reach:
        raise EstimationError("empty PMU-estimable set")
    buses = np.array(sorted(reach), dtype=int)
    local = -np.ones(model.n_bus, dtype=int)
    local[buses] = np.arange(len(buses))
    from .measurement import pmu_support

    keep = [
        i for i, sup in zip(pmu_idx, pmu_support(model, plan, pmu_idx))
        if all(local[b] >= 0 for b in sup)
    ]
    keep = np.asarray(keep, dtype=int)
    z = measurements.z_pmu[keep]
    sig = measurements.pmu_sigmas()[keep]
    solver = RectSolver(model, plan, z, sig, keep, buses, admittance=admittance, pseudo=pseudo)
    x, j, it = solver.solve()
    ns = len(buses)
    v = x[:ns] + 1j * x[ns:]
    return LocalEstimate(
        area=area, kind="pmu", bus_idx=buses,
        bus_ids=tuple(model.bus_ids[b] for b in buses),
        vm=np.abs(v), va=np.angle(v), cov=solver.covariance(), layout="rect",
        theta_keep=np.arange(ns), objective=j, iterations=it, converged=True,
    )
