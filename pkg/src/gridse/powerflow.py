"""Newton-Raphson AC power flow: ground-truth operating states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .network import NetworkModel, build_admittance


class ConvergenceError(RuntimeError):
    def __init__(self, message, mismatch=None):
        super().__init__(message)
        self.mismatch = mismatch


class StateVector:
    """Per-bus voltage magnitudes (pu) and angles (rad), bus order of the model."""

    __slots__ = ("vm", "va")

    def __init__(self, vm, va):
        vm = np.asarray(vm, dtype=float)
        va = np.asarray(va, dtype=float)
        if vm.shape != va.shape:
            raise ValueError("vm/va length mismatch")
        if np.any(vm <= 0):
            raise ValueError("voltage magnitudes must be positive")
        self.vm = vm
        self.va = va

    @property
    def e(self):
        return self.vm * np.cos(self.va)

    @property
    def f(self):
        return self.vm * np.sin(self.va)

    @property
    def v_complex(self):
        return self.vm * np.exp(1j * self.va)

    @classmethod
    def from_rectangular(cls, e, f):
        v = np.asarray(e, dtype=float) + 1j * np.asarray(f, dtype=float)
        return cls(np.abs(v), np.angle(v))

    @classmethod
    def flat(cls, n):
        return cls(np.ones(n), np.zeros(n))

    def copy(self):
        return StateVector(self.vm.copy(), self.va.copy())


@dataclass(frozen=True)
class BranchFlows:
    """Complex power entering each branch at its two ends (pu)."""

    s_from: np.ndarray
    s_to: np.ndarray

    @property
    def p_from(self):
        return self.s_from.real

    @property
    def q_from(self):
        return self.s_from.imag

    @property
    def p_to(self):
        return self.s_to.real

    @property
    def q_to(self):
        return self.s_to.imag


@dataclass(frozen=True)
class OperatingPoint:
    state: StateVector
    p: np.ndarray  # net bus injections, pu
    q: np.ndarray
    flows: BranchFlows
    iterations: int = 0

    def to_dict(self, model: NetworkModel):
        return {
            "buses": list(model.bus_ids),
            "vm": self.state.vm.tolist(),
            "va": self.state.va.tolist(),
            "p": self.p.tolist(),
            "q": self.q.tolist(),
            "p_from": self.flows.p_from.tolist(),
            "q_from": self.flows.q_from.tolist(),
            "p_to": self.flows.p_to.tolist(),
            "q_to": self.flows.q_to.tolist(),
            "iterations": self.iterations,
        }


def injections(model: NetworkModel, state: StateVector, admittance=None):
    """Net complex bus injections S_k = V_k * conj(sum_m Y_km V_m), split (P, Q)."""
    y = admittance or build_admittance(model)
    v = state.v_complex
    s = v * np.conj(y.ybus @ v)
    return s.real, s.imag


def branch_flows(model: NetworkModel, state: StateVector, admittance=None) -> BranchFlows:
    """Pi-model complex power flow at both ends of every branch."""
    y = admittance or build_admittance(model)
    v = state.v_complex
    vf = v[y.f_idx]
    vt = v[y.t_idx]
    i_from = y.yff * vf + y.yft * vt
    i_to = y.ytf * vf + y.ytt * vt
    return BranchFlows(s_from=vf * np.conj(i_from), s_to=vt * np.conj(i_to))


def _dsbus_dv(ybus, v):
    """Partial derivatives of bus injections w.r.t. angles and magnitudes."""
    ib = ybus @ v
    diag_v = sp.diags(v)
    diag_ib = sp.diags(ib)
    diag_vnorm = sp.diags(v / np.abs(v))
    ds_dva = 1j * diag_v @ (sp.diags(np.conj(ib)) - np.conj(ybus @ diag_v))
    ds_dvm = diag_v @ np.conj(ybus @ diag_vnorm) + np.conj(diag_ib) @ diag_vnorm
    return ds_dva.tocsr(), ds_dvm.tocsr()


def solve_power_flow(
    model: NetworkModel,
    tolerance: float = 1e-10,
    max_iter: int = 50,
    admittance=None,
) -> OperatingPoint:
    """Full Newton-Raphson power flow from a flat start.

    Generator buses hold their voltage setpoints (no reactive limits);
    the slack bus fixes angle 0 and its setpoint magnitude.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    y = admittance or build_admittance(model)
    n = model.n_bus
    kinds = model.bus_kinds()
    slack = model.slack_index
    pv = np.flatnonzero((kinds == "generator") & (np.arange(n) != slack))
    pq = np.flatnonzero(kinds == "load")
    pvpq = np.concatenate([pv, pq])
    pvpq.sort()
    pq.sort()

    p_spec, q_spec = model.scheduled_injections()
    vset = model.voltage_setpoints()

    vm = np.ones(n)
    vm[pv] = vset[pv]
    vm[slack] = vset[slack]
    va = np.zeros(n)

    def mismatch(vm, va):
        v = vm * np.exp(1j * va)
        s = v * np.conj(y.ybus @ v)
        dp = s.real - p_spec
        dq = s.imag - q_spec
        return np.concatenate([dp[pvpq], dq[pq]])

    f = mismatch(vm, va)
    it = 0
    while np.max(np.abs(f)) >= tolerance and it < max_iter:
        v = vm * np.exp(1j * va)
        ds_dva, ds_dvm = _dsbus_dv(y.ybus, v)
        j11 = ds_dva[pvpq][:, pvpq].real
        j12 = ds_dvm[pvpq][:, pq].real
        j21 = ds_dva[pq][:, pvpq].imag
        j22 = ds_dvm[pq][:, pq].imag
        jac = sp.bmat([[j11, j12], [j21, j22]], format="csc")
        dx = spla.spsolve(jac, -f)
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        f = mismatch(vm, va)
        it += 1
    if np.max(np.abs(f)) >= tolerance:
        raise ConvergenceError(
            f"power flow did not converge in {max_iter} iterations "
            f"(max mismatch {np.max(np.abs(f)):.3e} pu)",
            mismatch=float(np.max(np.abs(f))),
        )
    state = StateVector(vm, va)
    p, q = injections(model, state, y)
    return OperatingPoint(state=state, p=p, q=q, flows=branch_flows(model, state, y), iterations=it)
