"""Report records shared by the bad-data, dphase, and harness layers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class BdReport:
    """Outcome of one detection-identification-correction pass."""

    side: str  # scada | pmu | hybrid
    statistic: float
    dof: int
    threshold: float
    alpha: float
    detected: bool
    flagged: list = field(default_factory=list)  # (ref, r_norm, action)
    unidentifiable: list = field(default_factory=list)
    rounds: int = 0
    notes: list = field(default_factory=list)

    def flagged_refs(self):
        return [ref for ref, _, _ in self.flagged]

    def to_dict(self):
        return {
            "side": self.side,
            "statistic": float(self.statistic),
            "dof": int(self.dof),
            "threshold": float(self.threshold),
            "alpha": float(self.alpha),
            "detected": bool(self.detected),
            "flagged": [
                {"ref": list(ref), "r_norm": float(rn), "action": act}
                for ref, rn, act in self.flagged
            ],
            "unidentifiable": [list(r) for r in self.unidentifiable],
            "rounds": int(self.rounds),
            "notes": list(self.notes),
        }


@dataclass
class CrossValidationReport:
    """Discrepancies between the extended SCADA and PMU estimates."""

    disputes: list = field(default_factory=list)  # (bus_id, comp, d, suspect side)
    unresolved: list = field(default_factory=list)
    pseudo_for_scada: object = None  # PolarPseudo
    pseudo_for_pmu: object = None  # RectPseudo
    scada_suspect_buses: tuple = ()
    pmu_suspect_buses: tuple = ()

    def to_dict(self):
        return {
            "disputes": [
                {"bus": b, "comp": c, "d": float(d), "suspect": s}
                for b, c, d, s in self.disputes
            ],
            "unresolved": [
                {"bus": b, "comp": c, "d": float(d)} for b, c, d in self.unresolved
            ],
            "scada_suspect_buses": list(self.scada_suspect_buses),
            "pmu_suspect_buses": list(self.pmu_suspect_buses),
        }


@dataclass
class EstimationReport:
    """Final artifact of one strategy run on one measurement set."""

    strategy: str
    bus_ids: tuple
    support: np.ndarray
    vm: np.ndarray
    va: np.ndarray
    converged: bool
    objective: float
    bd: list = field(default_factory=list)  # BdReport per side
    cross_validation: CrossValidationReport = None
    stage_iterations: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)  # flat refs flagged as bad
    failure: str = None
    extras: dict = field(default_factory=dict)

    def max_errors(self, truth_state):
        """(max |dV|, max |dtheta|) against a truth state, on the support."""
        sup = self.support
        dv = np.max(np.abs(self.vm[sup] - truth_state.vm[sup])) if sup.any() else np.nan
        da = np.max(np.abs(self.va[sup] - truth_state.va[sup])) if sup.any() else np.nan
        return float(dv), float(da)

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "buses": list(self.bus_ids),
            "support": self.support.tolist(),
            "vm": self.vm.tolist(),
            "va": self.va.tolist(),
            "converged": bool(self.converged),
            "objective": float(self.objective),
            "bd": [b.to_dict() for b in self.bd],
            "cross_validation": (
                self.cross_validation.to_dict() if self.cross_validation else None
            ),
            "stage_iterations": {k: int(v) for k, v in self.stage_iterations.items()},
            "flags": [list(r) for r in self.flags],
            "failure": self.failure,
        }
