"""A-priori verdict from the energy/kinetic thresholds, an empirical verdict from
a trajectory, and their reconciliation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .functionals import energy_breakdown

__all__ = [
    "Thresholds",
    "Prediction",
    "Observation",
    "RunOutcome",
    "BlowupDetector",
    "predict",
    "observe",
    "reconcile",
]

GLOBAL = "global_scattering"
BLOWUP = "finite_time_blowup"
OUTSIDE = "outside_theorem"

BRANCH = {GLOBAL: "global_proxy", BLOWUP: "blowup_detected"}


@dataclass(frozen=True)
class Thresholds:
    growth_factor: float = 10.0
    trailing_window: float = 0.25
    pk_cap: float = 0.01
    conc_floor_spacings: float = 8.0
    bounded_k_factor: float = 1.1


@dataclass(frozen=True)
class Prediction:
    applicable: bool
    verdict: str
    margin_E: float
    margin_K: float


@dataclass(frozen=True)
class Observation:
    observed: str
    blowup_time_estimate: Optional[float]
    blowup_time_uncertainty: Optional[float]
    evidence: dict


@dataclass(frozen=True)
class RunOutcome:
    predicted: Prediction
    observed: str
    blowup_time_estimate: Optional[float]
    evidence: dict
    agree: bool
    config_hash: str = ""

    def as_dict(self):
        return {
            "predicted": asdict(self.predicted),
            "observed": self.observed,
            "agree": self.agree,
            "margins": {"E": self.predicted.margin_E, "K": self.predicted.margin_K},
            "evidence": dict(self.evidence),
            "blowup_time_estimate": self.blowup_time_estimate,
            "config_hash": self.config_hash,
        }


def predict(u0, gs, m, *, breakdown=None):
    b = breakdown if breakdown is not None else energy_breakdown(u0, m)
    margin_E = 1.0 - b.energy / gs.energy_W
    margin_K = 1.0 - b.kinetic / gs.kinetic_W
    applicable = b.energy < gs.energy_W
    if not applicable or abs(margin_K) < 1e-9:
        verdict = OUTSIDE
    elif margin_K > 0:
        verdict = GLOBAL
    else:
        verdict = BLOWUP
    return Prediction(bool(applicable), verdict, float(margin_E), float(margin_K))


class BlowupDetector:
    """Evolution hook: K >= growth * K(0) together with a collapsed core."""

    def __init__(self, grid, thresholds=Thresholds()):
        self.floor = thresholds.conc_floor_spacings * grid.spacing
        self.growth = thresholds.growth_factor
        self.k0 = None

    def __call__(self, t, breakdown, sample):
        if self.k0 is None:
            self.k0 = breakdown.kinetic
            return None
        if self.k0 > 0 and breakdown.kinetic >= self.growth * self.k0 and sample.lambda_conc <= self.floor:
            return "blowup_event"
        return None


def _xnorm_growth(traj):
    # increments per unit time over the last samples, as a log-slope
    t = np.asarray(traj.times)
    inc = np.array([v.xnorm_increment for v in traj.virials])
    if len(t) < 4:
        return 0.0
    rate = inc[1:] / np.maximum(np.diff(t), 1e-300)
    tail = rate[-max(3, len(rate) // 10):]
    if np.any(tail <= 0):
        return 0.0
    return float((math.log(tail[-1]) - math.log(tail[0])) / max(t[-1] - t[-len(tail) - 1], 1e-300))


def observe(traj, thresholds=Thresholds(), t_end=None):
    """Empirical verdict from a finished trajectory."""
    K = np.array([b.kinetic for b in traj.breakdowns])
    P = np.array([b.potential for b in traj.breakdowns])
    t = np.array(traj.times)
    lam = np.array([v.lambda_conc for v in traj.virials])
    k0 = K[0] if len(K) else 0.0
    evidence = {
        "final_K_over_K0": float(K[-1] / k0) if k0 > 0 else 0.0,
        "min_lambda_conc": float(np.min(lam)) if len(lam) else math.inf,
        "final_P_over_K": float(P[-1] / K[-1]) if len(K) and K[-1] > 0 else 0.0,
        "xnorm_growth_rate": _xnorm_growth(traj),
        "final_time": float(t[-1]) if len(t) else 0.0,
        "terminated_by": traj.terminated_by,
        "steps": int(traj.steps),
    }
    observed = "undecided"
    t_est = unc = None
    if traj.terminated_by in ("blowup_event", "dt_underflow") and len(K) >= 2:
        grew = K[-1] >= thresholds.growth_factor * k0
        shrank = lam[-1] < lam[0]
        if grew and shrank:
            observed = "blowup_detected"
            t_est = float(t[-1])
            recent = traj.recent_step_times
            unc = float(recent[-1] - recent[0]) if len(recent) >= 2 else 0.0
            evidence["blowup_time_uncertainty"] = unc
    elif traj.terminated_by == "t_end" and len(K) >= 4 and k0 > 0:
        T = t[-1]
        first = t <= 0.5 * T
        second = ~first
        bounded = K[second].max() <= thresholds.bounded_k_factor * K[first].max()
        window = t >= (1 - thresholds.trailing_window) * T
        pk = float(np.max(P[window] / K[window]))
        evidence["trailing_max_P_over_K"] = pk
        evidence["K_bounded"] = bool(bounded)
        if bounded and pk <= thresholds.pk_cap:
            observed = "global_proxy"
    elif traj.terminated_by == "t_end" and k0 == 0:
        observed = "global_proxy"
    return Observation(observed, t_est, unc, evidence)


def reconcile(p, o, config_hash=""):
    agree = p.verdict in BRANCH and BRANCH[p.verdict] == o.observed
    return RunOutcome(p, o.observed, o.blowup_time_estimate, dict(o.evidence), bool(agree), config_hash)
