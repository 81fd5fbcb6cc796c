"""Strang-split time integration of  i u_t + Delta u = -V[u] u.

The linear flow is diagonal in the Hankel basis, and the nonlinear flow is an
exact phase rotation because |u| (hence V) is frozen along it.  Consecutive
linear half-steps are fused in spectral space; the physical field is only
materialized for the nonlinear substep, diagnostics and the absorber.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import trapezoid

from .diagnostics_virial import (
    VirialSample,
    concentration_scale,
    cutoff_profiles,
    global_virial_rate,
    lp_norm,
    virial_first,
    virial_second_direct,
    weighted_mass,
)
from .functionals import EnergyBreakdown, energy_from_arrays
from .radial_grid import PhysicalField

__all__ = [
    "Sponge",
    "EvolutionConfig",
    "TrajectoryRecord",
    "EvolutionAborted",
    "linear_step",
    "nonlinear_step",
    "strang_step",
    "evolve",
]

MAX_CHECKPOINTS = 64


@dataclass(frozen=True)
class Sponge:
    width: float = 0.2
    strength: float = 5.0

    def __post_init__(self):
        if not 0 < self.width < 1:
            raise ValueError("sponge width is a fraction of r_max in (0, 1)")
        if self.strength < 0:
            raise ValueError("sponge strength must be non-negative")

    def rate(self, grid):
        """Damping rate profile; the mask per step is exp(-rate * dt)."""
        x = (grid.r_nodes / grid.r_max - (1 - self.width)) / self.width
        x = np.clip(x, 0.0, 1.0)
        return self.strength * x ** 3 * (10 - 15 * x + 6 * x * x)


@dataclass(frozen=True)
class EvolutionConfig:
    dt0: float = 1e-3
    dt_min: float = 1e-9
    t_end: float = 1.0
    theta_cfl: float = 0.1
    snapshot_stride: int = 10
    absorber: Optional[Sponge] = None
    conservation_tol: float = 1e-6
    leak_fraction: float = 0.01
    cutoff_fraction: float = 0.25
    max_steps: int = 2_000_000

    def __post_init__(self):
        if not self.dt0 > 0 or not self.dt_min > 0:
            raise ValueError("dt0 and dt_min must be positive")
        if self.dt_min > self.dt0:
            raise ValueError("dt_min must not exceed dt0")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not 0 < self.theta_cfl:
            raise ValueError("theta_cfl must be positive")
        if int(self.snapshot_stride) != self.snapshot_stride or self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be a positive integer")


@dataclass
class TrajectoryRecord:
    times: list = field(default_factory=list)
    breakdowns: list = field(default_factory=list)
    virials: list = field(default_factory=list)
    dt_history: list = field(default_factory=list)
    boundary_mass: list = field(default_factory=list)
    xnorm_partial: list = field(default_factory=list)
    terminated_by: str = "t_end"
    checkpoints: list = field(default_factory=list)
    final_state: Optional[PhysicalField] = None
    steps: int = 0
    recent_step_times: list = field(default_factory=list)
    absorber: Optional[Sponge] = None

    @property
    def final_time(self):
        return self.times[-1] if self.times else 0.0

    def rows(self):
        """One dict per diagnostic sample, keyed by the trajectory CSV columns."""
        out = []
        for k, t in enumerate(self.times):
            b, v = self.breakdowns[k], self.virials[k]
            out.append({
                "t": t, "dt": self.dt_history[k], "mass": b.mass, "kinetic": b.kinetic,
                "potential": b.potential, "energy": b.energy, "variance": v.variance,
                "y_R": v.y_R, "yprime_R": v.yprime_R, "virial_rate": v.virial_rate,
                "lambda_conc": v.lambda_conc, "xnorm_increment": v.xnorm_increment,
                "xnorm_partial": self.xnorm_partial[k],
                "boundary_mass": self.boundary_mass[k],
            })
        return out


class EvolutionAborted(RuntimeError):
    def __init__(self, message, record, last_valid):
        super().__init__(message)
        self.record = record
        self.last_valid = last_valid


def linear_step(u, dt):
    g = u.grid
    return PhysicalField(g, g.inverse(np.exp(-1j * g.rho_nodes ** 2 * dt) * g.forward(u.values)))


def nonlinear_step(u, m, dt):
    V = m.potential(u.values)
    return PhysicalField(u.grid, np.exp(1j * dt * V) * u.values)


def strang_step(u, m, dt):
    return linear_step(nonlinear_step(linear_step(u, dt / 2), m, dt), dt / 2)


class _Diagnostics:
    def __init__(self, grid, m, cfg):
        self.grid, self.m = grid, m
        R = cfg.cutoff_fraction * grid.r_max
        self.plateau = cutoff_profiles(grid, R, "plateau")
        self.quadratic = cutoff_profiles(grid, R, "quadratic")
        self.outer = grid.r_nodes > 0.9 * grid.r_max
        self.p = None

    def sample(self, t, values):
        g, m = self.grid, self.m
        u = PhysicalField(g, values)
        b = energy_from_arrays(g, m, values)
        dens = np.abs(values) ** 2
        w = g.phys_weights
        variance = float(np.sum(w * g.r_nodes ** 2 * dens))
        y = weighted_mass(u, self.plateau)
        yp = virial_first(u, self.plateau)
        z2 = virial_second_direct(u, m, self.quadratic)
        lam = concentration_scale(u) if b.kinetic > 0 else math.inf
        norm = lp_norm(u)
        bm = float(np.sum(w[self.outer] * dens[self.outer]))
        v = VirialSample(t, variance, y, yp, global_virial_rate(b), z2, lam, 0.0)
        return b, v, norm, bm


def evolve(u0, m, cfg, hooks=()):
    """Advance u0 under the flow; returns a TrajectoryRecord.

    Each hook is called as ``hook(t, breakdown, sample)`` after every recorded
    sample and may return an event name (e.g. "blowup_event") to stop the run.
    """
    g = u0.grid
    if g is not m.grid:
        raise ValueError("field and multiplier live on different grids")
    diag = _Diagnostics(g, m, cfg)
    rec = TrajectoryRecord(absorber=cfg.absorber)
    rho2 = g.rho_nodes ** 2
    damp = cfg.absorber.rate(g) if cfg.absorber is not None else None

    u = np.asarray(u0.values, dtype=complex).copy()
    mass0 = float(np.sum(g.phys_weights * np.abs(u) ** 2))
    recent = deque(maxlen=11)
    lp_hist = []
    stride_ckpt = 1
    n_samples = 0

    def record(t, values, dt):
        nonlocal stride_ckpt, n_samples
        b, v, norm, bm = diag.sample(t, values)
        lp_hist.append(norm)
        if len(rec.times) == 0:
            inc, xpart = 0.0, 0.0
        else:
            seg = trapezoid([lp_hist[-2] ** 6, norm ** 6], [rec.times[-1], t])
            inc = float(seg)
            xpart = (rec.xnorm_partial[-1] ** 6 + inc) ** (1 / 6)
        v = VirialSample(v.t, v.variance, v.y_R, v.yprime_R, v.virial_rate, v.z_second_direct,
                         v.lambda_conc, inc)
        rec.times.append(float(t))
        rec.breakdowns.append(b)
        rec.virials.append(v)
        rec.dt_history.append(float(dt))
        rec.boundary_mass.append(bm)
        rec.xnorm_partial.append(float(xpart))
        if n_samples % stride_ckpt == 0:
            rec.checkpoints.append((float(t), values.copy()))
            if len(rec.checkpoints) > MAX_CHECKPOINTS:
                rec.checkpoints = rec.checkpoints[::2]
                stride_ckpt *= 2
        n_samples += 1
        event = None
        for hook in hooks:
            event = hook(t, b, v) or event
        if event is None and cfg.absorber is None and bm > cfg.leak_fraction * mass0 and mass0 > 0:
            event = "boundary_leak"
        return event

    t = 0.0
    event = record(t, u, 0.0)
    uh = g.forward(u)
    pending = 0.0
    V = m.potential(u)
    last_valid = u.copy()
    steps = 0
    dt = cfg.dt0
    while event is None:
        remaining = cfg.t_end - t
        if remaining <= 1e-14 * max(1.0, cfg.t_end):
            break
        vmax = float(np.max(np.abs(V)))
        dt_cfl = cfg.theta_cfl / vmax if vmax > 0 else math.inf
        dt = min(cfg.dt0, dt_cfl)
        if dt < cfg.dt_min:
            event = "dt_underflow"
            break
        if remaining < dt * (1 + 1e-12):
            dt = remaining
        if steps >= cfg.max_steps:
            event = "max_steps"
            break

        uh = uh * np.exp(-1j * rho2 * (pending + dt / 2))
        u = g.inverse(uh)
        V = m.potential(u)
        u = np.exp(1j * dt * V) * u
        uh = g.forward(u)
        pending = dt / 2
        if damp is not None:
            u = g.inverse(uh * np.exp(-1j * rho2 * pending)) * np.exp(-damp * dt)
            uh = g.forward(u)
            pending = 0.0
        t = t + dt
        steps += 1
        recent.append(t)

        finished = cfg.t_end - t <= 1e-14 * max(1.0, cfg.t_end)
        if steps % cfg.snapshot_stride == 0 or finished:
            u = g.inverse(uh * np.exp(-1j * rho2 * pending))
            if not np.all(np.isfinite(u)):
                rec.steps = steps
                rec.terminated_by = "nan"
                rec.final_state = PhysicalField(g, last_valid)
                raise EvolutionAborted(f"non-finite field at t={t:.6g}", rec, rec.final_state)
            last_valid = u
            event = record(t, u, dt)

    if event is not None and event != "t_end":
        u = g.inverse(uh * np.exp(-1j * rho2 * pending))
        if rec.times[-1] != t and np.all(np.isfinite(u)):
            record(t, u, dt)
            last_valid = u
        rec.terminated_by = event
    else:
        rec.terminated_by = "t_end"
    rec.steps = steps
    rec.recent_step_times = list(recent)
    rec.final_state = PhysicalField(g, last_valid)
    return rec
