"""Conserved quantities, the Weinstein quotient and the sub-threshold bounds."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .radial_grid import PhysicalField

__all__ = [
    "EnergyBreakdown",
    "ThresholdReport",
    "ComparabilityReport",
    "energy_breakdown",
    "energy_from_arrays",
    "weinstein_quotient",
    "coercivity_check",
    "largest_delta0",
    "proof_polynomials",
    "comparability_check",
]


@dataclass(frozen=True)
class EnergyBreakdown:
    mass: float
    kinetic: float
    potential: float
    energy: float

    @classmethod
    def from_terms(cls, mass, kinetic, potential):
        return cls(float(mass), float(kinetic), float(potential), float(kinetic / 2 - potential / 4))

    def as_dict(self):
        return asdict(self)


def energy_from_arrays(grid, m, values):
    uh = grid.forward(values)
    mass = np.sum(grid.phys_weights * np.abs(values) ** 2)
    kinetic = np.sum(grid.spec_weights * grid.rho_nodes ** 2 * np.abs(uh) ** 2)
    potential = np.sum(grid.phys_weights * m.potential(values) * np.abs(values) ** 2)
    return EnergyBreakdown.from_terms(mass, kinetic, potential)


def energy_breakdown(u, m):
    if u.grid is not m.grid:
        raise ValueError("field and multiplier live on different grids")
    return energy_from_arrays(u.grid, m, u.values)


def weinstein_quotient(u, m):
    """P(u)^(1/4) / K(u)^(1/2); its supremum over nonzero u is C_d."""
    b = energy_breakdown(u, m)
    if b.kinetic == 0.0:
        raise ValueError("quotient undefined for the zero field")
    return max(b.potential, 0.0) ** 0.25 / np.sqrt(b.kinetic)


@dataclass(frozen=True)
class ThresholdReport:
    delta0: float
    delta_bar: float
    coercivity_lhs: float
    coercivity_rhs: float
    kinetic_cap: float
    satisfied: bool
    applicable: bool = True


def largest_delta0(energy, energy_W):
    """1 - E/E_W clamped into (0, 1]."""
    return float(np.clip(1.0 - energy / energy_W, np.finfo(float).tiny, 1.0))


def coercivity_check(u, gs, delta0=None, *, m=None, breakdown=None):
    """Check K - P >= (delta_bar/2) K and K <= (1 - delta_bar) K_W.

    Pass the multiplier ``m`` (or a precomputed ``breakdown``).  ``delta0=None``
    uses the largest admissible value for this field.
    """
    if breakdown is None:
        if m is None:
            raise ValueError("need a multiplier or a precomputed breakdown")
        breakdown = energy_breakdown(u, m)
    K, P, E = breakdown.kinetic, breakdown.potential, breakdown.energy
    if delta0 is None:
        delta0 = largest_delta0(E, gs.energy_W)
    if not 0.0 < delta0 <= 1.0:
        raise ValueError(f"delta0 must lie in (0, 1], got {delta0}")
    delta_bar = np.sqrt(delta0)
    lhs = K - P
    rhs = 0.5 * delta_bar * K
    cap = (1.0 - delta_bar) * gs.kinetic_W
    applicable = E <= (1.0 - delta0) * gs.energy_W * (1 + 1e-12) and K < gs.kinetic_W
    ok = bool(applicable and lhs >= rhs and K <= cap)
    return ThresholdReport(float(delta0), float(delta_bar), float(lhs), float(rhs), float(cap), ok, bool(applicable))


def proof_polynomials(x, c4):
    """f(x) = x/2 - c4 x^2/4 and g(x) = x - c4 x^2."""
    if c4 <= 0:
        raise ValueError("c4 must be positive")
    return x / 2 - c4 * x * x / 4, x - c4 * x * x


@dataclass(frozen=True)
class ComparabilityReport:
    passed: bool
    worst_lower_margin: float
    worst_upper_margin: float
    n_samples: int


def comparability_check(trajectory, gs, delta0):
    """(2 + delta_bar)/8 K(t) <= E <= K(t)/2 along a trajectory.

    Margins are relative to K(t); negative means violated.  The energy used is
    the one stored in each sample.
    """
    trajectory = list(trajectory)
    if not trajectory:
        raise ValueError("empty trajectory")
    db = np.sqrt(delta0)
    low = up = np.inf
    for b in trajectory:
        scale = max(b.kinetic, np.finfo(float).tiny)
        low = min(low, (b.energy - (2 + db) / 8 * b.kinetic) / scale)
        up = min(up, (0.5 * b.kinetic - b.energy) / scale)
    tol = -1e-12
    return ComparabilityReport(bool(low >= tol and up >= tol), float(low), float(up), len(trajectory))
