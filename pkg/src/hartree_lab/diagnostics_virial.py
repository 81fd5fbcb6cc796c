"""Variance/virial diagnostics, localized cutoffs, concentration scale, X-norm.

Radial reductions used throughout, with g = |u|^2:

    d/dt  int phi g        = 2 Im int conj(u) u_r phi'
    d2/dt2 int phi g       = int (Delta phi)' g_r + 4 int phi'' |u_r|^2 + 2 int g phi' V_r

The first term is the weak form of -int (Delta^2 phi) g, which stays valid for
the C^2 cutoffs below (their third derivative jumps at the knots).  The last
term is the pair-interaction integral  int int (grad phi(x) - grad phi(y)) .
grad|x-y|^-4 g(x) g(y), folded onto V_r = d/dr (|x|^-4 * g); for phi = |x|^2
it equals -8P.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import trapezoid
from scipy.optimize import brentq

__all__ = [
    "Cutoff",
    "VirialSample",
    "cutoff_profiles",
    "weighted_mass",
    "virial_first",
    "virial_second_direct",
    "virial_second_oracle",
    "global_virial_rate",
    "concentration_scale",
    "lp_norm",
    "xnorm_exponent",
    "xnorm_accumulate",
]


def _hermite_quintic(left, right):
    """Quintic on [1, 2] matching (p, p', p'') = left at 1 and right at 2."""
    rows, rhs = [], []
    for x0, vals in ((1.0, left), (2.0, right)):
        for k, v in enumerate(vals):
            row = []
            for n in range(6):
                if n < k:
                    row.append(0.0)
                else:
                    row.append(np.prod(np.arange(n - k + 1, n + 1)) * x0 ** (n - k))
            rows.append(row)
            rhs.append(v)
    return Polynomial(np.linalg.solve(np.array(rows), np.array(rhs)))


_JOINERS = {
    "plateau": (Polynomial([1.0]), _hermite_quintic((1.0, 0.0, 0.0), (0.0, 0.0, 0.0)), 1),
    "quadratic": (Polynomial([0.0, 0.0, 1.0]), _hermite_quintic((1.0, 2.0, 2.0), (0.0, 0.0, 0.0)), 2),
}


def _profile_derivs(kind, x):
    """phi and its first four derivatives at x = r/R (unscaled profile)."""
    inner, joiner, _ = _JOINERS[kind]
    out = np.zeros((5,) + np.shape(x))
    a = x <= 1.0
    b = (x > 1.0) & (x < 2.0)
    pi, pj = inner, joiner
    for k in range(5):
        out[k][a] = pi(x[a])
        out[k][b] = pj(x[b])
        pi, pj = pi.deriv(), pj.deriv()
    return out


@dataclass(frozen=True, eq=False)
class Cutoff:
    """phi_R sampled on the grid with analytic radial derivative tables.

    When the support [0, 2R] lies inside the ball, ``panel`` holds a Gauss
    rule aligned with the knots at R and 2R, plus the matrices that evaluate u
    and u_r there; the third derivative of phi jumps at the knots, so the node
    rule would only be first-order accurate for the weak bi-Laplacian term.
    """

    kind: str
    R: float
    dimension: int
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    lap: np.ndarray
    dlap: np.ndarray
    bilap: np.ndarray
    panel: Optional["PanelRule"] = None

    def evaluate(self, r):
        """(phi, phi', phi'') at arbitrary radii."""
        r = np.asarray(r, dtype=float)
        return _scaled(self.kind, self.R, r)[:3]


@dataclass(frozen=True, eq=False)
class PanelRule:
    points: np.ndarray
    weights: np.ndarray  # include r^(d-1) and the sphere area
    value_matrix: np.ndarray
    deriv_matrix: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    dlap: np.ndarray

    def values(self, u):
        return _mat(self.value_matrix, u)

    def derivs(self, u):
        return _mat(self.deriv_matrix, u)


def _mat(A, v):
    if np.iscomplexobj(v):
        both = A @ np.stack([v.real, v.imag], axis=-1)
        return both[:, 0] + 1j * both[:, 1]
    return A @ v


def _panel_rule(grid, kind, R, order=6):
    from .radial_grid import sphere_area

    d = grid.dimension
    n_pan = max(4, int(np.ceil(R / (2 * grid.spacing))))
    x, w = np.polynomial.legendre.leggauss(order)
    pts, wts = [], []
    for a, b in ((0.0, R), (R, 2 * R)):
        edges = np.linspace(a, b, n_pan + 1)
        lo, hi = edges[:-1, None], edges[1:, None]
        pts.append((0.5 * (lo + hi) + 0.5 * (hi - lo) * x).ravel())
        wts.append((0.5 * (hi - lo) * w).ravel())
    pts = np.concatenate(pts)
    wts = np.concatenate(wts) * pts ** (d - 1) * sphere_area(d)
    fwd = grid._out_scale[:, None] * grid.kernel * grid._in_scale[None, :]
    from scipy.special import jv

    c = grid.series_weights()
    basis = jv(grid.order, np.outer(pts, grid.rho_nodes)) * c / pts[:, None] ** grid.order
    E = basis @ fwd
    D = grid.derivative_matrix_at(pts)
    f0, f1, f2, f3, _ = _scaled(kind, R, pts)
    dlap = f3 + (d - 1) * (f2 / pts - f1 / pts ** 2)
    return PanelRule(pts, wts, E, D, f0, f1, f2, dlap)


def _scaled(kind, R, r):
    p = _JOINERS[kind][2]
    amp = 1.0 if p == 1 else R * R
    x = r / R
    raw = _profile_derivs(kind, x)
    return [amp * raw[k] / R ** k for k in range(5)]


def cutoff_profiles(grid, R, kind="plateau", *, allow_large=False):
    """phi_R = phi(x/R) (plateau) or R^2 phi(x/R) (quadratic).

    ``allow_large`` lifts the R < r_max/2 restriction, which is how the
    untruncated weight |x|^2 is realized (support beyond the grid).
    """
    if kind not in _JOINERS:
        raise ValueError(f"unknown cutoff kind {kind!r}")
    if not R > 0 or (not allow_large and R >= grid.r_max / 2):
        raise ValueError(f"cutoff radius must lie in (0, r_max/2), got {R}")
    r = grid.r_nodes
    d = grid.dimension
    f0, f1, f2, f3, f4 = _scaled(kind, R, r)
    lap = f2 + (d - 1) / r * f1
    dlap = f3 + (d - 1) * (f2 / r - f1 / r ** 2)
    bilap = f4 + (d - 1) * (f3 / r - 2 * f2 / r ** 2 + 2 * f1 / r ** 3)
    bilap = bilap + (d - 1) / r * dlap
    panel = _panel_rule(grid, kind, R) if 2 * R < grid.r_max else None
    return Cutoff(kind, float(R), d, f0, f1, f2, lap, dlap, bilap, panel)


@dataclass(frozen=True)
class VirialSample:
    t: float
    variance: float
    y_R: float
    yprime_R: float
    virial_rate: float
    z_second_direct: float
    lambda_conc: float
    xnorm_increment: float


def weighted_mass(u, cutoff):
    """int phi_R |u|^2 dx."""
    pr = cutoff.panel
    if pr is not None:
        return float(np.sum(pr.weights * pr.phi * np.abs(pr.values(u.values)) ** 2))
    return float(np.sum(u.grid.phys_weights * cutoff.phi * np.abs(u.values) ** 2))


def virial_first(u, cutoff):
    """2 Im int conj(u) u_r phi'(r) dx."""
    pr = cutoff.panel
    if pr is not None:
        v, vr = pr.values(u.values), pr.derivs(u.values)
        return float(2 * np.sum(pr.weights * np.imag(np.conj(v) * vr) * pr.dphi))
    g = u.grid
    ur = g.radial_derivative(u.values)
    return float(2 * np.sum(g.phys_weights * np.imag(np.conj(u.values) * ur) * cutoff.dphi))


def virial_second_direct(u, m, cutoff):
    """Full right-hand side of the second virial identity for radial u and phi."""
    g = u.grid
    pr = cutoff.panel
    if pr is not None:
        v, vr = pr.values(u.values), pr.derivs(u.values)
        w, d2, dl, d1 = pr.weights, pr.d2phi, pr.dlap, pr.dphi
        Vr = _potential_dr_at(m, u.values, pr)
    else:
        v, vr = u.values, g.radial_derivative(u.values)
        w, d2, dl, d1 = g.phys_weights, cutoff.d2phi, cutoff.dlap, cutoff.dphi
        Vr = m.potential_dr(u.values)
    dens = np.abs(v) ** 2
    gr = 2 * np.real(np.conj(v) * vr)
    bilap_term = np.sum(w * dl * gr)
    hess_term = 4 * np.sum(w * d2 * np.abs(vr) ** 2)
    kernel_term = 2 * np.sum(w * dens * d1 * Vr)
    return float(bilap_term + hess_term + kernel_term)


def _potential_dr_at(m, values, pr):
    g = m.grid
    dens = np.abs(values) ** 2
    spec = pr.deriv_matrix @ g.inverse(m.symbol * g.forward(dens))
    if m.closure_matrix is None:
        return spec
    k = np.arange(m.closure_basis.shape[1])
    x = pr.points / g.r_max
    dq = np.where(k > 0, 2 * k / g.r_max * x[:, None] ** np.maximum(2 * k - 1, 0), 0.0)
    return spec + dq @ m._moments(dens)


def virial_second_oracle(u, m, cutoff, radii, rel_tol=1e-9):
    """Kernel term by the transform-free oracle at given radii (spot check).

    Returns (spectral V_r, oracle V_r) at ``radii``; the oracle differentiates
    the quadrature potential by a centered difference.
    """
    from .hartree_operator import oracle_potential

    g = u.grid
    radii = np.asarray(radii, dtype=float)
    h = 1e-3 * np.maximum(radii, 1.0)
    plus = oracle_potential(u, radii + h, rel_tol=rel_tol)
    minus = oracle_potential(u, radii - h, rel_tol=rel_tol)
    oracle = (plus - minus) / (2 * h)
    coef = g.forward(np.abs(u.values) ** 2)
    # spectral derivative at the same radii
    spec = g.derivative_matrix_at(radii) @ g.inverse(m.symbol * coef)
    if m.closure_matrix is not None:
        k = np.arange(m.closure_basis.shape[1])
        x = radii / g.r_max
        dq = np.where(k > 0, 2 * k / g.r_max * x[:, None] ** np.maximum(2 * k - 1, 0), 0.0)
        spec = spec + dq @ m._moments(np.abs(u.values) ** 2)
    return spec, oracle


def global_virial_rate(b):
    return 8.0 * (b.kinetic - b.potential)


def global_virial_rate_energy(b):
    return 8.0 * (4.0 * b.energy - b.kinetic)


# --- concentration scale -------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(3)


@lru_cache(maxsize=4)
def _gl_tables(grid):
    edges = np.concatenate([[0.0], grid.r_nodes, [grid.r_max]])
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    pts = (0.5 * (hi + lo))[:, None] + half[:, None] * _GL_X[None, :]
    wts = half[:, None] * _GL_W[None, :]
    D = grid.derivative_matrix_at(pts.ravel())
    return lo, hi, pts, wts, D


def concentration_scale(u):
    """Radius of the ball holding half of int |grad u|^2.

    The gradient comes from the Bessel series at three Gauss points per node
    interval, so the cumulative integral is accurate well below node spacing.
    """
    g = u.grid
    lo, hi, pts, wts, D = _gl_tables(g)
    ur = D @ u.values if not np.iscomplexobj(u.values) else (D @ u.values.real + 1j * (D @ u.values.imag))
    dens = (np.abs(ur) ** 2).reshape(pts.shape) * pts ** (g.dimension - 1)
    pieces = np.sum(dens * wts, axis=1)
    total = pieces.sum()
    if total <= 0:
        raise ValueError("concentration scale undefined for a constant or zero field")
    cum = np.concatenate([[0.0], np.cumsum(pieces)])
    target = 0.5 * total
    k = int(np.searchsorted(cum, target) - 1)
    k = min(max(k, 0), len(pieces) - 1)
    # quadratic through the three Gauss samples, integrated from lo[k]
    a, b = lo[k], hi[k]
    coef = np.polyfit(pts[k], dens[k], 2)
    anti = np.polyint(coef)
    base = np.polyval(anti, a)
    f = lambda x: cum[k] + np.polyval(anti, x) - base - target
    if f(a) >= 0:
        return float(a)
    if f(b) <= 0:
        return float(b)
    return float(brentq(f, a, b, xtol=1e-14, rtol=1e-14))


# --- X(I) norm -------------------------------------------------------------

def xnorm_exponent(d):
    return 6.0 * d / (3.0 * d - 8.0)


def lp_norm(u, p=None):
    g = u.grid
    if p is None:
        p = xnorm_exponent(g.dimension)
    return float(np.sum(g.phys_weights * np.abs(u.values) ** p) ** (1.0 / p))


def xnorm_accumulate(snapshots):
    """(int ||u(t)||_p^6 dt)^(1/6) by the trapezoid rule.

    ``snapshots`` is a sequence of (t, field) or (t, precomputed L^p norm).
    """
    snapshots = list(snapshots)
    if len(snapshots) < 2:
        raise ValueError("need at least two snapshots")
    t = np.array([s[0] for s in snapshots], dtype=float)
    norms = np.array([s[1] if np.isscalar(s[1]) else lp_norm(s[1]) for s in snapshots])
    return float(trapezoid(norms ** 6, t) ** (1.0 / 6.0))
