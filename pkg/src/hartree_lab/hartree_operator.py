"""Hartree potential V = |x|^-4 * |u|^2 and the nonlinearity f(u) = -V u.

The spectral route multiplies the density transform by the Riesz symbol
c(d) rho^(4-d).  On a truncated ball the r^-4 tail of V is aliased back into
the interior, so a low-rank symmetric closure built from even powers of
r / r_max is fitted once per grid against exact Gaussian-density potentials.
An independent nested-quadrature oracle (no transforms) validates both.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gamma, hyp1f1

from .radial_grid import PhysicalField, RadialGrid, sphere_area

__all__ = [
    "CalibrationError",
    "RieszMultiplier",
    "OracleConvergenceError",
    "riesz_constant",
    "riesz_multiplier",
    "gaussian_density_potential",
    "hartree_potential",
    "oracle_potential",
    "nonlinearity",
]

CLOSURE_DEGREE = 6
CALIBRATION_TOL = 1e-6


class CalibrationError(ValueError):
    """The spectral potential disagrees with the oracle (bad constant or grid too coarse)."""

    def __init__(self, message, error):
        super().__init__(message)
        self.error = error


class OracleConvergenceError(RuntimeError):
    def __init__(self, message, value, error_estimate):
        super().__init__(f"{message} (value={value!r}, error estimate={error_estimate:.3e})")
        self.value = value
        self.error_estimate = error_estimate


def riesz_constant(d):
    """c(d) with (|x|^-4 * g)^ = c(d) rho^(4-d) g^ in the unitary convention.

    The Fourier transform of |x|^-4 is 2^(d/2-4) Gamma(d/2-2) |xi|^(4-d); the
    convolution theorem adds a factor (2 pi)^(d/2).
    """
    return (2 * np.pi) ** (d / 2) * 2 ** (d / 2 - 4) * gamma(d / 2 - 2)


def gaussian_density_potential(d, sigma, r):
    """Exact |x|^-4 * exp(-|x|^2/sigma^2) at radii r."""
    r = np.asarray(r, dtype=float)
    return sphere_area(d) * gamma(d / 2 - 2) / 2 * sigma ** (d - 4) * hyp1f1(2, d / 2, -(r / sigma) ** 2)


def gaussian_density_potential_dr(d, sigma, r):
    r = np.asarray(r, dtype=float)
    z = (r / sigma) ** 2
    dfz = 2 / (d / 2) * hyp1f1(3, d / 2 + 1, -z)
    return -sphere_area(d) * gamma(d / 2 - 2) / 2 * sigma ** (d - 4) * dfz * 2 * r / sigma ** 2


@dataclass(frozen=True, eq=False)
class RieszMultiplier:
    grid: RadialGrid
    symbol: np.ndarray
    c_d: float
    calibration_error: float = float("nan")
    # far-field closure: V += Q B Q^T (w * g)
    closure_basis: np.ndarray = field(default=None, repr=False)
    closure_matrix: np.ndarray = field(default=None, repr=False)

    def _closure(self, dens):
        if self.closure_matrix is None:
            return 0.0
        Q = self.closure_basis
        return Q @ (self.closure_matrix @ (Q.T @ (self.grid.phys_weights * dens)))

    def _moments(self, dens):
        return self.closure_matrix @ (self.closure_basis.T @ (self.grid.phys_weights * dens))

    def potential(self, values):
        """V[u] at the nodes, from raw samples."""
        dens = np.abs(values) ** 2
        g = self.grid
        return g.inverse(self.symbol * g.forward(dens)) + self._closure(dens)

    def potential_dr(self, values):
        """dV/dr at the nodes."""
        dens = np.abs(values) ** 2
        g = self.grid
        spec = g.radial_derivative(g.inverse(self.symbol * g.forward(dens)))
        if self.closure_matrix is None:
            return spec
        R = g.r_max
        x = g.r_nodes / R
        k = np.arange(self.closure_basis.shape[1])
        dq = np.where(k > 0, 2 * k / R * x[:, None] ** np.maximum(2 * k - 1, 0), 0.0)
        return spec + dq @ self._moments(dens)

    def potential_at(self, values, radii):
        """V[u] at arbitrary radii inside the ball."""
        dens = np.abs(values) ** 2
        g = self.grid
        radii = np.atleast_1d(np.asarray(radii, dtype=float))
        out = g.synthesize(self.symbol * g.forward(dens), radii)
        if self.closure_matrix is not None:
            Q = _closure_basis(radii, g.r_max, self.closure_basis.shape[1])
            out = out + Q @ self._moments(dens)
        return out

    def manifest(self):
        return {
            "dimension": self.grid.dimension,
            "c_d_calibrated": self.c_d,
            "calibration_error": self.calibration_error,
            "closure_degree": 0 if self.closure_matrix is None else self.closure_basis.shape[1],
        }


def _closure_basis(r, R, nq):
    x = np.asarray(r, dtype=float) / R
    return np.stack([x ** (2 * j) for j in range(nq)], axis=1)


def _fit_closure(grid, symbol, nq):
    """Least-squares symmetric B so that Q B Q^T W corrects Gaussian references."""
    R = grid.r_max
    r = grid.r_nodes
    w = grid.phys_weights
    d = grid.dimension
    Q = _closure_basis(r, R, nq)
    sigma_min = max(R / 40, 8 * grid.spacing)
    sigmas = sigma_min * np.geomspace(1.0, 8.0, 9)
    pairs = [(i, j) for i in range(nq) for j in range(i, nq)]
    sel = r < 0.8 * R
    rows, rhs = [], []
    for sig in sigmas:
        dens = np.exp(-((r / sig) ** 2))
        raw = grid.inverse(symbol * grid.forward(dens))
        err = gaussian_density_potential(d, sig, r) - raw
        mu = Q.T @ (w * dens)
        X = np.zeros((sel.sum(), len(pairs)))
        for p, (i, j) in enumerate(pairs):
            X[:, p] = Q[sel, i] * mu[j]
            if i != j:
                X[:, p] += Q[sel, j] * mu[i]
        # relative weighting so every reference counts equally
        scale = 1.0 / np.max(np.abs(gaussian_density_potential(d, sig, r[sel])))
        rows.append(X * scale)
        rhs.append(err[sel] * scale)
    coef, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
    B = np.zeros((nq, nq))
    for p, (i, j) in enumerate(pairs):
        B[i, j] = B[j, i] = coef[p]
    return Q, B


def riesz_multiplier(grid, *, closure=True, verify=True, constant_scale=1.0):
    """Build the Riesz symbol for the grid and calibrate it against the oracle.

    constant_scale is a test hook: anything other than 1 corrupts c(d) and must
    be caught by the calibration step.
    """
    d = grid.dimension
    c = riesz_constant(d) * constant_scale
    symbol = c * grid.rho_nodes ** (4.0 - d)
    Q = B = None
    if closure:
        Q, B = _fit_closure(grid, symbol, CLOSURE_DEGREE)
    m = RieszMultiplier(grid, symbol, c, float("nan"), Q, B)

    # calibration: V(0) of the unit Gaussian against the quadrature oracle
    width = max(1.0, 8 * grid.spacing)
    u = np.exp(-0.5 * (grid.r_nodes / width) ** 2)
    spectral = m.potential_at(u, [0.0])[0]
    reference = oracle_potential(lambda s: np.exp(-0.5 * (s / width) ** 2), [0.0], d=d)[0]
    err = abs(spectral - reference) / abs(reference)
    m = RieszMultiplier(grid, symbol, c, float(err), Q, B)
    if verify and err > CALIBRATION_TOL:
        raise CalibrationError(f"Riesz constant failed oracle calibration: relative error {err:.3e}", err)
    return m


def _same_grid(u, m):
    if u.grid is not m.grid:
        raise ValueError("field and multiplier live on different grids")


def hartree_potential(u, m):
    _same_grid(u, m)
    return PhysicalField(u.grid, m.potential(u.values))


def nonlinearity(u, m):
    _same_grid(u, m)
    return PhysicalField(u.grid, -m.potential(u.values) * u.values)


def _quad(f, a, b, rel_tol, **kw):
    # QUADPACK warns about roundoff near the requested floor; judge by the
    # returned error estimate instead (see _check)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return integrate.quad(f, a, b, epsabs=0.0, epsrel=rel_tol, limit=400, **kw)


def _check(val, err, rel_tol):
    # a sum of panels is judged as a whole: a negligible panel may miss its
    # own relative target without affecting the total
    if not np.isfinite(val) or err > max(100 * rel_tol * abs(val), 1e-300):
        raise OracleConvergenceError("oracle quadrature did not converge", val, err)
    return val


def oracle_potential(u, sample_radii, *, d=None, rel_tol=1e-10, s_max=None):
    """|x|^-4 * |u|^2 at a few radii by nested adaptive quadrature.

    ``u`` is a callable profile s -> u(s) (then ``d`` is required) or a
    PhysicalField, in which case its band-limited interpolant is sampled.  The
    inner polar-angle integral uses t = 1 - cos(theta), turning sin^(d-2) into
    the algebraic weight (t(2 - t))^((d-3)/2) handled exactly by QUADPACK.
    """
    if isinstance(u, PhysicalField):
        grid = u.grid
        d = grid.dimension
        coef = grid.forward(u.values)
        profile = lambda s: grid.synthesize(coef, [s])[0]
        s_max = grid.r_max if s_max is None else s_max
    else:
        if d is None:
            raise ValueError("dimension required for a callable profile")
        profile = u
        s_max = np.inf if s_max is None else s_max
    alpha = (d - 3) / 2
    omega = sphere_area(d - 1)

    def angular(r, s):
        a, b = r * r + s * s, 2 * r * s
        if b == 0.0:
            # the weight integrates to B(1/2, (d-1)/2) over c in [-1, 1]
            return 2 ** (2 * alpha + 1) * gamma(alpha + 1) ** 2 / gamma(2 * alpha + 2) / a ** 2
        # in t = 1 - cos(theta) the denominator is (r-s)^2 + 2rs t, free of
        # cancellation; it peaks in a layer of width eps = (r-s)^2/(2rs) at
        # t = 0, so split geometrically from there
        delta = (r - s) ** 2
        eps = delta / b
        cuts = [0.0]
        step = max(eps, 1e-15)
        while step < 2.0:
            cuts.append(step)
            step *= 8.0
        cuts.append(2.0)
        den = lambda t: (delta + b * t) ** -2
        tol = 0.1 * rel_tol
        total = err = 0.0
        last = len(cuts) - 2
        for k, (lo, hi) in enumerate(zip(cuts[:-1], cuts[1:])):
            if k == 0 and k == last:
                val, e = _quad(den, lo, hi, tol, weight="alg", wvar=(alpha, alpha))
            elif k == 0:
                val, e = _quad(lambda t: (2 - t) ** alpha * den(t), lo, hi, tol, weight="alg", wvar=(alpha, 0.0))
            elif k == last:
                val, e = _quad(lambda t: t ** alpha * den(t), lo, hi, tol, weight="alg", wvar=(0.0, alpha))
            else:
                val, e = _quad(lambda t: (t * (2 - t)) ** alpha * den(t), lo, hi, tol)
            total += val
            err += e
        return _check(total, err, tol)

    out = []
    for r in np.atleast_1d(sample_radii):
        r = float(r)

        def radial(s):
            if s == 0.0:
                return 0.0
            g = abs(profile(s)) ** 2
            if g == 0.0:
                return 0.0
            return g * s ** (d - 1) * angular(r, s)

        pieces = [(0.0, r), (r, min(s_max, r + 10.0)), (min(s_max, r + 10.0), s_max)]
        total = err = 0.0
        for a, b in pieces:
            if b > a:
                val, e = _quad(radial, a, b, rel_tol)
                total += val
                err += e
        out.append(omega * _check(total, err, rel_tol))
    return np.array(out)
