"""Radial discretization and the unitary radial Fourier (Hankel) transform.

A radial function u(|x|) on R^d has Fourier transform

    u_hat(rho) = rho^(1 - d/2) * int_0^inf u(r) J_nu(r rho) r^(d/2) dr,   nu = d/2 - 1,

which is an order-nu Hankel transform of r^nu u.  We discretize it with the
quasi-discrete Hankel transform: nodes sit at Bessel zeros, the kernel is a
symmetric N x N matrix that is (after one orthogonalization sweep) exactly
involutory, so forward and inverse are the same matrix up to diagonal scalings.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import gamma, jv

__all__ = [
    "RadialGrid",
    "PhysicalField",
    "SpectralField",
    "bessel_zeros",
    "sphere_area",
    "make_grid",
    "transform_forward",
    "transform_inverse",
    "integrate_radial",
    "dilate",
]


def sphere_area(d):
    """Surface area of the unit sphere S^{d-1}."""
    return 2.0 * np.pi ** (d / 2) / gamma(d / 2)


def bessel_zeros(nu, n, tol=1e-15):
    """First n positive zeros of J_nu.

    McMahon's expansion supplies starting points, Newton polishes them.  For
    larger orders the asymptotic guess for the first few zeros can land in the
    wrong basin, so every root is checked against a sign-change bracket and
    re-solved by bisection if needed.
    """
    if n < 1:
        raise ValueError("need at least one zero")
    k = np.arange(1, n + 1, dtype=float)
    b = (k + nu / 2 - 0.25) * np.pi
    mu = 4.0 * nu * nu
    x = b - (mu - 1) / (8 * b) - 4 * (mu - 1) * (7 * mu - 31) / (3 * (8 * b) ** 3)
    for _ in range(50):
        f = jv(nu, x)
        fp = 0.5 * (jv(nu - 1, x) - jv(nu + 1, x))
        dx = f / fp
        x = x - dx
        if np.max(np.abs(dx)) < tol * np.max(x):
            break

    # brackets from a scan; zeros of J_nu are > nu and spaced by about pi
    hi = x[-1] + 4.0
    grid = np.arange(max(nu, 1e-3), hi, np.pi / 8)
    s = jv(nu, grid)
    idx = np.nonzero(np.sign(s[:-1]) * np.sign(s[1:]) < 0)[0][:n]
    if len(idx) < n:
        raise RuntimeError("zero scan found too few brackets")
    lo_b, hi_b = grid[idx], grid[idx + 1]
    bad = (x <= lo_b) | (x >= hi_b) | ~np.isfinite(x)
    if np.any(bad):
        from scipy.optimize import brentq

        for i in np.nonzero(bad)[0]:
            x[i] = brentq(lambda t: jv(nu, t), lo_b[i], hi_b[i], xtol=1e-15, rtol=4e-16)
    return x


@dataclass(frozen=True, eq=False)
class RadialGrid:
    dimension: int
    order: float
    n_modes: int
    r_max: float
    r_nodes: np.ndarray
    rho_nodes: np.ndarray
    phys_weights: np.ndarray
    spec_weights: np.ndarray
    transform_matrix_hash: str
    # zero j_{nu,N+1} and |J_{nu+1}(j_k)|, kept for synthesis
    j_last: float = field(repr=False)
    j1: np.ndarray = field(repr=False)
    kernel: np.ndarray = field(repr=False)
    _in_scale: np.ndarray = field(repr=False)
    _out_scale: np.ndarray = field(repr=False)

    @property
    def rho_max(self):
        return self.j_last / self.r_max

    @property
    def spacing(self):
        """Asymptotic node spacing pi * r_max / j_{nu,N+1}."""
        return np.pi * self.r_max / self.j_last

    # raw array transforms (the field wrappers below validate and wrap)
    def forward(self, values):
        return _apply(self.kernel, values * self._in_scale) * self._out_scale

    def inverse(self, values):
        return _apply(self.kernel, values / self._out_scale) / self._in_scale

    def laplacian(self, values):
        return self.inverse(-self.rho_nodes ** 2 * self.forward(values))

    def inverse_neg_laplacian(self, values):
        return self.inverse(self.forward(values) / self.rho_nodes ** 2)

    def series_weights(self):
        """Coefficients c_m with u(r) = r^-nu * sum_m c_m u_hat_m J_nu(rho_m r)."""
        return 2.0 / self.r_max ** 2 * self.rho_nodes ** self.order / self.j1 ** 2

    def synthesize(self, spec_values, radii):
        """Evaluate the band-limited interpolant of u at arbitrary radii.

        Points outside the ball return 0 (the basis vanishes at r_max).
        """
        radii = np.atleast_1d(np.asarray(radii, dtype=float))
        out = np.zeros(radii.shape, dtype=np.result_type(spec_values, float))
        inside = (radii < self.r_max) & (radii >= 0)
        rr = radii[inside]
        c = self.series_weights() * spec_values
        vals = np.empty(rr.shape, dtype=out.dtype)
        small = rr < 1e-8
        big = ~small
        if np.any(big):
            basis = jv(self.order, np.outer(rr[big], self.rho_nodes))
            vals[big] = _apply(basis, c) / rr[big] ** self.order
        if np.any(small):
            # r -> 0 limit of r^-nu J_nu(rho r) is (rho/2)^nu / Gamma(nu+1)
            lim = (self.rho_nodes / 2) ** self.order / gamma(self.order + 1)
            vals[small] = lim @ c
        out[inside] = vals
        return out

    def derivative_matrix_at(self, radii):
        """Matrix mapping nodal values of u to du/dr at the given radii."""
        radii = np.atleast_1d(np.asarray(radii, dtype=float))
        nu = self.order
        c = self.series_weights() * self.rho_nodes
        safe = np.where(radii > 0, radii, 1.0)
        basis = -jv(nu + 1, np.outer(radii, self.rho_nodes)) * c / safe[:, None] ** nu
        basis[radii <= 0] = 0.0  # radial functions are flat at the origin
        fwd = self._out_scale[:, None] * self.kernel * self._in_scale[None, :]
        return basis @ fwd

    @cached_property
    def radial_derivative_matrix(self):
        return self.derivative_matrix_at(self.r_nodes)

    def radial_derivative(self, values):
        """du/dr at the collocation nodes, computed from the Bessel series."""
        return _apply(self.radial_derivative_matrix, values)

    def manifest(self):
        return {
            "dimension": self.dimension,
            "order": self.order,
            "n_modes": self.n_modes,
            "r_max": self.r_max,
            "checksum": self.transform_matrix_hash,
        }


def _apply(mat, vec):
    # real matrices act on complex vectors without promoting the matrix
    if np.iscomplexobj(vec) and not np.iscomplexobj(mat):
        both = mat @ np.stack([vec.real, vec.imag], axis=-1)
        return both[..., 0] + 1j * both[..., 1]
    return mat @ vec


def make_grid(d, n_modes, r_max):
    if int(d) != d or d < 5:
        raise ValueError(f"dimension must be an integer >= 5, got {d}")
    if int(n_modes) != n_modes or n_modes < 16:
        raise ValueError(f"n_modes must be an integer >= 16, got {n_modes}")
    if not np.isfinite(r_max) or r_max <= 0:
        raise ValueError(f"r_max must be positive, got {r_max}")
    d, n, R = int(d), int(n_modes), float(r_max)
    nu = d / 2 - 1
    zeros = bessel_zeros(nu, n + 1)
    S = zeros[-1]
    j = zeros[:-1]
    j1 = np.abs(jv(nu + 1, j))
    T = 2.0 * jv(nu, np.outer(j, j) / S) / (np.outer(j1, j1) * S)
    # T is involutory only to ~1e-12; one Newton-Schulz polar step makes it
    # orthogonal to roundoff so the discrete flow conserves mass exactly
    T = 1.5 * T - 0.5 * (T @ T @ T)
    T = 0.5 * (T + T.T)

    r = j * R / S
    rho = j / R
    omega = sphere_area(d)
    wr = 2 * R ** 2 / (S ** 2 * j1 ** 2) * r ** (d - 2) * omega
    wk = 2 / (R ** 2 * j1 ** 2) * rho ** (d - 2) * omega
    in_scale = r ** nu * R / j1
    out_scale = j1 / (S / R) / rho ** nu

    h = hashlib.sha256()
    for a in (r, rho, wr, wk):
        h.update(np.ascontiguousarray(a).tobytes())
    for a in (r, rho, wr, wk, T):
        a.setflags(write=False)
    return RadialGrid(d, nu, n, R, r, rho, wr, wk, h.hexdigest()[:16], S, j1, T, in_scale, out_scale)


def _check_values(grid, values, kind):
    values = np.asarray(values)
    if values.shape != (grid.n_modes,):
        raise ValueError(f"{kind} needs {grid.n_modes} samples, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{kind} contains non-finite samples")
    return values


@dataclass(frozen=True, eq=False)
class PhysicalField:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, "PhysicalField"))

    def with_values(self, values):
        return PhysicalField(self.grid, values)


@dataclass(frozen=True, eq=False)
class SpectralField:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, "SpectralField"))


def transform_forward(u):
    return SpectralField(u.grid, u.grid.forward(u.values))


def transform_inverse(v):
    return PhysicalField(v.grid, v.grid.inverse(v.values))


def integrate_radial(f, grid, side="physical"):
    f = np.asarray(f)
    if f.shape != (grid.n_modes,):
        raise ValueError(f"expected {grid.n_modes} samples, got shape {f.shape}")
    if side == "physical":
        w = grid.phys_weights
    elif side == "spectral":
        w = grid.spec_weights
    else:
        raise ValueError(f"side must be 'physical' or 'spectral', got {side!r}")
    return np.sum(w * f)


def dilate(u, lam):
    """u_lam(r) = lam^((d-2)/2) u(lam r), sampled through the Bessel series.

    For lam > 1 the points lam * r_k beyond r_max read as zero.
    """
    g = u.grid
    vals = g.synthesize(g.forward(u.values), lam * g.r_nodes)
    return PhysicalField(g, lam ** ((g.dimension - 2) / 2) * vals)
