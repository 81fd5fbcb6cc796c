import math

import numpy as np
import pytest
from scipy.integrate import quad

from hartree_lab.diagnostics_virial import (
    concentration_scale,
    cutoff_profiles,
    global_virial_rate,
    global_virial_rate_energy,
    lp_norm,
    virial_first,
    virial_second_direct,
    virial_second_oracle,
    weighted_mass,
    xnorm_accumulate,
    xnorm_exponent,
)
from hartree_lab.evolution import EvolutionConfig, evolve, linear_step
from hartree_lab.functionals import energy_breakdown
from hartree_lab.ground_state import scaled_ground_state
from hartree_lab.radial_grid import PhysicalField, dilate

from conftest import gaussian, random_profile

OMEGA4 = 8 * math.pi ** 2 / 3


def test_plateau_cutoff(grid512):
    R = 8.0
    c = cutoff_profiles(grid512, R, "plateau")
    phi, d1, d2 = c.evaluate(np.array([0.0, R, 1.5 * R, 2 * R, 3 * R]))
    assert phi[0] == 1.0 and phi[1] == 1.0 and phi[3] == 0.0 and phi[4] == 0.0
    x = np.linspace(R, 2 * R, 200)
    assert np.all(np.diff(c.evaluate(x)[0]) <= 0)
    # C^2 at both knots
    for knot in (R, 2 * R):
        vals = c.evaluate(np.array([knot - 1e-9, knot + 1e-9]))
        for k in range(3):
            assert abs(vals[k][0] - vals[k][1]) < 1e-6


def test_quadratic_cutoff_inside(grid512):
    R = 10.0
    c = cutoff_profiles(grid512, R, "quadratic")
    r = grid512.r_nodes
    inside = r <= R
    assert np.allclose(c.phi[inside], r[inside] ** 2, rtol=1e-14)
    assert np.allclose(c.lap[inside], 2 * 5, rtol=1e-12)
    assert np.max(np.abs(c.bilap[inside])) < 1e-9
    assert np.all(c.phi[r >= 2 * R] == 0)


@pytest.mark.parametrize("R", [0.0, -1.0, 20.0, 25.0])
def test_cutoff_radius_range(grid512, R):
    with pytest.raises(ValueError):
        cutoff_profiles(grid512, R)


def test_cutoff_kind(grid512):
    with pytest.raises(ValueError):
        cutoff_profiles(grid512, 5.0, "cosine")


def test_virial_first_real_field_vanishes(grid512):
    c = cutoff_profiles(grid512, 10.0, "plateau")
    assert virial_first(gaussian(grid512, width=5.0), c) == pytest.approx(0, abs=1e-14)


def test_virial_first_chirped_closed_form(grid512):
    alpha = 0.15
    u = gaussian(grid512, chirp=alpha)
    c = cutoff_profiles(grid512, 4 * grid512.r_max, "quadratic", allow_large=True)
    # 2 Im int conj(u) u_r (2 r) dx = 8 alpha int r^2 |u|^2 dx
    moment, _ = quad(lambda s: s ** 6 * math.exp(-s * s), 0, np.inf, epsabs=0, epsrel=1e-13)
    expect = 8 * alpha * OMEGA4 * moment
    assert virial_first(u, c) == pytest.approx(expect, rel=1e-8)


def test_weighted_mass_bounds(grid512, m512):
    c = cutoff_profiles(grid512, 10.0, "plateau")
    u = gaussian(grid512, width=6.0, amp=0.2)
    y = weighted_mass(u, c)
    assert 0 <= y <= energy_breakdown(u, m512).mass


@pytest.fixture(scope="module")
def spreading_run(grid1024, m1024):
    # outgoing chirp pushes mass through the plateau edge at R = r_max/4
    u0 = gaussian(grid1024, width=4.0, amp=0.1, chirp=-0.02)
    cfg = EvolutionConfig(dt0=1e-3, t_end=0.2, theta_cfl=10.0, snapshot_stride=1)
    return evolve(u0, m1024, cfg)


def test_flow_consistency_first_derivative(spreading_run):
    rec = spreading_run
    y = np.array([v.y_R for v in rec.virials])
    yp = np.array([v.yprime_R for v in rec.virials])
    t = np.array(rec.times)
    fd = (y[2:] - y[:-2]) / (t[2:] - t[:-2])
    assert np.max(np.abs(fd / yp[1:-1] - 1)) <= 3e-4
    assert np.min(np.abs(yp[1:-1])) > 0.05  # a genuine flux through the cutoff, not 0 vs 0


def _second_difference_check(u0, m, R, h=5e-4):
    g = u0.grid
    c = cutoff_profiles(g, R, "quadratic")
    cfg = EvolutionConfig(dt0=h, t_end=4 * h, theta_cfl=1e3, snapshot_stride=1)
    rec = evolve(u0, m, cfg)
    assert len(rec.times) == 5
    z = [weighted_mass(PhysicalField(g, v), c) for _, v in rec.checkpoints]
    fd = (-z[0] + 16 * z[1] - 30 * z[2] + 16 * z[3] - z[4]) / (12 * h * h)
    direct = virial_second_direct(PhysicalField(g, rec.checkpoints[2][1]), m, c)
    return fd, direct


def test_second_derivative_subthreshold_chirped(grid1024, m1024):
    u0 = gaussian(grid1024, width=1.5, amp=0.4, chirp=0.1)
    fd, direct = _second_difference_check(u0, m1024, grid1024.r_max / 4)
    assert abs(fd / direct - 1) <= 1e-3


def test_second_derivative_superthreshold(gs1024, m1024):
    u0 = scaled_ground_state(gs1024, 1.2)
    fd, direct = _second_difference_check(u0, m1024, gs1024.profile.grid.r_max / 4)
    assert direct < 0
    assert abs(fd / direct - 1) <= 1e-3


def test_second_derivative_subthreshold_w_family(gs1024, m1024):
    u0 = PhysicalField(gs1024.profile.grid, 0.8 * scaled_ground_state(gs1024, 1.0).values * np.exp(0.05j * gs1024.profile.grid.r_nodes ** 2))
    fd, direct = _second_difference_check(u0, m1024, gs1024.profile.grid.r_max / 4)
    assert abs(fd / direct - 1) <= 1e-3


@pytest.mark.parametrize("which", ["gaussian", "chirped", "w08"])
def test_unweighted_second_virial_is_8_k_minus_p(which, grid1024, m1024, gs1024):
    u = {
        "gaussian": gaussian(grid1024, width=1.2, amp=0.8),
        "chirped": gaussian(grid1024, width=0.9, amp=0.5, chirp=0.3),
        "w08": PhysicalField(grid1024, 0.8 * gs1024.profile.values),
    }[which]
    c = cutoff_profiles(grid1024, 10 * grid1024.r_max, "quadratic", allow_large=True)
    b = energy_breakdown(u, m1024)
    assert virial_second_direct(u, m1024, c) == pytest.approx(8 * (b.kinetic - b.potential), rel=1e-4)


def test_second_virial_of_zero(grid512, m512):
    c = cutoff_profiles(grid512, 5.0, "quadratic")
    assert virial_second_direct(PhysicalField(grid512, np.zeros(512)), m512, c) == 0.0


def test_global_rate_two_paths(grid512, m512):
    rng = np.random.default_rng(11)
    for _ in range(10):
        b = energy_breakdown(random_profile(grid512, rng), m512)
        a, e = global_virial_rate(b), global_virial_rate_energy(b)
        assert abs(a - e) <= 1e-10 * max(abs(a), b.kinetic)
    assert global_virial_rate(energy_breakdown(PhysicalField(grid512, np.zeros(512)), m512)) == 0


@pytest.mark.parametrize("a", [0.5, 0.8, 0.95, 1.05, 1.2])
def test_global_rate_sign_dichotomy(a, gs1024, m1024):
    b = energy_breakdown(PhysicalField(gs1024.profile.grid, a * gs1024.profile.values), m1024)
    rate = global_virial_rate(b)
    assert (rate > 0) == (a < 1)
    assert rate == pytest.approx(8 * (a * a - a ** 4) * gs1024.kinetic_W, rel=1e-5)


def test_concentration_scale_dilation(grid1024):
    u = gaussian(grid1024, width=1.7)
    assert concentration_scale(dilate(u, 2.0)) == pytest.approx(concentration_scale(u) / 2, rel=1e-6)


def test_concentration_scale_gaussian_value(grid1024):
    # half of int r^2 e^{-r^2} r^4 dr lies below the scale
    half = lambda s: quad(lambda x: x ** 6 * math.exp(-x * x), 0, s, epsabs=0, epsrel=1e-13)[0] - 15 * math.sqrt(math.pi) / 32
    from scipy.optimize import brentq
    expect = brentq(half, 0.5, 3.0, xtol=1e-14)
    assert concentration_scale(gaussian(grid1024)) == pytest.approx(expect, rel=1e-8)


def test_concentration_scale_of_zero(grid512):
    with pytest.raises(ValueError):
        concentration_scale(PhysicalField(grid512, np.zeros(512)))


def test_concentration_scale_of_w_is_reproducible(gs1024, grid1024, m1024):
    from hartree_lab.ground_state import solve_fixed_point

    again = solve_fixed_point(grid1024, m1024)
    assert concentration_scale(again.profile) == concentration_scale(gs1024.profile)


def test_concentration_scale_shrinks_before_blowup(blowup_run):
    lam = np.array([v.lambda_conc for v in blowup_run.virials])
    assert np.all(np.diff(lam[-20:]) < 0)


def test_xnorm_exponent():
    assert xnorm_exponent(5) == pytest.approx(30 / 7)


def test_xnorm_zero_and_errors(grid512):
    z = PhysicalField(grid512, np.zeros(512))
    assert xnorm_accumulate([(0.0, z), (1.0, z)]) == 0.0
    with pytest.raises(ValueError):
        xnorm_accumulate([(0.0, z)])


def _free_gaussian_lp(t, p):
    # e^{it Delta} e^{-r^2/2} has modulus (1+4t^2)^(-5/4) exp(-r^2 / (2(1+4t^2)))
    s = 1 + 4 * t * t
    return (s ** (-5 * p / 4) * (2 * math.pi * s / p) ** 2.5) ** (1 / p)


def test_xnorm_free_evolution(grid512):
    p = xnorm_exponent(5)
    ref = quad(lambda t: _free_gaussian_lp(t, p) ** 6, 0, 1, epsabs=0, epsrel=1e-12)[0] ** (1 / 6)
    u = gaussian(grid512)
    snaps = [(0.0, u)]
    for k in range(1, 21):
        snaps.append((0.05 * k, linear_step(u, 0.05 * k)))
    assert lp_norm(snaps[7][1]) == pytest.approx(_free_gaussian_lp(0.35, p), rel=1e-8)
    assert xnorm_accumulate(snaps) == pytest.approx(ref, rel=0.02)


def test_xnorm_increments_grow_before_blowup(blowup_run):
    t = np.array(blowup_run.times)
    inc = np.array([v.xnorm_increment for v in blowup_run.virials])
    rate = inc[1:] / np.diff(t)
    assert np.all(np.diff(rate[-10:]) > 0)
    part = np.array(blowup_run.xnorm_partial)
    assert np.all(np.diff(part) >= 0)
    assert part[-1] == pytest.approx(np.sum(inc) ** (1 / 6), rel=1e-12)


def test_kernel_term_oracle_spot_check(grid1024, m1024):
    u = gaussian(grid1024, width=1.1, amp=0.7)
    c = cutoff_profiles(grid1024, 5.0, "quadratic")
    spec, orc = virial_second_oracle(u, m1024, c, [0.4, 1.3, 3.0, 6.5])
    assert np.max(np.abs(spec / orc - 1)) < 1e-5


def test_sample_invariants(spreading_run, blowup_run):
    for rec in (spreading_run, blowup_run):
        for b, v in zip(rec.breakdowns, rec.virials):
            assert v.variance >= 0 and 0 <= v.y_R <= b.mass * (1 + 1e-12)
            assert v.virial_rate == pytest.approx(8 * (b.kinetic - b.potential))
    # real initial data carries no momentum
    assert blowup_run.virials[0].yprime_R == pytest.approx(0, abs=1e-12)
