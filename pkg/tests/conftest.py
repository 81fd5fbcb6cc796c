import numpy as np
import pytest

from hartree_lab.ground_state import solve_fixed_point
from hartree_lab.hartree_operator import riesz_multiplier
from hartree_lab.radial_grid import PhysicalField, make_grid


@pytest.fixture(scope="session")
def grid512():
    return make_grid(5, 512, 40.0)


@pytest.fixture(scope="session")
def grid1024():
    return make_grid(5, 1024, 40.0)


@pytest.fixture(scope="session")
def m512(grid512):
    return riesz_multiplier(grid512)


@pytest.fixture(scope="session")
def m1024(grid1024):
    return riesz_multiplier(grid1024)


@pytest.fixture(scope="session")
def gs1024(grid1024, m1024):
    return solve_fixed_point(grid1024, m1024)


@pytest.fixture(scope="session")
def gs512(grid512, m512):
    return solve_fixed_point(grid512, m512)


def gaussian(grid, width=1.0, amp=1.0, chirp=0.0):
    r = grid.r_nodes
    return PhysicalField(grid, amp * np.exp(-0.5 * (r / width) ** 2 + 1j * chirp * r * r))


def random_profile(grid, rng):
    """Smooth radial profile: a few Gaussian bumps with random widths, offsets and chirps."""
    r = grid.r_nodes
    u = np.zeros_like(r, dtype=complex)
    for _ in range(rng.integers(1, 4)):
        w = rng.uniform(0.4, 3.0)
        c = rng.uniform(0.0, 2.0) * rng.integers(0, 2)
        amp = rng.uniform(0.2, 1.0) * np.exp(2j * np.pi * rng.uniform())
        u += amp * np.exp(-0.5 * ((r - c) / w) ** 2 + 1j * rng.normal(scale=0.1) * r * r)
    return PhysicalField(grid, u)


@pytest.fixture(scope="session")
def blowup_run(gs1024, m1024):
    """1.2 W, sampled every step until the blow-up detector fires."""
    from hartree_lab.classifier import BlowupDetector
    from hartree_lab.evolution import EvolutionConfig, evolve
    from hartree_lab.ground_state import scaled_ground_state

    cfg = EvolutionConfig(dt0=1e-2, t_end=20.0, theta_cfl=0.1, snapshot_stride=1)
    return evolve(scaled_ground_state(gs1024, 1.2), m1024, cfg, hooks=[BlowupDetector(m1024.grid)])


@pytest.fixture(scope="session")
def dispersive_run(gs1024, m1024):
    """0.5 W with the sponge on, run to t = 20."""
    from hartree_lab.classifier import BlowupDetector
    from hartree_lab.evolution import EvolutionConfig, Sponge, evolve
    from hartree_lab.ground_state import scaled_ground_state

    cfg = EvolutionConfig(dt0=1e-2, t_end=20.0, theta_cfl=0.1, snapshot_stride=20, absorber=Sponge())
    return evolve(scaled_ground_state(gs1024, 0.5), m1024, cfg, hooks=[BlowupDetector(m1024.grid)])


# acceptance criteria report one line each; the lines are repeated at the end of the run
ACCEPTANCE = []


class Criterion:
    def __init__(self, number, title):
        self.number, self.title = number, title
        self.items = []
        self.ok = False

    def check(self, label, value, ok):
        self.items.append((label, value, bool(ok)))

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.ok = exc_type is None and bool(self.items) and all(ok for _, _, ok in self.items)
        parts = [f"{label}={value:.3g}" if isinstance(value, float) else f"{label}={value}"
                 for label, value, _ in self.items]
        if exc_type is not None:
            parts.append(f"error {exc_type.__name__}: {exc}")
        line = f"[{'PASS' if self.ok else 'FAIL'}] criterion {self.number}: {self.title} | " + ", ".join(parts)
        ACCEPTANCE.append(line)
        print(line)
        return False


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
