"""On-disk formats: CSV tables, JSON manifests, ground-state cache, run directories.

Floats are written with ``repr`` so files round-trip exactly and identical
inputs give byte-identical outputs.  Writes go to a temporary sibling and are
moved into place, so concurrent sweep workers never see half-written files.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from .diagnostics_virial import VirialSample
from .evolution import TrajectoryRecord
from .functionals import EnergyBreakdown
from .ground_state import GroundStateData
from .radial_grid import PhysicalField

FORMAT_VERSION = 1

TRAJECTORY_COLUMNS = ["t", "dt", "mass", "kinetic", "potential", "energy", "variance", "y_R",
                      "yprime_R", "virial_rate", "lambda_conc", "xnorm_increment", "xnorm_partial",
                      "boundary_mass"]
SWEEP_COLUMNS = ["param1", "param2", "E_over_EW", "K_over_KW", "predicted", "observed", "agree",
                 "blowup_time"]


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if isinstance(row, dict):
            row = [row[k] for k in header]
        w.writerow([fmt(x) for x in row])
    _atomic_write(path, buf.getvalue())


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _clean(obj):
    # JSON has no inf/nan; store them as strings
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def write_json(path, payload):
    data = {"version": FORMAT_VERSION, **_clean(payload)}
    _atomic_write(path, json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ground state cache

def ground_state_dir(out, cfg):
    return Path(out) / f"groundstate_{cfg.hash(sections=('grid', 'ground_state'))}"


def save_ground_state(path, gs, extra=None):
    g = gs.profile.grid
    write_csv(Path(path) / "profile.csv", ["r", "W"],
              zip(g.r_nodes, np.real(gs.profile.values)))
    man = {"ground_state": gs.manifest(), "grid": g.manifest(), "converged": True}
    man.update(extra or {})
    write_json(Path(path) / "manifest.json", man)


def load_ground_state(path, grid):
    man = read_json(Path(path) / "manifest.json")
    if man.get("grid", {}).get("checksum") != grid.transform_matrix_hash or not man.get("converged"):
        return None
    rows = read_csv(Path(path) / "profile.csv")
    W = np.array([float(r["W"]) for r in rows])
    s = man["ground_state"]
    return GroundStateData(PhysicalField(grid, W), s["K_W"], s["E_W"], s["P_W"], s["C_d4"],
                           s["residual"], s["method"], s["iterations"])


# trajectories

def save_trajectory(run_dir, rec):
    run_dir = Path(run_dir)
    write_csv(run_dir / "trajectory.csv", TRAJECTORY_COLUMNS, rec.rows())
    grid = rec.final_state.grid if rec.final_state is not None else None
    names = []
    for k, (t, values) in enumerate(rec.checkpoints):
        name = f"checkpoint_{k:03d}.csv"
        write_csv(run_dir / "checkpoints" / name, ["r", "re_u", "im_u"],
                  zip(grid.r_nodes, values.real, values.imag))
        names.append({"file": name, "t": t})
    return names


def load_trajectory(run_dir):
    """Rebuild the scalar part of a TrajectoryRecord from a run directory."""
    run_dir = Path(run_dir)
    man = read_json(run_dir / "manifest.json")
    rows = read_csv(run_dir / "trajectory.csv")
    rec = TrajectoryRecord()
    for row in rows:
        v = {k: float(row[k]) for k in TRAJECTORY_COLUMNS}
        b = EnergyBreakdown(v["mass"], v["kinetic"], v["potential"], v["energy"])
        rec.times.append(v["t"])
        rec.dt_history.append(v["dt"])
        rec.breakdowns.append(b)
        rec.virials.append(VirialSample(v["t"], v["variance"], v["y_R"], v["yprime_R"], v["virial_rate"],
                                        math.nan, v["lambda_conc"], v["xnorm_increment"]))
        rec.xnorm_partial.append(v["xnorm_partial"])
        rec.boundary_mass.append(v["boundary_mass"])
    run = man["run"]
    rec.terminated_by = run["terminated_by"]
    rec.steps = run["steps"]
    rec.recent_step_times = list(run["recent_step_times"])
    gs = SimpleNamespace(kinetic_W=man["ground_state"]["K_W"], energy_W=man["ground_state"]["E_W"])
    return rec, man, gs


def read_profile_csv(path, grid):
    """Initial data from a CSV with columns r, re_u[, im_u] (or r, re, im).

    Values are taken as-is when the radii match the grid nodes, otherwise
    interpolated by cubic spline and set to zero beyond the last radius.
    """
    from scipy.interpolate import CubicSpline

    rows = read_csv(path)
    if not rows:
        raise ValueError(f"{path}: empty profile")
    keys = rows[0].keys()
    re_key = next((k for k in ("re_u", "re", "u", "W") if k in keys), None)
    im_key = next((k for k in ("im_u", "im") if k in keys), None)
    if "r" not in keys or re_key is None:
        raise ValueError(f"{path}: need columns r and re_u (or re)")
    r = np.array([float(x["r"]) for x in rows])
    re = np.array([float(x[re_key]) for x in rows])
    im = np.array([float(x[im_key]) for x in rows]) if im_key else np.zeros_like(re)
    if len(r) == grid.n_modes and np.allclose(r, grid.r_nodes, rtol=1e-12, atol=0):
        return PhysicalField(grid, re + 1j * im)
    if np.any(np.diff(r) <= 0):
        raise ValueError(f"{path}: radii must be strictly increasing")
    x = grid.r_nodes
    out = CubicSpline(r, re)(x) + 1j * CubicSpline(r, im)(x)
    out[(x > r[-1]) | (x < r[0])] = 0.0
    return PhysicalField(grid, out)
