"""Run orchestration behind the command line: ground-state cache, single runs,
sweeps and the self-test."""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import store
from .classifier import BlowupDetector, observe, predict, reconcile
from .config import ConfigError, RunConfig
from .evolution import EvolutionAborted, EvolutionConfig, evolve
from .functionals import EnergyBreakdown, energy_breakdown
from .ground_state import GroundStateError, scaled_ground_state, solve_fixed_point
from .hartree_operator import CalibrationError, oracle_potential, riesz_multiplier
from .radial_grid import PhysicalField, make_grid
from .svg import phase_scatter

__all__ = ["Context", "ground_state", "initial_data", "run_evolve", "reclassify", "run_sweep", "selftest"]


class Context:
    """Grid, multiplier and output location for one configuration."""

    def __init__(self, cfg, out=None):
        self.cfg = cfg
        self.out = Path(out) if out is not None else cfg.output_dir
        self.grid = make_grid(*cfg.grid_params())
        try:
            self.m = riesz_multiplier(self.grid)
        except CalibrationError as exc:
            # a grid too coarse to resolve the operator cannot host a ground state either
            store.write_json(store.ground_state_dir(self.out, cfg) / "manifest.json", {
                "converged": False, "error": str(exc), "calibration_error": exc.error,
                "grid": self.grid.manifest()})
            raise GroundStateError(str(exc)) from exc


def _say(quiet, *args):
    if not quiet:
        print(*args, flush=True)


def ground_state(ctx, *, force=False, quiet=True):
    """Load the cached ground state for ctx's grid or solve and cache it.

    Raises GroundStateError after writing a partial report on failure.
    """
    gdir = store.ground_state_dir(ctx.out, ctx.cfg)
    if not force and (gdir / "manifest.json").exists():
        gs = store.load_ground_state(gdir, ctx.grid)
        if gs is not None:
            return gs, gdir
    p = ctx.cfg.values["ground_state"]
    try:
        gs = solve_fixed_point(ctx.grid, ctx.m, tol=p["tol"], max_iter=p["max_iter"])
    except GroundStateError as exc:
        partial = {"converged": False, "error": str(exc), "grid": ctx.grid.manifest()}
        if exc.report is not None:
            partial["ground_state"] = exc.report.manifest()
        store.write_json(gdir / "manifest.json", partial)
        raise
    store.save_ground_state(gdir, gs, {"multiplier": ctx.m.manifest()})
    return gs, gdir


def initial_data(cfg, gs, grid):
    init = cfg.values["init"]
    fam = init["family"]
    r = grid.r_nodes
    if fam == "scaled_ground_state":
        core = init["core_radius"] or None
        return scaled_ground_state(gs, init["a"], core_radius=core)
    if fam in ("gaussian", "chirped_gaussian"):
        u = init["amplitude"] * np.exp(-0.5 * (r / init["width"]) ** 2)
        if fam == "chirped_gaussian":
            u = u * np.exp(1j * init["chirp"] * r * r)
        return PhysicalField(grid, u.astype(complex))
    try:
        return store.read_profile_csv(init["path"], grid)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"unusable initial data: {exc}", cfg.source, None, "init", "path") from exc


def run_dir_for(ctx):
    return ctx.out / f"run_{ctx.cfg.hash()}"


def run_evolve(ctx, *, force=False, quiet=True):
    """Evolve, classify and persist one configuration.

    Returns (outcome dict, exit code).  A finished run directory is reused
    unless ``force``.
    """
    cfg = ctx.cfg
    rdir = run_dir_for(ctx)
    if not force and (rdir / "outcome.json").exists():
        _say(quiet, f"reusing {rdir}")
        out = store.read_json(rdir / "outcome.json")
        return out, 4 if out["evidence"].get("terminated_by") == "nan" else 0

    gs, gdir = ground_state(ctx, quiet=quiet)
    u0 = initial_data(cfg, gs, ctx.grid)
    b0 = energy_breakdown(u0, ctx.m)
    ecfg = cfg.evolution_config()
    th = cfg.thresholds()
    code = 0
    try:
        rec = evolve(u0, ctx.m, ecfg, hooks=[BlowupDetector(ctx.grid, th)])
    except EvolutionAborted as exc:
        rec = exc.record
        code = 4
    pred = predict(u0, gs, ctx.m, breakdown=b0)
    obs = observe(rec, th, t_end=ecfg.t_end)
    outcome = reconcile(pred, obs, cfg.hash()).as_dict()
    outcome["absorber"] = cfg.values["evolution"]["absorber"]

    ckpts = store.save_trajectory(rdir, rec) if rec.times else []
    store.write_json(rdir / "manifest.json", {
        "config": cfg.canonical(),
        "config_hash": cfg.hash(),
        "grid": ctx.grid.manifest(),
        "multiplier": ctx.m.manifest(),
        "ground_state": {**gs.manifest(), "cache": gdir.name},
        "initial": b0.as_dict(),
        "run": {
            "terminated_by": rec.terminated_by,
            "steps": rec.steps,
            "final_time": rec.final_time,
            "recent_step_times": rec.recent_step_times,
            "absorber": outcome["absorber"],
        },
        "checkpoints": ckpts,
    })
    store.write_json(rdir / "outcome.json", outcome)
    _say(quiet, f"{rdir.name}: predicted {pred.verdict}, observed {obs.observed}, agree {outcome['agree']}, "
                f"terminated_by {rec.terminated_by} at t={rec.final_time!r}")
    return outcome, code


def reclassify(run_dir, thresholds, *, quiet=True):
    rec, man, gs = store.load_trajectory(run_dir)
    b0 = EnergyBreakdown(**man["initial"])
    pred = predict(None, gs, None, breakdown=b0)
    obs = observe(rec, thresholds)
    outcome = reconcile(pred, obs, man["config_hash"]).as_dict()
    outcome["absorber"] = man["run"].get("absorber", "none")
    store.write_json(Path(run_dir) / "outcome.json", outcome)
    _say(quiet, f"{Path(run_dir).name}: predicted {pred.verdict}, observed {obs.observed}, "
                f"agree {outcome['agree']}")
    return outcome


def _sweep_point(values, out, force):
    cfg = RunConfig(values)
    try:
        ctx = Context(cfg, out)
        outcome, code = run_evolve(ctx, force=force, quiet=True)
        return outcome, code, run_dir_for(ctx).name, ""
    except Exception as exc:  # recorded per point; the sweep goes on
        return None, 1, "", f"{type(exc).__name__}: {exc}"


def run_sweep(spec, *, out=None, force=False, parallel=None, quiet=True):
    """Run every grid point and write points.csv, phase.svg and index.json.

    Returns (sweep directory, rows).
    """
    base = spec.base
    out = Path(out) if out is not None else base.output_dir
    points = spec.points()
    axes = [spec.axis1] + ([spec.axis2] if spec.axis2 else [])
    key = json.dumps({"base": base.canonical(), "axes": [[n, list(v)] for n, v in axes]}, sort_keys=True)
    sweep_hash = hashlib.sha256(key.encode()).hexdigest()[:12]
    sdir = out / f"sweep_{sweep_hash}"

    # ground states are shared by every point on the same grid; solve them once up front
    seen = set()
    for _, cfg in points:
        k = cfg.hash(sections=("grid", "ground_state"))
        if k in seen:
            continue
        seen.add(k)
        try:
            ground_state(Context(cfg, out), quiet=quiet)
        except GroundStateError:
            pass

    workers = parallel or spec.parallelism
    args = [(cfg.values, out, force) for _, cfg in points]
    t0 = time.perf_counter()
    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, *zip(*args)))
    else:
        results = [_sweep_point(*a) for a in args]

    rows, index = [], []
    for ((v1, v2), _), (outcome, code, rname, err) in zip(points, results):
        if outcome is None:
            row = {"param1": v1, "param2": v2, "E_over_EW": math.nan, "K_over_KW": math.nan,
                   "predicted": "error", "observed": "error", "agree": False, "blowup_time": None}
        else:
            p = outcome["predicted"]
            row = {"param1": v1, "param2": v2, "E_over_EW": 1.0 - p["margin_E"],
                   "K_over_KW": 1.0 - p["margin_K"], "predicted": p["verdict"],
                   "observed": outcome["observed"], "agree": outcome["agree"],
                   "blowup_time": outcome["blowup_time_estimate"]}
        rows.append(row)
        index.append({"param1": v1, "param2": v2, "run": rname, "exit_code": code, "error": err})
        _say(quiet, f"{axes[0][0]}={v1!r}" + (f" {axes[1][0]}={v2!r}" if v2 is not None else "")
             + f": {row['predicted']} / {row['observed']} agree={row['agree']}")

    store.write_csv(sdir / "points.csv", store.SWEEP_COLUMNS, rows)
    title = "sweep over " + " x ".join(n for n, _ in axes)
    store._atomic_write(sdir / "phase.svg", phase_scatter(rows, title=title))
    store.write_json(sdir / "index.json", {
        "base_config": base.canonical(),
        "axes": [{"name": n, "values": list(v)} for n, v in axes],
        "points": index,
    })
    _say(quiet, f"sweep: {len(rows)} points in {time.perf_counter() - t0:.1f} s -> {sdir}")
    return sdir, rows


# self-test

def _check_transform():
    g = make_grid(5, 512, 20.0)
    r = g.r_nodes
    errs = []
    for f in (np.exp(-r ** 2), (1 + r ** 2) * np.exp(-0.5 * r ** 2), np.exp(-0.3 * r ** 2) * np.cos(r)):
        fh = g.forward(f)
        errs.append(np.max(np.abs(g.inverse(fh) - f)) / np.max(np.abs(f)))
        n_phys = np.sum(g.phys_weights * f * f)
        n_spec = np.sum(g.spec_weights * np.abs(fh) ** 2)
        errs.append(abs(n_phys - n_spec) / n_phys)
    gauss = np.exp(-0.5 * r ** 2)
    fixed = np.max(np.abs(g.forward(gauss) - np.exp(-0.5 * g.rho_nodes ** 2)))
    ok = max(errs) <= 1e-10 and fixed <= 1e-9
    return ok, f"roundtrip/Plancherel {max(errs):.1e}, Gaussian fixed point {fixed:.1e}"


def _check_oracle(constant_scale=1.0):
    g = make_grid(5, 256, 20.0)
    m = riesz_multiplier(g, verify=False, constant_scale=constant_scale)
    u = PhysicalField(g, np.exp(-0.5 * g.r_nodes ** 2).astype(complex))
    radii = np.array([0.3, 1.0, 2.5])
    spec = m.potential_at(u.values, radii)
    ref = oracle_potential(lambda s: np.exp(-0.5 * s ** 2), radii, d=5)
    err = float(np.max(np.abs(spec - ref) / np.abs(ref)))
    return err <= 1e-6, f"max relative deviation {err:.1e}"


def _check_ground_state():
    g = make_grid(5, 512, 40.0)
    m = riesz_multiplier(g)
    gs = solve_fixed_point(g, m)
    b = energy_breakdown(gs.profile, m)
    e = {
        "residual": gs.residual,
        "K C^4 - 1": abs(gs.kinetic_W * gs.sobolev_c4 - 1),
        "E - K/4": abs(gs.energy_W - gs.kinetic_W / 4),
        "P/K - 1": abs(b.potential / b.kinetic - 1),
    }
    ok = e["residual"] <= 1e-6 and e["K C^4 - 1"] <= 1e-6 and e["E - K/4"] <= 1e-8 and e["P/K - 1"] <= 1e-6
    return ok, ", ".join(f"{k} {v:.1e}" for k, v in e.items()), (g, m, gs)


def _check_conservation(g, m, gs):
    u0 = scaled_ground_state(gs, 0.5)
    rec = evolve(u0, m, EvolutionConfig(dt0=1e-3, t_end=0.1, theta_cfl=10.0, snapshot_stride=20))
    M = np.array([b.mass for b in rec.breakdowns])
    E = np.array([b.energy for b in rec.breakdowns])
    b0 = rec.breakdowns[0]
    dm = float(np.max(np.abs(M / M[0] - 1)))
    de = float(np.max(np.abs(E - E[0])) / max(abs(b0.energy), b0.kinetic))
    return dm <= 1e-8 and de <= 1e-6 and rec.terminated_by == "t_end", f"mass drift {dm:.1e}, energy drift {de:.1e}"


def selftest(*, corrupt_constant=False, quiet=False):
    """Fast acceptance subset; returns (all passed, list of (name, ok, detail))."""
    results = []
    t0 = time.perf_counter()

    def item(name, fn):
        t = time.perf_counter()
        try:
            res = fn()
        except Exception as exc:
            res = (False, f"{type(exc).__name__}: {exc}")
        ok, detail = res[0], res[1]
        results.append((name, ok, detail))
        _say(quiet, f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({time.perf_counter() - t:.1f} s)")
        return res

    item("transform unitarity (N=512)", _check_transform)
    item("oracle spot check (N=256)", lambda: _check_oracle(1.01 if corrupt_constant else 1.0))
    gs_res = item("ground-state identities (N=512)", _check_ground_state)
    if gs_res[0] or len(gs_res) > 2:
        item("short conservation run", lambda: _check_conservation(*gs_res[2]))
    else:
        results.append(("short conservation run", False, "skipped: no ground state"))
        _say(quiet, "[FAIL] short conservation run: skipped, no ground state")
    passed = all(ok for _, ok, _ in results)
    _say(quiet, f"selftest {'passed' if passed else 'FAILED'} in {time.perf_counter() - t0:.1f} s")
    return passed, results
