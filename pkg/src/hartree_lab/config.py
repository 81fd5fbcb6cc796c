"""Run configuration: sectioned ``key = value`` files with a typed schema."""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .classifier import Thresholds
from .evolution import EvolutionConfig, Sponge

__all__ = ["ConfigError", "RunConfig", "SweepSpec", "load_config", "parse_config", "SCHEMA"]

FORMAT_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message, path=None, line=None, section=None, key=None):
        where = []
        if path:
            where.append(str(path))
        if line:
            where.append(f"line {line}")
        if section:
            where.append(f"[{section}]" + (f" {key}" if key else ""))
        super().__init__((": ".join([", ".join(where), message])) if where else message)
        self.path, self.line, self.section, self.key = path, line, section, key


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _unit_open(x):
    return 0 < x < 1


def _floats(text):
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return [float(p) for p in parts]


# section -> key -> (parser, check or None, default, description)
SCHEMA = {
    "grid": {
        "dimension": (int, lambda x: x >= 5, 5, "dimension d >= 5"),
        "n_modes": (int, lambda x: x >= 16, 1024, "number of Bessel modes >= 16"),
        "r_max": (float, _positive, 40.0, "truncation radius > 0"),
    },
    "evolution": {
        "dt0": (float, _positive, 1e-2, "initial/maximal step > 0"),
        "dt_min": (float, _positive, 1e-9, "underflow step > 0"),
        "t_end": (float, _positive, 20.0, "final time > 0"),
        "theta_cfl": (float, _positive, 0.1, "phase cap > 0"),
        "snapshot_stride": (int, lambda x: x >= 1, 20, "steps per diagnostic sample >= 1"),
        "absorber": (str, lambda x: x in ("none", "sponge"), "none", "none or sponge"),
        "sponge_width": (float, _unit_open, 0.2, "fraction of r_max in (0, 1)"),
        "sponge_strength": (float, _nonneg, 5.0, "damping rate >= 0"),
        "conservation_tol": (float, _positive, 1e-6, "tolerance > 0"),
        "leak_fraction": (float, _positive, 0.01, "boundary leak threshold > 0"),
    },
    "init": {
        "family": (str, lambda x: x in ("scaled_ground_state", "gaussian", "chirped_gaussian", "from_csv"),
                   "scaled_ground_state", "initial-data family"),
        "a": (float, _nonneg, 0.8, "ground-state amplitude >= 0"),
        "core_radius": (float, _positive, 0.0, "half-kinetic radius of the scaled ground state (0: r_max/40)"),
        "amplitude": (float, _nonneg, 1.0, "Gaussian amplitude >= 0"),
        "width": (float, _positive, 1.0, "Gaussian width > 0"),
        "chirp": (float, None, 0.0, "chirp coefficient"),
        "path": (str, None, "", "CSV with columns r, re_u, im_u"),
    },
    "ground_state": {
        "tol": (float, _positive, 1e-6, "residual tolerance > 0"),
        "max_iter": (int, lambda x: x >= 1, 500, "iteration cap >= 1"),
    },
    "classifier": {
        "growth_factor": (float, lambda x: x > 1, 10.0, "K growth factor > 1"),
        "trailing_window": (float, _unit_open, 0.25, "fraction in (0, 1)"),
        "pk_cap": (float, _positive, 0.01, "P/K cap > 0"),
        "conc_floor_spacings": (float, _positive, 8.0, "core floor in grid spacings > 0"),
        "bounded_k_factor": (float, lambda x: x >= 1, 1.1, "K bound factor >= 1"),
    },
    "run": {
        "output_dir": (str, None, "hartree_out", "output directory"),
        "seed": (int, None, 0, "random seed"),
    },
}

SWEEP_SCHEMA = {
    "axis1": str, "values1": _floats, "axis2": str, "values2": _floats, "parallelism": int,
}


@dataclass(frozen=True)
class RunConfig:
    values: dict  # section -> key -> parsed value, defaults filled
    source: str = ""

    def get(self, dotted):
        sec, key = dotted.split(".", 1)
        return self.values[sec][key]

    def with_value(self, dotted, value):
        sec, key = dotted.split(".", 1)
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ConfigError(f"unknown parameter {dotted!r}")
        parser, check, _, desc = SCHEMA[sec][key]
        try:
            v = parser(value) if parser is not str else str(value)
        except (TypeError, ValueError):
            raise ConfigError(f"invalid value {value!r} for {dotted}: expected {desc}")
        if check is not None and not check(v):
            raise ConfigError(f"value {v!r} out of range for {dotted}: expected {desc}")
        new = {s: dict(kv) for s, kv in self.values.items()}
        new[sec][key] = v
        return RunConfig(new, self.source)

    @property
    def output_dir(self):
        env = os.environ.get("HARTREE_LAB_OUT")
        return Path(env) if env else Path(self.values["run"]["output_dir"])

    def canonical(self, sections=None):
        """Canonical dict used for hashing (output location excluded)."""
        out = {}
        for sec in sorted(self.values):
            if sections is not None and sec not in sections:
                continue
            kv = dict(self.values[sec])
            if sec == "run":
                kv.pop("output_dir", None)
            out[sec] = {k: kv[k] for k in sorted(kv)}
        return out

    def hash(self, sections=None):
        blob = json.dumps(self.canonical(sections), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def grid_params(self):
        g = self.values["grid"]
        return g["dimension"], g["n_modes"], g["r_max"]

    def evolution_config(self):
        e = self.values["evolution"]
        absorber = Sponge(e["sponge_width"], e["sponge_strength"]) if e["absorber"] == "sponge" else None
        return EvolutionConfig(dt0=e["dt0"], dt_min=e["dt_min"], t_end=e["t_end"], theta_cfl=e["theta_cfl"],
                               snapshot_stride=e["snapshot_stride"], absorber=absorber,
                               conservation_tol=e["conservation_tol"], leak_fraction=e["leak_fraction"])

    def thresholds(self):
        return Thresholds(**self.values["classifier"])


@dataclass(frozen=True)
class SweepSpec:
    base: RunConfig
    axis1: tuple
    axis2: tuple = None
    parallelism: int = 1

    def points(self):
        name1, vals1 = self.axis1
        if self.axis2 is None:
            return [((v1, None), self.base.with_value(name1, v1)) for v1 in vals1]
        name2, vals2 = self.axis2
        return [((v1, v2), self.base.with_value(name1, v1).with_value(name2, v2))
                for v1 in vals1 for v2 in vals2]


def _line_of(text, section, key=None):
    cur = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            cur = m.group(1).strip()
            if key is None and cur == section:
                return n
            continue
        if cur == section and key is not None:
            m = re.match(r"^([^=:#;]+?)\s*[=:]", line)
            if m and m.group(1).strip().lower() == key:
                return n
    return None


def parse_config(text, path=None):
    """Parse config text; returns (RunConfig, SweepSpec or None)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=str(path or "<config>"))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        msg = str(exc).splitlines()[0]
        if getattr(exc, "errors", None) and line is None:
            line, bad = exc.errors[0]
            msg = f"cannot parse line {bad.strip()!r}"
        raise ConfigError(msg, path, line)

    values = {sec: {k: spec[2] for k, spec in keys.items()} for sec, keys in SCHEMA.items()}
    sweep_raw = None
    for sec in cp.sections():
        if sec == "sweep":
            sweep_raw = dict(cp[sec])
            continue
        if sec not in SCHEMA:
            raise ConfigError("unknown section", path, _line_of(text, sec), sec)
        for key, raw in cp[sec].items():
            line = _line_of(text, sec, key)
            if key not in SCHEMA[sec]:
                raise ConfigError("unknown key", path, line, sec, key)
            parser, check, _, desc = SCHEMA[sec][key]
            try:
                v = parser(raw.strip())
            except ValueError:
                raise ConfigError(f"cannot parse {raw!r}: expected {desc}", path, line, sec, key)
            if check is not None and not check(v):
                raise ConfigError(f"value {v!r} out of range: expected {desc}", path, line, sec, key)
            values[sec][key] = v

    init = values["init"]
    if init["family"] == "from_csv":
        p = Path(init["path"])
        if path is not None and not p.is_absolute():
            p = Path(path).parent / p
        if not init["path"] or not p.exists():
            raise ConfigError(f"initial-data file not found: {init['path']!r}", path,
                              _line_of(text, "init", "path"), "init", "path")
        init["path"] = str(p.resolve())
    e = values["evolution"]
    if e["dt_min"] > e["dt0"]:
        raise ConfigError("dt_min exceeds dt0", path, _line_of(text, "evolution", "dt_min"), "evolution", "dt_min")

    cfg = RunConfig(values, str(path or ""))
    sweep = None
    if sweep_raw is not None:
        sweep = _parse_sweep(cfg, sweep_raw, text, path)
    return cfg, sweep


def _parse_sweep(cfg, raw, text, path):
    for key in raw:
        if key not in SWEEP_SCHEMA:
            raise ConfigError("unknown key", path, _line_of(text, "sweep", key), "sweep", key)
    axes = []
    for i in (1, 2):
        name = raw.get(f"axis{i}")
        vals = raw.get(f"values{i}")
        if name is None and vals is None:
            continue
        if name is None or vals is None:
            raise ConfigError(f"axis{i} and values{i} must be given together", path,
                              _line_of(text, "sweep"), "sweep")
        name = name.strip()
        sec, _, key = name.partition(".")
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ConfigError(f"unknown parameter {name!r}", path, _line_of(text, "sweep", f"axis{i}"),
                              "sweep", f"axis{i}")
        try:
            parsed = _floats(vals)
        except ValueError as exc:
            raise ConfigError(f"bad value list ({exc})", path, _line_of(text, "sweep", f"values{i}"),
                              "sweep", f"values{i}")
        for v in parsed:
            try:
                cfg.with_value(name, v)
            except ConfigError as exc:
                raise ConfigError(str(exc), path, _line_of(text, "sweep", f"values{i}"), "sweep", f"values{i}")
        axes.append((name, tuple(parsed)))
    if not axes:
        raise ConfigError("sweep needs at least axis1/values1", path, _line_of(text, "sweep"), "sweep")
    try:
        par = int(raw.get("parallelism", "1"))
    except ValueError:
        raise ConfigError("parallelism must be an integer", path, _line_of(text, "sweep", "parallelism"),
                          "sweep", "parallelism")
    if par < 1:
        raise ConfigError("parallelism must be >= 1", path, _line_of(text, "sweep", "parallelism"),
                          "sweep", "parallelism")
    return SweepSpec(cfg, axes[0], axes[1] if len(axes) > 1 else None, par)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path)
    return parse_config(text, path)
