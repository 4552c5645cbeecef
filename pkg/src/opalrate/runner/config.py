"""Scenario configuration: YAML text in, validated frozen settings out.

The canonical form is the fully defaulted configuration rendered as sorted
JSON; its hash keys the per-sample cache, so reordered keys and omitted
defaults map to the same cache entries.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import yaml

from ..ensemble import SHELL, SiteWeights
from ..fdtd import SolverConfig
from ..scene import DEFAULT_GEOMETRY, GRID_SCHEME, PRESETS, SHAPES, SceneError, build_scene


class ConfigError(ValueError):
    pass


_SOLVER_FIELDS = {f.name: f.default for f in dataclasses.fields(SolverConfig)}

DEFAULTS = {
    "preset": "coverslip",
    "geometry": dict(DEFAULT_GEOMETRY),
    "solver": dict(_SOLVER_FIELDS),
    "ensemble": {"N": 100, "seed": 20240521, "bulk_reference": "compact", "shell": SHELL},
    "weights": {"f_T": 0.10, "f_I": 0.65, "f_R": 0.25},
    "rescale_target": 25.4,
    "tau_bulk": 11.6,
    "histogram_bins": 20,
    "output_dir": "opalrate-out",
}

# keys that change per-sample physics; everything else is bookkeeping
_PHYSICS = ("preset", "geometry", "solver")


@dataclass(frozen=True)
class ScenarioConfig:
    preset: str
    geometry: dict
    solver: SolverConfig
    N: int
    seed: int
    bulk_reference: str
    shell: float
    weights: SiteWeights
    rescale_target: float
    tau_bulk: float
    histogram_bins: int
    output_dir: str
    raw: dict = field(compare=False, repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def canonical(self, physics_only: bool = False) -> str:
        d = self.to_dict()
        if physics_only:
            d = {k: d[k] for k in _PHYSICS}
            d["seed"] = self.seed
            d["bulk_reference"] = self.bulk_reference
            d["shell"] = self.shell
            d["grid_scheme"] = GRID_SCHEME
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def hash(self, physics_only: bool = False) -> str:
        return hashlib.sha256(self.canonical(physics_only).encode()).hexdigest()

    def sample_key(self, index: int) -> str:
        """Cache key of one sample: physics configuration plus sample index."""
        return hashlib.sha256(f"{self.canonical(True)}#{int(index)}".encode()).hexdigest()

    @property
    def run_id(self) -> str:
        return f"{self.preset.replace(':', '_')}-{self.hash()[:12]}"


def _merge(base: dict, override: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(f"unknown key '{where}'")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"'{where}' must be a mapping")
            out[k] = _merge(base[k], v, where)
        else:
            out[k] = v
    return out


def _num(d, key, path, kind=float):
    v = d[key]
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"'{path}.{key}' must be an integer")
        return v
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"'{path}.{key}' must be a number")
    return float(v)


def from_dict(d: dict) -> ScenarioConfig:
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a mapping at top level")
    raw = _merge(DEFAULTS, d, "")
    g = raw["geometry"]
    for k in ("a", "D", "n_diamond", "n_glass", "n_opal", "n_background", "coverslip_domain",
              "opal_domain", "intermediate_lift", "shape_size", "eta"):
        g[k] = _num(g, k, "geometry")
    for k in ("opal_lower_layer", "under_pocket"):
        if not isinstance(g[k], bool):
            raise ConfigError(f"'geometry.{k}' must be true or false")
    m = g["opal_max_spheres"]
    if m is not None and (isinstance(m, bool) or not isinstance(m, int) or m < 1):
        raise ConfigError("'geometry.opal_max_spheres' must be a positive integer or null")
    preset = raw["preset"]
    base = preset.split(":", 1)[0]
    if base not in PRESETS:
        raise ConfigError(f"unknown preset '{preset}'; expected one of {PRESETS}")
    if base == "shape-study" and ":" in preset and preset.split(":", 1)[1] not in SHAPES:
        raise ConfigError(f"unknown shape in '{preset}'; expected one of {SHAPES}")
    s = raw["solver"]
    for k in ("pml_cells", "pml_order", "warmup_cycles", "measure_cycles", "max_cycles", "max_cells"):
        s[k] = _num(s, k, "solver", int)
    for k in ("dx", "courant", "pml_alpha", "pml_sigma_scale", "ramp_cycles", "wavelength",
              "conv_tol", "flux_margin"):
        s[k] = _num(s, k, "solver")
    q = s["flux_margin"] / s["dx"] if s["dx"] > 0 else 0.0
    if abs(q - round(q)) > 1e-9:
        if "flux_margin" in (d.get("solver") or {}):
            raise ConfigError(f"solver.flux_margin = {s['flux_margin']} is not a whole number "
                              f"of cells at dx = {s['dx']}")
        # defaulted margin: round up to whole cells
        s["flux_margin"] = s["dx"] * math.ceil(q - 1e-9)
    try:
        solver = SolverConfig(**s)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None
    e = raw["ensemble"]
    N = _num(e, "N", "ensemble", int)
    seed = _num(e, "seed", "ensemble", int)
    e["shell"] = _num(e, "shell", "ensemble")
    if N < 1:
        raise ConfigError("ensemble.N must be >= 1")
    if seed < 0:
        raise ConfigError("ensemble.seed must be >= 0")
    if e["bulk_reference"] not in ("compact", "direct"):
        raise ConfigError("ensemble.bulk_reference must be 'compact' or 'direct'")
    w = raw["weights"]
    try:
        weights = SiteWeights(_num(w, "f_T", "weights"), _num(w, "f_I", "weights"),
                              _num(w, "f_R", "weights"))
    except ValueError as exc:
        raise ConfigError(f"weights: {exc}") from None
    for k in ("f_T", "f_I", "f_R"):
        w[k] = float(w[k])
    target = _num(raw, "rescale_target", "")
    tau_b = _num(raw, "tau_bulk", "")
    raw["rescale_target"], raw["tau_bulk"] = target, tau_b
    if target <= 0 or tau_b <= 0:
        raise ConfigError("rescale_target and tau_bulk must be positive")
    bins = _num(raw, "histogram_bins", "", int)
    if bins < 1:
        raise ConfigError("histogram_bins must be >= 1")
    if not isinstance(raw["output_dir"], str):
        raise ConfigError("output_dir must be a string")
    try:
        geo = {k: v for k, v in g.items()}
        scene = build_scene(preset, geo)
    except SceneError as exc:
        raise ConfigError(f"geometry: {exc}") from None
    for L in scene.domain_size:
        q = L / solver.dx
        if abs(q - round(q)) > 1e-6:
            raise ConfigError(f"solver.dx = {solver.dx} does not divide domain length {L}")
    if e["shell"] < 0 or e["shell"] >= g["D"] / 2:
        raise ConfigError("ensemble.shell must lie in [0, D/2)")
    return ScenarioConfig(preset, g, solver, N, seed, e["bulk_reference"], e["shell"], weights,
                          target, tau_b, bins, raw["output_dir"], raw)


def parse_config(text: str) -> ScenarioConfig:
    """Parse YAML text; syntax errors report line and column."""
    try:
        d = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"parse error at {where}: {exc.problem}") from None
    return from_dict(d)


def serialize_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return parse_config(fh.read())
