"""FDTD cross-checks against the analytic models, with on-disk caching.

Each check is a list of solver runs identified by a small parameter dict;
results are stored under ``<out>/cache`` keyed by the hash of that dict plus
the solver settings, so interrupted suites resume where they stopped.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from pathlib import Path

import numpy as np

from ..fdtd import (DipoleSource, SolverConfig, bulk_power, convergence_probe, radiated_power,
                    relative_rate, unit, with_dx)
from ..oracles import InterfaceQuery, SphereQuery, chew_rate, interface_rate
from ..scene import GRID_SCHEME, build_scene, interface_scene, voxelize
from .cache import atomic_write

log = logging.getLogger(__name__)

# sphere radii spanning 2a/lambda = 0.044 .. 0.118 at 680 nm
SWEEP_RADII = (15.0, 20.0, 27.0, 33.0, 40.0)
SWEEP_DX = 1.25
INTERFACE_HEIGHTS = (5.0, 10.0, 25.0, 50.0, 100.0, 200.0, 340.0, 510.0, 680.0)
INTERFACE_INDICES = (1.45, 2.4)
TEST_SOURCE_OFFSET = (1.3, -0.7, 2.1)          # generic sub-cell position
TEST_ORIENTATION = unit((0.48, -0.31, 0.82))


def _key(kind: str, params: dict, cfg: SolverConfig) -> str:
    blob = json.dumps({"kind": kind, "params": params, "solver": dataclasses.asdict(cfg),
                       "grid_scheme": GRID_SCHEME},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def cached(out: Path, kind: str, params: dict, cfg: SolverConfig, compute) -> dict:
    k = _key(kind, params, cfg)
    path = Path(out) / "cache" / k[:2] / f"{k}.json"
    if path.exists():
        return json.loads(path.read_text())
    rec = dict(compute(), kind=kind, params=params)
    atomic_write(path, json.dumps(rec, sort_keys=True), overwrite=False)
    return rec


def homogeneous_check(cfg: SolverConfig, out: Path) -> list[dict]:
    """Diamond / vacuum power ratio and flux / work agreement in uniform media."""
    rows = []
    for label, d in (("x", (1, 0, 0)), ("z", (0, 0, 1)), ("oblique", TEST_ORIENTATION)):
        def compute(d=d):
            r = {}
            for n in (1.0, 2.4):
                sc = build_scene("homogeneous", {"n_background": n})
                src = DipoleSource(tuple(np.add(sc.nanodiamond.center, TEST_SOURCE_OFFSET)), unit(d))
                p = radiated_power(voxelize(sc, cfg.dx, pad=cfg.pml_cells), src, cfg)
                r[f"flux_{n}"], r[f"work_{n}"] = p.p_flux, p.p_work
            return r
        rec = cached(out, "homogeneous", {"orientation": label}, cfg, compute)
        rows.append({"orientation": label, "ratio": rec["flux_2.4"] / rec["flux_1.0"],
                     "flux_over_work_1": rec["flux_1.0"] / rec["work_1.0"],
                     "flux_over_work_24": rec["flux_2.4"] / rec["work_2.4"]})
    return rows


def _sphere_run(cfg, out, a, dx, orientation, r_frac=0.6, domain=None):
    c = with_dx(cfg, dx)
    if domain is None:
        domain = 2.5 * math.ceil((2 * a + 40) / 2.5)
    params = {"a": a, "dx": dx, "orientation": orientation, "r_frac": r_frac, "domain": domain}

    def compute():
        sc = build_scene("isolated-sphere", {"D": 2 * a, "coverslip_domain": domain})
        d = (0.0, 0.0, 1.0) if orientation == "radial" else (1.0, 0.0, 0.0)
        src = DipoleSource((0.0, 0.0, r_frac * a), d)
        res = relative_rate(sc, src, c, bulk="compact")
        return res.to_dict()

    rec = cached(out, "sphere", params, c, compute)
    ref = chew_rate(SphereQuery(a, 2.4, 1.0, r_frac * a, orientation))
    return {"a": a, "size_parameter": 2 * a / 680.0, "dx": dx, "orientation": orientation,
            "fdtd": rec["R"], "chew": ref, "rel_dev": rec["R"] / ref - 1,
            "flux_over_work": rec["p_flux"] / rec["p_work"]}


def sphere_check(cfg: SolverConfig, out: Path, radii=SWEEP_RADII, dx=SWEEP_DX) -> dict:
    """Isolated sphere: the 54 nm particle on the production grid and a size sweep."""
    single = [_sphere_run(cfg, out, 27.0, cfg.dx, o, domain=300.0) for o in ("radial", "tangential")]
    sweep = [_sphere_run(cfg, out, a, dx, o) for a in radii for o in ("radial", "tangential")]
    return {"single": single, "sweep": sweep}


def interface_check(cfg: SolverConfig, out: Path, heights=INTERFACE_HEIGHTS,
                    indices=INTERFACE_INDICES) -> list[dict]:
    """Bare dipole above glass or diamond against the angular-spectrum model."""
    rows = []
    for n2 in indices:
        for z in heights:
            lateral = 600.0
            for o, d in (("perpendicular", (0, 0, 1)), ("parallel", (1, 0, 0))):
                params = {"z": z, "n2": n2, "orientation": o, "lateral": lateral}

                def compute(z=z, n2=n2, d=d, lateral=lateral):
                    sc = interface_scene(z, 1.0, n2, lateral=lateral)
                    src = DipoleSource((0.0, 0.0, 0.0), d)
                    return relative_rate(sc, src, cfg, reference_index=1.0, bulk="compact").to_dict()

                rec = cached(out, "interface", params, cfg, compute)
                ref = interface_rate(InterfaceQuery(z, 1.0, n2, o))
                rows.append({"z": z, "n2": n2, "orientation": o, "fdtd": rec["R"], "model": ref,
                             "rel_dev": rec["R"] / ref - 1})
    return rows


def probe_check(cfg: SolverConfig, out: Path) -> dict:
    """Grid refinement on the coverslip and the isolated sphere."""
    res = {}
    for name, preset, dxs, geo in (("coverslip", "coverslip", (5.0, 2.5), None),
                                   ("sphere", "isolated-sphere", (5.0, 2.5, 1.25),
                                    {"coverslip_domain": 100.0})):
        def compute(preset=preset, dxs=dxs, geo=geo):
            sc = build_scene(preset, geo)
            src = DipoleSource(tuple(np.add(sc.nanodiamond.center, TEST_SOURCE_OFFSET)),
                               TEST_ORIENTATION)
            rows, mono = convergence_probe(sc, src, dxs, cfg, bulk="compact")
            return {"rows": [dataclasses.asdict(r) for r in rows], "monotone": mono}
        res[name] = cached(out, "probe", {"case": name, "dx": list(dxs), "geometry": geo}, cfg,
                           compute)
    return res


def run_all(scenario_cfg, out: Path, which=None) -> dict:
    cfg = scenario_cfg.solver
    which = which or ["homogeneous", "sphere", "interface", "probe"]
    out = Path(out)
    res = {}
    if "homogeneous" in which:
        res["homogeneous"] = homogeneous_check(cfg, out)
    if "sphere" in which:
        res["sphere"] = sphere_check(cfg, out)
    if "interface" in which:
        res["interface"] = interface_check(cfg, out)
    if "probe" in which:
        res["probe"] = probe_check(cfg, out)
    atomic_write(out / "validation.json", json.dumps(res, indent=1, default=float))
    return res
