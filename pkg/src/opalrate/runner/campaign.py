"""Campaign orchestration: cached per-sample solves and write-once outputs."""
from __future__ import annotations

import json
import logging
import platform
import time
from pathlib import Path

import numpy as np

from .. import __version__
from ..ensemble import LifetimeDistribution, run_campaign, stats, to_lifetimes
from .cache import SampleCache, atomic_write
from .config import ScenarioConfig, serialize_config

log = logging.getLogger(__name__)


def versions() -> dict:
    import numba
    import scipy
    return {"opalrate": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def cache_for(cfg: ScenarioConfig, out: Path) -> SampleCache:
    return SampleCache(out / "cache", cfg.sample_key)


def run_scenario(cfg: ScenarioConfig, output_dir=None, workers: int = 1) -> dict:
    """Run (or resume) one campaign and write its outputs.

    Outputs go to ``<output_dir>/runs/<preset>-<config hash>/``; files that
    already exist there are left untouched. ``manifest.json`` in the output
    directory is refreshed with versions, hashes and wall time.
    """
    out = Path(output_dir or cfg.output_dir)
    cache = cache_for(cfg, out)
    t0 = time.time()
    dist = run_campaign(cfg.preset, cfg.N, cfg.seed, cfg.solver, cfg.geometry, cache=cache,
                        bulk=cfg.bulk_reference, shell=cfg.shell, workers=workers)
    wall = time.time() - t0
    paths = write_outputs(cfg, dist, out)
    entry = {"preset": cfg.preset, "config_hash": cfg.hash(), "physics_hash": cfg.hash(True),
             "N": cfg.N, "seed": cfg.seed, "succeeded": int(dist.samples.size),
             "failed": len(dist.failed), "cache_hits": cache.hits, "computed": cache.writes,
             "wall_time_s": wall, "outputs": {k: str(v) for k, v in paths.items()}}
    update_manifest(out, cfg.run_id, entry)
    return {"distribution": dist, "paths": paths, "manifest": entry}


def write_outputs(cfg: ScenarioConfig, dist: LifetimeDistribution, out: Path) -> dict:
    run = out / "runs" / cfg.run_id
    bins = cfg.histogram_bins
    tau = to_lifetimes(dist, cfg.tau_bulk)
    s_rate, s_tau = stats(dist, bins), stats(tau, bins)
    files = {
        "config": (run / "config.yaml", serialize_config(cfg)),
        "distribution": (run / "distribution.json", json.dumps(dist.to_dict(bins), indent=1)),
        "lifetimes": (run / "lifetimes.json", json.dumps(tau.to_dict(bins), indent=1)),
        "histogram": (run / "histogram.csv", _hist_csv(dist.histogram_rows(bins))),
        "summary": (run / "summary.json", json.dumps({
            "scenario": cfg.preset, "N": cfg.N, "seed": cfg.seed,
            "rate": {"mean": s_rate.mean, "sem": s_rate.sem, "dgamma": s_rate.dtau, "w": s_rate.w},
            "lifetime_ns": {"tau_mean": s_tau.mean, "sem": s_tau.sem, "dtau": s_tau.dtau,
                            "w": s_tau.w},
            "failed": dist.failed}, indent=1)),
    }
    for key, (path, text) in files.items():
        if not atomic_write(path, text, overwrite=False):
            if path.read_text() != text:
                log.warning("existing %s differs from the recomputed content", path)
    return {k: p for k, (p, _) in files.items()}


def _hist_csv(rows) -> str:
    lines = ["bin_lo,bin_hi,count"] + [f"{lo!r},{hi!r},{c}" for lo, hi, c in rows]
    return "\n".join(lines) + "\n"


def update_manifest(out: Path, run_id: str, entry: dict):
    path = out / "manifest.json"
    man = json.loads(path.read_text()) if path.exists() else {"runs": {}}
    man["versions"] = versions()
    man["updated"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    man["runs"][run_id] = entry
    atomic_write(path, json.dumps(man, indent=1, sort_keys=True))


def load_distribution(path) -> LifetimeDistribution:
    with open(path) as fh:
        return LifetimeDistribution.from_dict(json.load(fh))
