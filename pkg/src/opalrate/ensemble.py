"""Monte Carlo averaging over emitter position and orientation.

Every sample is derived from ``(seed, index)`` alone through a spawned
``SeedSequence``, so any subset of a campaign can be recomputed in any order
and gives the same numbers.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .fdtd import DipoleSource, SimulationResult, SolverConfig, SolverError, relative_rate
from .oracles import TAU_BULK
from .scene import DielectricScene, Sphere, build_scene, host_inset_contains, host_radius, voxelize

log = logging.getLogger(__name__)

SHELL = 5.0                 # nm of excluded surface layer
PERCENTILE_METHOD = "linear"
MAX_FAILED_FRACTION = 0.05


class CampaignFailed(RuntimeError):
    pass


# -- sampling -------------------------------------------------------------------

@dataclass(frozen=True)
class DipoleSample:
    offset: tuple           # nm, from the host centre
    orientation: tuple
    sample_index: int
    seed: int

    def to_dict(self):
        return {"offset": list(self.offset), "orientation": list(self.orientation),
                "sample_index": self.sample_index, "seed": self.seed}


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def _direction(rng) -> np.ndarray:
    while True:
        v = rng.standard_normal(3)
        n = np.linalg.norm(v)
        if n > 1e-12:
            return v / n


def sample_dipole(seed: int, index: int, D: float, shell: float = SHELL) -> DipoleSample:
    """Uniform position in the ball of radius D/2 - shell and uniform orientation."""
    rmax = D / 2 - shell
    if not rmax > 0:
        raise ValueError(f"diameter {D} leaves no interior after a {shell} nm shell")
    rng = sample_rng(seed, index)
    r = rmax * rng.random() ** (1.0 / 3.0)
    off = r * _direction(rng)
    d = _direction(rng)
    return DipoleSample(tuple(off), tuple(d), int(index), int(seed))


def sample_dipole_in(host, seed: int, index: int, shell: float = SHELL,
                     max_tries: int = 100_000) -> DipoleSample:
    """Uniform position inside ``host`` at least ``shell`` from its surface.

    Spheres use the exact inverse transform; other shapes use rejection from
    the enclosing ball.
    """
    if isinstance(host, Sphere):
        return sample_dipole(seed, index, 2 * host.radius, shell)
    rng = sample_rng(seed, index)
    R = host_radius(host)
    c = np.array(host.center)
    for _ in range(max_tries):
        off = R * rng.random() ** (1.0 / 3.0) * _direction(rng)
        p = c + off
        if bool(host_inset_contains(host, p[0], p[1], p[2], shell)):
            d = _direction(rng)
            return DipoleSample(tuple(off), tuple(d), int(index), int(seed))
    raise ValueError("host interior too small for the requested shell")


# -- distributions --------------------------------------------------------------

@dataclass(frozen=True)
class SiteWeights:
    f_T: float = 0.10
    f_I: float = 0.65
    f_R: float = 0.25

    def __post_init__(self):
        if min(self.f_T, self.f_I, self.f_R) < 0:
            raise ValueError("site weights must be nonnegative")
        if abs(self.f_T + self.f_I + self.f_R - 1.0) > 1e-9:
            raise ValueError(f"site weights sum to {self.f_T + self.f_I + self.f_R}, not 1")

    def as_tuple(self):
        return (self.f_T, self.f_I, self.f_R)


@dataclass(frozen=True)
class Stats:
    mean: float
    sem: float
    dtau: float          # 75th minus 25th percentile
    w: float
    edges: np.ndarray
    counts: np.ndarray


def _histogram(x: np.ndarray, bins):
    if isinstance(bins, (int, np.integer)):
        lo, hi = float(x.min()), float(x.max())
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, int(bins) + 1)
    elif isinstance(bins, float):
        lo = math.floor(x.min() / bins) * bins
        hi = max(lo + bins, math.ceil(x.max() / bins) * bins)
        if hi <= x.max():
            hi += bins
        edges = np.arange(lo, hi + bins / 2, bins)
    else:
        edges = np.asarray(bins, float)
    counts, edges = np.histogram(x, edges)
    return edges, counts


def stats(samples, bins=20) -> Stats:
    """Mean, standard error, central-50% width and relative width of a sample set.

    ``bins`` is a bin count, a float bin width, or explicit edges.
    """
    x = np.asarray(getattr(samples, "samples", samples), float)
    if x.size == 0:
        raise ValueError("no samples")
    m = float(np.mean(x))
    sem = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
    q25, q75 = np.percentile(x, [25, 75], method=PERCENTILE_METHOD)
    dtau = float(q75 - q25)
    edges, counts = _histogram(x, bins)
    return Stats(m, sem, dtau, dtau / m if m != 0 else float("nan"), edges, counts)


@dataclass
class LifetimeDistribution:
    """Samples in relative-rate units (``unit="rate"``) or lifetimes (``unit="ns"``)."""
    samples: np.ndarray
    unit: str = "rate"
    scenario: str = ""
    N: int = 0
    seed: int | None = None
    scale_factor: float | None = None
    failed: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, float)
        if self.unit not in ("rate", "ns"):
            raise ValueError("unit must be 'rate' or 'ns'")
        if not self.N:
            self.N = int(self.samples.size)

    @property
    def tau_mean(self):
        return stats(self).mean

    def stats(self, bins=20) -> Stats:
        return stats(self, bins)

    def to_dict(self, bins=20) -> dict:
        s = stats(self, bins)
        d = {"scenario": self.scenario, "N": self.N, "seed": self.seed, "unit": self.unit,
             "samples": [float(v) for v in self.samples], "tau_mean": s.mean, "sem": s.sem,
             "dtau": s.dtau, "w": s.w, "percentile_method": PERCENTILE_METHOD,
             "failed": list(self.failed)}
        if self.scale_factor is not None:
            d["scale_factor"] = self.scale_factor
        if self.meta:
            d["meta"] = self.meta
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d) -> "LifetimeDistribution":
        return cls(np.array(d["samples"], float), d.get("unit", "rate"), d.get("scenario", ""),
                   d.get("N", 0), d.get("seed"), d.get("scale_factor"), d.get("failed", []),
                   d.get("meta", {}))

    def histogram_rows(self, bins=20):
        s = stats(self, bins)
        return [(float(lo), float(hi), int(c)) for lo, hi, c in zip(s.edges[:-1], s.edges[1:], s.counts)]

    def write_histogram_csv(self, path, bins=20):
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count"])
            w.writerows(self.histogram_rows(bins))


def to_lifetimes(dist: LifetimeDistribution, tau_b: float = TAU_BULK) -> LifetimeDistribution:
    """Convert relative rates to lifetimes tau_b / R; nonpositive rates are dropped and reported."""
    if dist.unit != "rate":
        raise ValueError("distribution is already in lifetime units")
    ok = dist.samples > 0
    dropped = [int(i) for i in np.nonzero(~ok)[0]]
    if dropped:
        log.warning("%d nonpositive rate samples excluded", len(dropped))
    meta = dict(dist.meta, tau_b=tau_b)
    if dropped:
        meta["excluded_nonpositive"] = dropped
    return LifetimeDistribution(tau_b / dist.samples[ok], "ns", dist.scenario, dist.N, dist.seed,
                                dist.scale_factor, list(dist.failed), meta)


def _lifetimes(dist, tau_b):
    return dist.samples if dist.unit == "ns" else tau_b / dist.samples


def apply_scale(dist: LifetimeDistribution, k: float) -> LifetimeDistribution:
    """Multiply rates by k (equivalently divide lifetimes by k)."""
    if not k > 0:
        raise ValueError("scale factor must be positive")
    x = dist.samples * k if dist.unit == "rate" else dist.samples / k
    return LifetimeDistribution(x, dist.unit, dist.scenario, dist.N, dist.seed, k,
                                list(dist.failed), dict(dist.meta))


def rescale(dist: LifetimeDistribution, target: float = 25.4,
            tau_b: float = TAU_BULK) -> tuple[LifetimeDistribution, float]:
    """Scale so the mean lifetime equals ``target`` ns.

    Returns the scaled distribution and k. The alternative reading, matching
    the mean rate to 1/target, is stored as ``meta["k_mean_rate"]``.
    """
    if not target > 0:
        raise ValueError("target lifetime must be positive")
    if dist.samples.size == 0:
        raise ValueError("empty distribution")
    tau = _lifetimes(dist, tau_b)
    k = float(np.mean(tau)) / target
    k_rate = 1.0 / (target * float(np.mean(1.0 / tau)))
    out = apply_scale(dist, k)
    out.meta.update(k_mean_lifetime=k, k_mean_rate=k_rate, rescale_target=target)
    return out, k


def mix(dists, weights: SiteWeights, N_out: int, seed: int) -> LifetimeDistribution:
    """Stratified resample of (top, interstitial, remaining) site distributions.

    Stratum sizes are the largest-remainder rounding of ``weights * N_out``.
    """
    if isinstance(dists, dict):
        dists = [dists["top"], dists["interstitial"], dists["remaining"]]
    if len(dists) != 3:
        raise ValueError("need three site distributions (top, interstitial, remaining)")
    if not isinstance(weights, SiteWeights):
        weights = SiteWeights(*weights)
    units = {d.unit for d in dists}
    if len(units) != 1:
        raise ValueError("site distributions must share a unit")
    f = np.array(weights.as_tuple())
    raw = f * N_out
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: N_out - counts.sum()]:
        counts[i] += 1
    parts = []
    for j, (d, n) in enumerate(zip(dists, counts)):
        if n == 0:
            continue
        if d.samples.size == 0:
            raise ValueError("empty site distribution with nonzero weight")
        rng = sample_rng(seed, j)
        if n == d.samples.size and weights.as_tuple()[j] == 1.0:
            parts.append(d.samples.copy())
        else:
            parts.append(d.samples[rng.integers(0, d.samples.size, n)])
    x = np.concatenate(parts)
    meta = {"weights": list(weights.as_tuple()), "strata": [int(c) for c in counts],
            "sources": [d.scenario for d in dists]}
    return LifetimeDistribution(x, dists[0].unit, "mixture", int(N_out), seed,
                                dists[0].scale_factor, [], meta)


# -- campaigns ------------------------------------------------------------------

def evaluate_sample(scene: DielectricScene, sample: DipoleSample, cfg: SolverConfig, grid=None,
                    bulk: str = "compact") -> SimulationResult:
    pos = tuple(np.asarray(scene.nanodiamond.center) + np.asarray(sample.offset))
    return relative_rate(scene, DipoleSource(pos, sample.orientation), cfg, bulk=bulk, grid=grid)


def _solve_one(scene, grid, sample_args, cfg, bulk, evaluate):
    seed, i, shell = sample_args
    s = sample_dipole_in(scene.nanodiamond, seed, i, shell)
    t0 = time.time()
    try:
        res = evaluate(scene, s, cfg, grid=grid, bulk=bulk)
        return {"status": "done", "sample": s.to_dict(), "result": res.to_dict(),
                "wall_time": time.time() - t0}
    except SolverError as exc:
        log.warning("sample %d failed: %s", i, exc)
        return {"status": "failed", "sample": s.to_dict(),
                "error": f"{type(exc).__name__}: {exc}", "wall_time": time.time() - t0}


_WORKER: dict = {}


def _worker_init(scenario, geometry, cfg, bulk):
    scene = build_scene(scenario, geometry)
    _WORKER.update(scene=scene, grid=voxelize(scene, cfg.dx, pad=cfg.pml_cells), cfg=cfg, bulk=bulk)


def _worker_run(args):
    w = _WORKER
    return args[1], _solve_one(w["scene"], w["grid"], args, w["cfg"], w["bulk"], evaluate_sample)


def run_campaign(scenario: str, N: int, seed: int, cfg: SolverConfig, geometry: dict | None = None,
                 cache=None, bulk: str = "compact", shell: float = SHELL,
                 evaluate=None, workers: int = 1) -> LifetimeDistribution:
    """N relative-rate evaluations, one per sample index 0..N-1.

    ``cache`` is any object with ``get(index) -> dict | None`` and
    ``put(index, record)``; cached indices are not recomputed. ``evaluate``
    replaces the solver (signature of :func:`evaluate_sample`). With
    ``workers > 1`` missing samples are solved in a process pool; records are
    keyed by index, so the result does not depend on completion order.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    scene = build_scene(scenario, geometry)
    records = {}
    todo = []
    for i in range(N):
        rec = cache.get(i) if cache is not None else None
        if rec is None:
            todo.append(i)
        else:
            records[i] = rec

    def store(i, rec):
        records[i] = rec
        if cache is not None:
            cache.put(i, rec)
        log.info("%s sample %d/%d: %s", scenario, i + 1, N,
                 rec["result"]["R"] if rec["status"] == "done" else rec["status"])

    if todo and workers > 1 and evaluate is None:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers, initializer=_worker_init,
                                 initargs=(scenario, geometry, cfg, bulk)) as ex:
            for i, rec in ex.map(_worker_run, [(seed, i, shell) for i in todo]):
                store(i, rec)
    elif todo:
        grid = None
        if evaluate is None:
            evaluate = evaluate_sample
            grid = voxelize(scene, cfg.dx, pad=cfg.pml_cells)
        for i in todo:
            store(i, _solve_one(scene, grid, (seed, i, shell), cfg, bulk, evaluate))
    return assemble(scenario, N, seed, records)


def assemble(scenario: str, N: int, seed: int, records: dict) -> LifetimeDistribution:
    """Build a rate distribution from per-sample records, ordered by index."""
    rates, failed = [], []
    for i in sorted(records):
        rec = records[i]
        if rec["status"] == "done":
            rates.append(rec["result"]["R"])
        else:
            failed.append({"index": i, "error": rec.get("error", "")})
    if len(failed) > MAX_FAILED_FRACTION * N:
        raise CampaignFailed(f"{len(failed)} of {N} samples failed in {scenario}")
    return LifetimeDistribution(np.array(rates), "rate", scenario, N, seed, None, failed,
                                {"succeeded": len(rates)})
