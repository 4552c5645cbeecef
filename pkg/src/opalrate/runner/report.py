"""Figure-ready CSV tables and a plain-text summary."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..analysis import ks_two_sample
from ..ensemble import (LifetimeDistribution, SiteWeights, apply_scale, mix, rescale,
                        sample_dipole_in, stats, to_lifetimes)
from ..oracles import (InterfaceQuery, NaiveModelParams, SphereQuery, chew_rate,
                       composite_coverslip_model, interface_rate, naive_lifetime,
                       small_sphere_ratio)
from ..scene import build_scene
from .cache import atomic_write
from .config import ScenarioConfig, load_config

SITES = ("opal-top", "opal-interstitial", "opal-intermediate")


def _write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else (f"{v:.10g}" if isinstance(v, float) else v) for v in r])
    return path


# -- analytic tables -------------------------------------------------------------

def fig1_rows(z_max=600.0, step=5.0):
    rows = []
    for z in np.arange(0.0, z_max + step / 2, step):
        row = [float(z)]
        for n2 in (1.45, 2.4):
            for o in ("parallel", "perpendicular"):
                row.append(interface_rate(InterfaceQuery(float(z), 1.0, n2, o)))
        rows.append(row)
    return rows


def fig2_rows(n_points=51, indices=(1.33, 1.45, 1.59, 2.4)):
    f = np.linspace(0.0, 1.0, n_points)
    return [[float(x)] + [naive_lifetime(NaiveModelParams(float(x), n)) for n in indices] for x in f]


def fig7_rows(fdtd=None, r_frac=0.6, sizes=None):
    """Analytic sphere curves over 2a/lambda with FDTD points merged in where present."""
    fd = {}
    for row in fdtd or []:
        fd[(round(row["a"], 6), row["orientation"])] = row["fdtd"]
    radii = sorted(set(np.round(np.linspace(5.0, 170.0, 67), 6)) | {a for a, _ in fd})
    if sizes is not None:
        radii = sizes
    rows = []
    for a in radii:
        rad = chew_rate(SphereQuery(a, 2.4, 1.0, r_frac * a, "radial"))
        tan = chew_rate(SphereQuery(a, 2.4, 1.0, r_frac * a, "tangential"))
        rows.append([2 * a / 680.0, rad, tan, fd.get((round(a, 6), "radial")),
                     fd.get((round(a, 6), "tangential"))])
    return rows


def oracle_tables(out) -> list[Path]:
    out = Path(out)
    paths = [
        _write_csv(out / "fig1_interface.csv",
                   ["z", "rate_parallel_145", "rate_perp_145", "rate_parallel_24", "rate_perp_24"],
                   fig1_rows()),
        _write_csv(out / "fig2_naive.csv",
                   ["f", "tau_n133", "tau_n145", "tau_n159", "tau_n240"], fig2_rows()),
        _write_csv(out / "fig7_sphere.csv",
                   ["size_parameter", "rate_radial", "rate_tangential", "fdtd_radial",
                    "fdtd_tangential"], fig7_rows()),
    ]
    txt = (f"small-sphere suppression for n = 2.4\n"
           f"  prefactor 1/n   : {small_sphere_ratio(2.4, 'index'):.5f}  (adopted)\n"
           f"  prefactor 1/eps : {small_sphere_ratio(2.4, 'permittivity'):.5f}\n"
           f"  a -> 0 limit of the multipole solution: "
           f"{chew_rate(SphereQuery(1.0, 2.4, 1.0, 0.0, 'radial')):.5f}\n")
    p = out / "small_sphere_prefactor.txt"
    atomic_write(p, txt)
    paths.append(p)
    return paths


def validation_tables(out, results) -> list[Path]:
    out = Path(out)
    paths = []
    if "sphere" in results:
        sweep = results["sphere"]["sweep"]
        sizes = sorted({r["a"] for r in sweep})
        paths.append(_write_csv(out / "fig7_fdtd.csv",
                                ["size_parameter", "rate_radial", "rate_tangential", "fdtd_radial",
                                 "fdtd_tangential"], fig7_rows(sweep, sizes=sizes)))
    if "interface" in results:
        rows = [[r["z"], r["n2"], r["orientation"], r["fdtd"], r["model"], r["rel_dev"]]
                for r in results["interface"]]
        paths.append(_write_csv(out / "fig1_fdtd.csv",
                                ["z", "n2", "orientation", "fdtd", "model", "rel_dev"], rows))
    if "homogeneous" in results:
        rows = [[r["orientation"], r["ratio"], r["flux_over_work_1"], r["flux_over_work_24"]]
                for r in results["homogeneous"]]
        paths.append(_write_csv(out / "homogeneous.csv",
                                ["orientation", "ratio_24_over_1", "flux_over_work_n1",
                                 "flux_over_work_n24"], rows))
    if "probe" in results:
        rows = []
        for case, rec in results["probe"].items():
            for r in rec["rows"]:
                rows.append([case, r["dx"], r["R"], r["rel_change"], r["cells"]])
        paths.append(_write_csv(out / "convergence_probe.csv",
                                ["case", "dx", "R", "rel_change", "cells"], rows))
    return paths


# -- campaign tables ---------------------------------------------------------------

def run_label(cfg: ScenarioConfig) -> str:
    """Preset name, with the aspect ratio appended for ellipsoids."""
    if cfg.preset == "shape-study:ellipsoid" or (
            cfg.preset == "shape-study" and cfg.geometry["shape"] == "ellipsoid"):
        return f"shape-study:ellipsoid-{cfg.geometry['eta']:g}"
    if cfg.preset == "shape-study":
        return f"shape-study:{cfg.geometry['shape']}"
    return cfg.preset


def _find_runs(out: Path, configs) -> dict:
    """Map run label -> (config, distribution) for the runs to tabulate."""
    found = {}
    if configs:
        for c in configs:
            cfg = c if isinstance(c, ScenarioConfig) else load_config(c)
            p = out / "runs" / cfg.run_id / "distribution.json"
            if not p.exists():
                raise FileNotFoundError(f"missing {p} (run `opalrate campaign` for {cfg.preset})")
            found[run_label(cfg)] = (cfg, LifetimeDistribution.from_dict(json.loads(p.read_text())))
        return found
    runs = sorted((out / "runs").glob("*/distribution.json")) if (out / "runs").exists() else []
    if not runs:
        raise FileNotFoundError(
            f"no campaign outputs in {out}: expected runs/<preset>-<hash>/distribution.json and "
            f"config.yaml for coverslip, {', '.join(SITES)}")
    for p in runs:
        cfg = load_config(p.parent / "config.yaml")
        d = LifetimeDistribution.from_dict(json.loads(p.read_text()))
        key = run_label(cfg)
        if key not in found or cfg.N > found[key][0].N:
            found[key] = (cfg, d)
    return found


def _hist_rows(x, edges):
    counts, _ = np.histogram(x, edges)
    return counts


def _common_edges(arrays, bins):
    lo = min(float(np.min(a)) for a in arrays)
    hi = max(float(np.max(a)) for a in arrays)
    if hi == lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, bins + 1)


def suite_summary(found: dict) -> dict:
    """Rescale factor, per-site and mixture lifetimes and KS results."""
    if "coverslip" not in found:
        raise FileNotFoundError("coverslip campaign output required")
    cov_cfg, cov = found["coverslip"]
    tau_b, target = cov_cfg.tau_bulk, cov_cfg.rescale_target
    cov_scaled, k = rescale(cov, target, tau_b)
    res = {"k": k, "k_mean_rate": cov_scaled.meta["k_mean_rate"], "tau_bulk": tau_b,
           "target": target}
    s = stats(cov)
    res["coverslip"] = {"mean_rate": s.mean, "sem_rate": s.sem, "dgamma": s.dtau, "w_rate": s.w,
                        "tau_unscaled": stats(to_lifetimes(cov, tau_b)).mean,
                        "tau_scaled": stats(to_lifetimes(cov_scaled, tau_b)).mean, "N": cov.N}
    if all(p in found for p in SITES):
        site_tau = {}
        for p in SITES:
            d = apply_scale(found[p][1], k)
            t = to_lifetimes(d, tau_b)
            st = stats(t)
            site_tau[p] = t
            res[p] = {"tau_mean": st.mean, "sem": st.sem, "dtau": st.dtau, "w": st.w,
                      "mean_rate_unscaled": stats(found[p][1]).mean, "N": found[p][1].N}
        weights = cov_cfg.weights
        n_out = max(1000, sum(found[p][1].samples.size for p in SITES))
        m = mix({"top": site_tau["opal-top"], "interstitial": site_tau["opal-interstitial"],
                 "remaining": site_tau["opal-intermediate"]}, weights, n_out, cov_cfg.seed)
        sm = stats(m)
        res["mixture"] = {"tau_mean": sm.mean, "sem": sm.sem, "dtau": sm.dtau, "w": sm.w,
                          "N": n_out, "weights": list(weights.as_tuple()),
                          "exact_weighted_mean": float(sum(
                              f * stats(site_tau[p]).mean
                              for f, p in zip(weights.as_tuple(),
                                              ("opal-top", "opal-interstitial", "opal-intermediate"))))}
        cov_tau = to_lifetimes(cov_scaled, tau_b)
        res["ratio_interstitial_over_top"] = (res["opal-interstitial"]["tau_mean"]
                                              / res["opal-top"]["tau_mean"])
        res["ratio_coverslip_over_mixture"] = stats(cov_tau).mean / sm.mean
        D, p = ks_two_sample(cov_tau.samples, m.samples)
        res["ks_coverslip_vs_mixture"] = {"D": D, "p": p}
        res["_mixture"] = m
        res["_sites"] = site_tau
    res["_coverslip_scaled"] = cov_scaled
    shapes = {p: found[p][1] for p in sorted(found) if p.startswith("shape-study:")}
    if shapes:
        res["shapes"] = {}
        for p, d in shapes.items():
            st = stats(d)
            res["shapes"][p.split(":", 1)[1]] = {"mean_rate": st.mean, "sem": st.sem, "dgamma": st.dtau,
                                    "w": st.w, "N": d.N}
    return res


def campaign_report(out, configs=()) -> list[Path]:
    out = Path(out)
    found = _find_runs(out, configs)
    res = suite_summary(found)
    cov_cfg, cov = found["coverslip"]
    bins = cov_cfg.histogram_bins
    tdir = out / "tables"
    paths = []

    # coverslip rates: solver vs local-field point-dipole model on the same samples
    scene = build_scene("coverslip", cov_cfg.geometry)
    samples = [sample_dipole_in(scene.nanodiamond, cov.seed, i, cov_cfg.shell)
               for i in range(cov.N)]
    comp = composite_coverslip_model(samples, rest_height=cov_cfg.geometry["D"] / 2,
                                     n_glass=cov_cfg.geometry["n_glass"],
                                     n_diamond=cov_cfg.geometry["n_diamond"],
                                     wavelength=cov_cfg.solver.wavelength)
    res["coverslip"]["composite_mean_rate"] = float(np.mean(comp))
    edges = _common_edges([cov.samples, comp], bins)
    c1, c2 = _hist_rows(cov.samples, edges), _hist_rows(comp, edges)
    paths.append(_write_csv(tdir / "fig8a_coverslip_rates.csv",
                            ["bin_lo", "bin_hi", "fdtd_count", "composite_count"],
                            [[float(a), float(b), int(x), int(y)]
                             for a, b, x, y in zip(edges[:-1], edges[1:], c1, c2)]))
    tau_cov = to_lifetimes(res["_coverslip_scaled"], cov_cfg.tau_bulk)
    paths.append(_write_csv(tdir / "fig8b_coverslip_lifetimes.csv", ["bin_lo", "bin_hi", "count"],
                            tau_cov.histogram_rows(bins)))
    if "_sites" in res:
        for tag, p in (("a_interstitial", "opal-interstitial"), ("b_top", "opal-top"),
                       ("c_intermediate", "opal-intermediate")):
            paths.append(_write_csv(tdir / f"fig9{tag}.csv", ["bin_lo", "bin_hi", "count"],
                                    res["_sites"][p].histogram_rows(bins)))
        paths.append(_write_csv(tdir / "fig9d_weighted.csv", ["bin_lo", "bin_hi", "count"],
                                res["_mixture"].histogram_rows(bins)))
    if "shapes" in res:
        rows = [[k, v["mean_rate"], v["sem"], v["dgamma"], v["w"], v["N"]]
                for k, v in res["shapes"].items()]
        paths.append(_write_csv(tdir / "fig10_shapes.csv",
                                ["shape", "mean_rate", "sem", "dgamma", "w", "N"], rows))
        for p, (cfg, d) in found.items():
            if p.startswith("shape-study:"):
                name = p.split(":", 1)[1]
                paths.append(_write_csv(tdir / f"fig10_{name}.csv", ["bin_lo", "bin_hi", "count"],
                                        d.histogram_rows(bins)))
    public = {k: v for k, v in res.items() if not k.startswith("_")}
    atomic_write(tdir / "summary.json", json.dumps(public, indent=1, default=float))
    paths.append(tdir / "summary.json")
    atomic_write(tdir / "summary.txt", summary_text(public))
    paths.append(tdir / "summary.txt")
    return paths


def summary_text(res: dict) -> str:
    c = res["coverslip"]
    lines = [
        "Coverslip",
        f"  mean relative rate {c['mean_rate']:.4f} +/- {c['sem_rate']:.4f} (N={c['N']}), "
        f"central-50% range {c['dgamma']:.4f}",
        f"  unscaled mean lifetime {c['tau_unscaled']:.1f} ns",
        f"  rescale factor k = {res['k']:.4f} (mean-lifetime reading; mean-rate reading "
        f"{res['k_mean_rate']:.4f}) to {res['target']} ns",
    ]
    if "composite_mean_rate" in c:
        lines.append(f"  local-field point-dipole model mean rate {c['composite_mean_rate']:.4f}")
    for p in SITES:
        if p in res:
            r = res[p]
            lines.append(f"{p}: tau = {r['tau_mean']:.2f} +/- {r['sem']:.2f} ns, "
                         f"dtau = {r['dtau']:.2f} ns, w = {r['w']:.3f} (N={r['N']})")
    if "mixture" in res:
        m = res["mixture"]
        lines += [
            f"weighted mixture {m['weights']}: tau = {m['tau_mean']:.2f} ns "
            f"(exact weighted mean {m['exact_weighted_mean']:.2f}), dtau = {m['dtau']:.2f}, "
            f"w = {m['w']:.3f}",
            f"interstitial / top mean lifetime = {res['ratio_interstitial_over_top']:.3f}",
            f"coverslip / mixture mean lifetime = {res['ratio_coverslip_over_mixture']:.3f}",
            f"KS coverslip vs mixture: D = {res['ks_coverslip_vs_mixture']['D']:.3f}, "
            f"p = {res['ks_coverslip_vs_mixture']['p']:.3g}",
        ]
    for k, v in res.get("shapes", {}).items():
        lines.append(f"shape {k}: mean rate {v['mean_rate']:.4f} +/- {v['sem']:.4f}, "
                     f"dgamma {v['dgamma']:.4f}, w {v['w']:.3f} (N={v['N']})")
    return "\n".join(lines) + "\n"
