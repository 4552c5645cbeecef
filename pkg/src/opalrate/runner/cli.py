"""Command line: ``opalrate {validate,run,campaign,analyze,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..ensemble import LifetimeDistribution, stats
from ..fdtd import DipoleSource, SolverError, relative_rate, unit
from ..scene import build_scene
from .config import ConfigError, load_config, parse_config

log = logging.getLogger("opalrate")


def _load(path):
    if path is None:
        return parse_config("")
    return load_config(path)


def cmd_validate(args) -> int:
    from . import report, validation
    out = Path(args.output)
    paths = report.oracle_tables(out)
    for p in paths:
        print(p)
    if args.fdtd:
        cfg = _load(args.config)
        results = validation.run_all(cfg, out, which=args.fdtd)
        for p in report.validation_tables(out, results):
            print(p)
    return 0


def cmd_run(args) -> int:
    cfg = _load(args.config)
    scene = build_scene(cfg.preset, cfg.geometry)
    pos = np.asarray(scene.nanodiamond.center) + np.asarray(args.offset, float)
    src = DipoleSource(tuple(pos), unit(args.orientation))
    res = relative_rate(scene, src, cfg.solver, bulk=cfg.bulk_reference)
    print(json.dumps(res.to_dict(), indent=1))
    return 0


def cmd_campaign(args) -> int:
    from .campaign import run_scenario
    status = 0
    for path in args.config:
        cfg = load_config(path)
        try:
            out = run_scenario(cfg, args.output, workers=args.workers)
        except Exception as exc:                      # reported per config, exit code carries it
            log.error("campaign %s failed: %s", path, exc)
            status = 1
            continue
        m = out["manifest"]
        s = stats(out["distribution"])
        print(f"{cfg.preset}: N={cfg.N} mean R={s.mean:.5f} sem={s.sem:.5f} "
              f"dR={s.dtau:.5f} w={s.w:.3f} computed={m['computed']} cached={m['cache_hits']}")
        print(f"  -> {out['paths']['distribution']}")
    return status


def cmd_analyze(args) -> int:
    from ..analysis import fit_g2, ks_two_sample
    summary = {}
    dists = []
    for p in args.distributions:
        with open(p) as fh:
            d = LifetimeDistribution.from_dict(json.load(fh))
        dists.append(d)
        s = stats(d)
        summary[str(p)] = {"tau_mean": s.mean, "sem": s.sem, "dtau": s.dtau, "w": s.w}
    if len(dists) == 2:
        D, p = ks_two_sample(dists[0].samples, dists[1].samples)
        summary["ks"] = {"D": D, "p": p}
    for p in args.g2 or []:
        data = np.genfromtxt(p, delimiter=",", names=True)
        fit = fit_g2(data["tau_ns"], data["g2"])
        summary[str(p)] = {"a": fit.params.a, "tau1": fit.params.tau1, "tau2": fit.params.tau2,
                           "c": fit.params.c, "rms": fit.rms, "g2_zero": fit.g2_zero,
                           "single_emitter": fit.single_emitter}
    text = json.dumps(summary, indent=1)
    if args.output:
        Path(args.output).write_text(text)
    print(text)
    return 0


def cmd_report(args) -> int:
    from . import report
    paths = report.campaign_report(Path(args.output_dir), args.config)
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="opalrate", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="oracle tables and solver cross-checks")
    v.add_argument("--config", help="YAML config supplying solver settings")
    v.add_argument("--output", default="opalrate-out/validation")
    v.add_argument("--fdtd", nargs="*", choices=["homogeneous", "sphere", "interface", "probe"],
                   help="also run these FDTD cross-checks (all if no names are given)")

    r = sub.add_parser("run", help="a single relative-rate simulation")
    r.add_argument("--config")
    r.add_argument("--offset", nargs=3, type=float, default=(0.0, 0.0, 0.0),
                   help="dipole offset from the host centre, nm")
    r.add_argument("--orientation", nargs=3, type=float, default=(0.0, 0.0, 1.0))

    c = sub.add_parser("campaign", help="ensemble campaign per config file")
    c.add_argument("config", nargs="+")
    c.add_argument("--output", help="override output_dir from the config")
    c.add_argument("--workers", type=int, default=1)

    a = sub.add_parser("analyze", help="statistics, KS test and g2 fits")
    a.add_argument("distributions", nargs="*", help="distribution JSON files")
    a.add_argument("--g2", nargs="*", help="g2 trace CSVs (columns tau_ns, g2)")
    a.add_argument("--output")

    p = sub.add_parser("report", help="figure tables from campaign outputs")
    p.add_argument("output_dir")
    p.add_argument("--config", nargs="*", default=[],
                   help="campaign configs whose runs to tabulate (default: all runs found)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    handlers = {"validate": cmd_validate, "run": cmd_run, "campaign": cmd_campaign,
                "analyze": cmd_analyze, "report": cmd_report}
    try:
        return handlers[args.command](args)
    except (ConfigError, SolverError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
