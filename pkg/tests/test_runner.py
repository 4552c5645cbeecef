import json
import math

import numpy as np
import pytest

from opalrate.ensemble import stats
from opalrate.runner import cli
from opalrate.runner.cache import SampleCache, atomic_write
from opalrate.runner.campaign import run_scenario
from opalrate.runner.config import ConfigError, from_dict, parse_config, serialize_config
from opalrate.runner.report import run_label

# a cheap coverslip campaign: 10 nm grid, short warm-up
CHEAP = """
preset: coverslip
solver: {dx: 10.0, warmup_cycles: 4, measure_cycles: 4}
ensemble: {N: %d, seed: %d}
"""


# -- configuration ----------------------------------------------------------------------

def test_defaults():
    cfg = parse_config("")
    assert cfg.preset == "coverslip" and cfg.N == 100 and cfg.solver.dx == 5.0
    assert cfg.weights.as_tuple() == (0.10, 0.65, 0.25)
    assert cfg.rescale_target == 25.4 and cfg.tau_bulk == 11.6


def test_round_trip():
    cfg = parse_config(CHEAP % (8, 3))
    back = parse_config(serialize_config(cfg))
    assert back == cfg and back.hash() == cfg.hash()


def test_hash_ignores_key_order_and_explicit_defaults():
    a = parse_config("preset: opal-top\nensemble: {N: 10, seed: 4}\n")
    b = parse_config("ensemble:\n  seed: 4\n  N: 10\n  shell: 5.0\npreset: opal-top\n")
    assert a.hash() == b.hash() and a.sample_key(3) == b.sample_key(3)
    c = parse_config("preset: opal-top\nensemble: {N: 10, seed: 5}\n")
    assert c.sample_key(3) != a.sample_key(3)


def test_sample_key_ignores_bookkeeping():
    a = parse_config("ensemble: {N: 10}\noutput_dir: x\n")
    b = parse_config("ensemble: {N: 20}\noutput_dir: y\nhistogram_bins: 7\n")
    assert a.sample_key(0) == b.sample_key(0) and a.hash() != b.hash()


@pytest.mark.parametrize("text,msg", [
    ("presett: coverslip\n", "unknown key 'presett'"),
    ("solver: {dxx: 5}\n", "unknown key 'solver.dxx'"),
    ("weights: {f_T: 0.5, f_I: 0.5, f_R: 0.5}\n", "weights"),
    ("ensemble: {N: 0}\n", "N"),
    ("geometry: {under_pocket: 1}\n", "under_pocket"),
    ("geometry: {opal_max_spheres: 0}\n", "opal_max_spheres"),
    ("solver: {courant: 0.9}\n", "Courant"),
    ("solver: {dx: 7.0}\n", "does not divide"),
    ("preset: opal-bottom\n", "unknown preset"),
    ("preset: shape-study:torus\n", "unknown shape"),
    ("ensemble: {seed: 1.5}\n", "integer"),
    ("solver: {dx: 10.0, flux_margin: 15.0}\n", "whole number"),
])
def test_invalid_configs(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


def test_parse_error_location():
    with pytest.raises(ConfigError, match=r"line 4, column 3"):
        parse_config("preset: coverslip\nsolver:\n  dx: 5\n  ]\n")


def test_default_flux_margin_follows_grid():
    assert parse_config("").solver.flux_margin == 15.0
    assert parse_config("solver: {dx: 10.0}\n").solver.flux_margin == 20.0


def test_top_level_must_be_mapping():
    with pytest.raises(ConfigError):
        from_dict([1, 2])


def test_run_labels():
    assert run_label(parse_config("preset: opal-top\n")) == "opal-top"
    e = parse_config("preset: shape-study:ellipsoid\ngeometry: {eta: 1.4}\n")
    assert run_label(e) == "shape-study:ellipsoid-1.4"
    assert run_label(parse_config("preset: shape-study:cube\n")) == "shape-study:cube"


# -- cache ----------------------------------------------------------------------------------

def test_atomic_write_once(tmp_path):
    p = tmp_path / "a" / "b.json"
    assert atomic_write(p, "one", overwrite=False)
    assert not atomic_write(p, "two", overwrite=False)
    assert p.read_text() == "one"
    assert not list(p.parent.glob(".tmp-*"))


def test_sample_cache(tmp_path):
    c = SampleCache(tmp_path, lambda i: f"{i:064d}")
    assert c.get(3) is None
    c.put(3, {"R": 0.1})
    c.put(3, {"R": 0.2})
    assert c.get(3)["R"] == 0.1 and c.writes == 1


# -- campaigns ------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def cheap_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("campaign")
    cfg = parse_config(CHEAP % (8, 11))
    return cfg, out, run_scenario(cfg, out)


def test_campaign_outputs(cheap_run):
    cfg, out, res = cheap_run
    run = out / "runs" / cfg.run_id
    for name in ("config.yaml", "distribution.json", "lifetimes.json", "histogram.csv",
                 "summary.json"):
        assert (run / name).exists()
    man = json.loads((out / "manifest.json").read_text())
    entry = man["runs"][cfg.run_id]
    assert entry["computed"] == 8 and entry["config_hash"] == cfg.hash()
    assert set(man["versions"]) >= {"opalrate", "numpy", "scipy", "numba", "python"}
    assert parse_config((run / "config.yaml").read_text()) == cfg


def test_campaign_resume_identical(cheap_run):
    cfg, out, first = cheap_run
    files = sorted((out / "cache").rglob("*.json"))
    for p in files[::2]:
        p.unlink()
    res = run_scenario(cfg, out)
    assert res["manifest"]["computed"] == len(files[::2])
    assert res["manifest"]["cache_hits"] == 8 - len(files[::2])
    assert np.array_equal(res["distribution"].samples, first["distribution"].samples)


def test_outputs_never_overwritten(cheap_run):
    cfg, out, _ = cheap_run
    p = out / "runs" / cfg.run_id / "summary.json"
    p.write_text("sentinel")
    run_scenario(cfg, out)
    assert p.read_text() == "sentinel"


def test_seeds_agree_within_sem(cheap_run, tmp_path):
    _, _, a = cheap_run
    b = run_scenario(parse_config(CHEAP % (8, 12)), tmp_path)
    sa, sb = stats(a["distribution"]), stats(b["distribution"])
    assert abs(sa.mean - sb.mean) <= 3 * math.hypot(sa.sem, sb.sem)
    assert not np.array_equal(a["distribution"].samples, b["distribution"].samples)


# -- command line ---------------------------------------------------------------------------

def test_cli_validate_oracle_tables(tmp_path, capsys):
    assert cli.main(["validate", "--output", str(tmp_path)]) == 0
    printed = capsys.readouterr().out.split()
    assert printed and all(p.startswith(str(tmp_path)) for p in printed)
    rows = (tmp_path / "fig1_interface.csv").read_text().splitlines()
    assert len(rows) > 100
    assert "0.06" in (tmp_path / "small_sphere_prefactor.txt").read_text()


def test_cli_report_empty_dir(tmp_path, capsys):
    assert cli.main(["report", str(tmp_path)]) == 2
    assert "no campaign outputs" in capsys.readouterr().err


def test_cli_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("presett: x\n")
    assert cli.main(["run", "--config", str(p)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_cli_run_and_campaign(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text(CHEAP % (2, 5) + f"output_dir: {tmp_path / 'out'}\n")
    assert cli.main(["run", "--config", str(p), "--offset", "3", "-2", "4",
                     "--orientation", "1", "1", "0"]) == 0
    r = json.loads(capsys.readouterr().out)
    assert 0 < r["R"] < 1
    assert cli.main(["campaign", str(p)]) == 0
    assert "coverslip: N=2" in capsys.readouterr().out


def test_cli_analyze(tmp_path, capsys, cheap_run):
    cfg, out, _ = cheap_run
    d = out / "runs" / cfg.run_id / "lifetimes.json"
    tau = np.linspace(-100, 100, 201)
    g2 = 1 - 0.9 * np.exp(-np.abs(tau) / 6.0)
    trace = tmp_path / "g2.csv"
    np.savetxt(trace, np.c_[tau, g2], delimiter=",", header="tau_ns,g2", comments="")
    assert cli.main(["analyze", str(d), str(d), "--g2", str(trace)]) == 0
    s = json.loads(capsys.readouterr().out)
    assert s["ks"] == {"D": 0.0, "p": 1.0}
    assert s[str(trace)]["single_emitter"]
