import math

import numpy as np
import pytest

from opalrate.fdtd import (
    CellBudgetExceeded, DipoleSource, Simulation, SolverConfig, SolverError, bulk_power,
    compact_side, convergence_probe, grid_cells, larmor_power, radiated_power, relative_rate,
    trilinear_nodes, unit, with_dx,
)
from opalrate.scene import (
    AIR, DIAMOND, GLASS, DielectricScene, HalfSpace, Sphere, build_scene, voxelize,
)

FAST = SolverConfig(warmup_cycles=4, measure_cycles=4)
COARSE = with_dx(FAST, 10.0)


# -- configuration -----------------------------------------------------------------

def test_time_step():
    cfg = SolverConfig()
    assert cfg.steps_per_cycle == math.ceil(680 / (0.5 * 5))
    assert cfg.dt <= cfg.courant * cfg.dx
    assert cfg.dt * cfg.steps_per_cycle == pytest.approx(680.0, rel=1e-14)


@pytest.mark.parametrize("kw", [{"courant": 0.6}, {"pml_cells": 6}, {"dx": 0.0},
                                {"warmup_cycles": 30, "measure_cycles": 20}])
def test_config_preconditions(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_source_orientation_must_be_unit():
    with pytest.raises(ValueError):
        DipoleSource((0, 0, 0), (1.0, 1.0, 0.0))
    assert np.linalg.norm(DipoleSource((0, 0, 0), unit((1, 2, 3))).orientation) == pytest.approx(1)


def test_trilinear_weights_partition_unity():
    g = voxelize(build_scene("homogeneous"), 10.0, pad=10)
    for comp in range(3):
        idx, w = trilinear_nodes(g, comp, (1.3, -2.9, 4.4))
        assert w.sum() == pytest.approx(1.0, abs=1e-12) and np.all(w >= 0)
        # weights reproduce the position (first moment)
        pos = np.array([[g.node_coords(comp, a)[i[a]] for a in range(3)] for i in idx])
        assert np.allclose(w @ pos, (1.3, -2.9, 4.4), atol=1e-9)


def test_grid_guards():
    s = build_scene("coverslip")
    g = voxelize(s, 10.0, pad=8)
    with pytest.raises(SolverError):
        Simulation(g, COARSE)           # padding differs from pml_cells
    g = voxelize(s, 10.0, pad=10)
    with pytest.raises(SolverError):
        Simulation(g, FAST)             # dx mismatch
    sim = Simulation(g, COARSE)
    with pytest.raises(SolverError):
        sim.run(DipoleSource((0, 0, 170.0), (0, 0, 1)))   # outside the flux box


def test_cell_budget():
    s = build_scene("coverslip")
    small = SolverConfig(max_cells=100_000)
    with pytest.raises(CellBudgetExceeded):
        convergence_probe(s, DipoleSource((0, 0, 27), (0, 0, 1)), [5.0, 2.5], small)
    with pytest.raises(ValueError):
        convergence_probe(s, DipoleSource((0, 0, 27), (0, 0, 1)), [5.0, 5.0], FAST)
    assert grid_cells(s, 5.0, 10) == 81 ** 3


# -- uniform media -------------------------------------------------------------------

@pytest.fixture(scope="module")
def uniform_runs():
    out = {}
    src = DipoleSource((1.3, -0.7, 2.1), unit((0.48, -0.31, 0.82)))
    for n in (1.0, 2.4):
        s = build_scene("homogeneous", {"n_background": n})
        out[n] = radiated_power(voxelize(s, 5.0, pad=10), src, FAST)
    return out


def test_vacuum_flux_equals_work(uniform_runs):
    r = uniform_runs[1.0]
    assert r.converged
    assert 0.95 <= r.p_flux / r.p_work <= 1.05


def test_uniform_power_matches_larmor(uniform_runs):
    for n, r in uniform_runs.items():
        assert r.p_flux / larmor_power(n, FAST) == pytest.approx(1.0, abs=0.01)


def test_diamond_over_vacuum_is_index(uniform_runs):
    assert uniform_runs[2.4].p_flux / uniform_runs[1.0].p_flux == pytest.approx(2.4, rel=0.05)


def test_reference_identity_exact():
    s = build_scene("homogeneous")
    r = relative_rate(s, DipoleSource((2.0, 1.0, -3.0), (0, 0, 1)), COARSE, bulk="direct")
    assert r.R == 1.0


@pytest.mark.parametrize("dx", [10.0, 5.0])
def test_homogeneous_self_normalization(dx):
    s = build_scene("homogeneous")
    r = relative_rate(s, DipoleSource((2.0, 1.0, -3.0), unit((1, 1, 0))), with_dx(FAST, dx),
                      bulk="compact")
    assert r.R == pytest.approx(1.0, abs=0.02)


def test_compact_bulk_matches_direct():
    s = build_scene("coverslip")
    src = DipoleSource((3.0, -4.0, 30.0), unit((1, 0, 1)))
    g = voxelize(s, 10.0, pad=10)
    a = bulk_power(src, COARSE, 2.4, like=g, mode="direct")
    b = bulk_power(src, COARSE, 2.4, like=g, mode="compact")
    assert b.p_flux == pytest.approx(a.p_flux, rel=1e-3)
    assert compact_side(FAST) == 200.0


# -- lossless stability ----------------------------------------------------------------

def test_energy_bounded_for_forty_cycles():
    cfg = with_dx(SolverConfig(warmup_cycles=36, measure_cycles=4, max_cycles=40,
                                conv_tol=1e-12), 10.0)
    g = voxelize(build_scene("coverslip"), 10.0, pad=10)
    res = Simulation(g, cfg).run(DipoleSource((4.0, -3.0, 31.0), unit((1, 2, 2))),
                                 allow_unconverged=True, track_energy=True)
    assert res.cycles_run == 40
    u = np.array(res.energy)
    assert np.all(np.isfinite(u))
    # after turn-on the stored energy settles to a periodic steady state
    assert u[10:].max() / u[10:].min() < 1.05


# -- coverslip sphere: estimators, rotation, orientation coupling ---------------------------

ND = np.array([0.0, 0.0, 27.0])
OFFSET = np.array([8.0, -5.0, 6.0])


@pytest.fixture(scope="module")
def coverslip_grid():
    return voxelize(build_scene("coverslip"), 5.0, pad=10)


@pytest.fixture(scope="module")
def axis_runs(coverslip_grid):
    pos = tuple(ND + OFFSET)
    s2 = 1 / math.sqrt(2)
    dirs = {"x": (1.0, 0.0, 0.0), "z": (0.0, 0.0, 1.0), "+": (s2, 0.0, s2), "-": (s2, 0.0, -s2)}
    return {k: radiated_power(coverslip_grid, DipoleSource(pos, d), FAST) for k, d in dirs.items()}


def test_estimator_agreement_at_5nm(axis_runs):
    for r in axis_runs.values():
        assert abs(r.p_flux - r.p_work) / r.p_work <= 0.1


def test_power_is_quadratic_in_orientation(axis_runs):
    # P(d) = d.G.d: the cross term cancels between the two diagonals
    r = axis_runs
    assert r["+"].p_flux + r["-"].p_flux == pytest.approx(r["x"].p_flux + r["z"].p_flux, rel=1e-4)


def test_orientation_coupling_regression(axis_runs):
    r = axis_runs
    combo = 0.5 * (r["x"].p_flux + r["z"].p_flux)
    dev = r["+"].p_flux / combo - 1
    # off-axis dipole: the x-z cross term is real and recorded here
    assert dev == pytest.approx(ORIENTATION_COUPLING_DEV, abs=2e-5)
    assert abs(dev) > 5e-4
    dev_minus = r["-"].p_flux / combo - 1
    assert dev_minus == pytest.approx(-dev, abs=2e-5)


# measured with the default solver on the 5 nm grid
ORIENTATION_COUPLING_DEV = 1.1741e-3


def _rot_x(v):
    # 90 degrees about x: (x, y, z) -> (x, -z, y)
    return np.array([v[0], -v[2], v[1]])


def test_rotation_covariance():
    d = unit((0.3, -0.5, 0.8))
    base = build_scene("coverslip")
    pos = ND + OFFSET
    r0 = relative_rate(base, DipoleSource(tuple(pos), d), FAST, bulk="compact")
    nd = Sphere(tuple(_rot_x(ND)), 27.0, DIAMOND)
    rot = DielectricScene(AIR, [HalfSpace((0, -1, 0), 0.0, GLASS)], nd, (300.0,) * 3,
                          tuple(_rot_x(ND)))
    r1 = relative_rate(rot, DipoleSource(tuple(_rot_x(pos)), tuple(_rot_x(d))), FAST,
                       bulk="compact")
    assert r1.R == pytest.approx(r0.R, rel=0.01)


def test_dump_csv(tmp_path):
    g = voxelize(build_scene("homogeneous"), 10.0, pad=10)
    p = tmp_path / "cycles.csv"
    res = radiated_power(g, DipoleSource((1.0, 2.0, 3.0), (0, 1, 0)), COARSE, dump_csv=p)
    rows = p.read_text().splitlines()
    assert rows[0] == "cycle_index,P_flux,P_work" and len(rows) == len(res.history) + 1
