"""3D FDTD solver for the power radiated by an oscillating point dipole.

Units: lengths in nm, c = eps0 = mu0 = 1, so time is measured in nm of light
travel. The dipole moment follows ``p(t) = r(t) sin(wt)`` with a smooth
turn-on ``r``, which leaves no static charge behind after the ramp. Radiated
power is estimated from single-frequency phasors accumulated over one optical
cycle: the outward Poynting flux through a box, and the work done by the
source current.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .scene import COMPONENT_OFFSETS, DielectricScene, Material, Sphere, VoxelGrid, voxelize

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class SolverInstability(SolverError):
    pass


class SolverNonConvergence(SolverError):
    pass


class CellBudgetExceeded(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    dx: float = 5.0
    courant: float = 0.5
    pml_cells: int = 10
    pml_order: int = 3
    pml_alpha: float = 0.2        # CFS shift at the inner PML face, in units of the angular frequency
    pml_sigma_scale: float = 1.0  # multiple of the polynomial-grading optimum
    warmup_cycles: int = 10
    measure_cycles: int = 5
    max_cycles: int = 40
    ramp_cycles: float = 2.0
    wavelength: float = 680.0
    conv_tol: float = 1e-3
    flux_margin: float = 15.0     # nm between domain face and flux-box face
    dtype: str = "float32"
    max_cells: int = 30_000_000

    def __post_init__(self):
        if not self.dx > 0:
            raise ValueError("dx must be positive")
        if not 0 < self.courant <= 1 / math.sqrt(3):
            raise ValueError(f"Courant factor {self.courant} violates 0 < S <= 1/sqrt(3)")
        if self.pml_cells < 8:
            raise ValueError("pml_cells must be >= 8")
        if self.warmup_cycles < 1 or self.measure_cycles < 2:
            raise ValueError("need warmup_cycles >= 1 and measure_cycles >= 2")
        if self.warmup_cycles + self.measure_cycles > self.max_cycles:
            raise ValueError("warmup + measure cycles exceed max_cycles")
        if self.ramp_cycles > self.warmup_cycles:
            raise ValueError("ramp must finish within the warmup")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def omega(self) -> float:
        return 2 * math.pi / self.wavelength

    @property
    def steps_per_cycle(self) -> int:
        return int(math.ceil(self.wavelength / (self.courant * self.dx) - 1e-9))

    @property
    def dt(self) -> float:
        # one optical period is an integer number of steps; effective S <= courant
        return self.wavelength / self.steps_per_cycle


@dataclass(frozen=True)
class DipoleSource:
    position: tuple
    orientation: tuple
    amplitude: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.orientation, float)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            if n == 0:
                raise ValueError("orientation must be nonzero")
            raise ValueError(f"orientation must be a unit vector (|d| = {n})")
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "orientation", tuple(float(v) for v in d))


def unit(v) -> tuple:
    v = np.asarray(v, float)
    return tuple(v / np.linalg.norm(v))


@dataclass
class PowerResult:
    """Output of one solver run."""
    p_flux: float
    p_work: float
    converged: bool
    cycles_run: int
    history: list = field(default_factory=list)   # (cycle, P_flux, P_work)
    energy: list = field(default_factory=list)    # field energy in the flux box per cycle

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cycle_index", "P_flux", "P_work"])
            w.writerows(self.history)


@dataclass
class SimulationResult:
    p_flux: float
    p_work: float
    p_bulk: float
    p_bulk_work: float
    R: float
    converged: bool
    cycles_run: int

    @property
    def R_work(self) -> float:
        return self.p_work / self.p_bulk_work

    def to_dict(self) -> dict:
        return {"p_flux": self.p_flux, "p_work": self.p_work, "p_bulk": self.p_bulk,
                "p_bulk_work": self.p_bulk_work, "R": self.R, "converged": self.converged,
                "cycles_run": self.cycles_run}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("p_flux", "p_work", "p_bulk", "p_bulk_work", "R",
                                        "converged", "cycles_run")})


def larmor_power(n: float, cfg: SolverConfig, amplitude: float = 1.0) -> float:
    """Continuum power of the unit dipole source in a uniform medium of index n."""
    w = cfg.omega
    return n * w ** 4 * amplitude ** 2 / (12 * math.pi)


def trilinear_nodes(grid: VoxelGrid, comp: int, pos) -> tuple[np.ndarray, np.ndarray]:
    """Indices and weights of the 8 nodes of one component lattice around ``pos``."""
    f = (np.asarray(pos, float) - grid.origin) / grid.dx - np.array(COMPONENT_OFFSETS[comp])
    base = np.floor(f).astype(int)
    t = f - base
    idx, w = [], []
    for dx_ in (0, 1):
        for dy_ in (0, 1):
            for dz_ in (0, 1):
                wt = ((t[0] if dx_ else 1 - t[0]) * (t[1] if dy_ else 1 - t[1])
                      * (t[2] if dz_ else 1 - t[2]))
                idx.append(base + (dx_, dy_, dz_))
                w.append(wt)
    return np.array(idx, dtype=np.int64), np.array(w)


def _pml_profiles(n_nodes: int, cfg: SolverConfig):
    """CPML recursion coefficients at E (integer) and H (half-integer) positions."""
    p = cfg.pml_cells
    last = n_nodes - 1
    m = cfg.pml_order
    sigma_max = cfg.pml_sigma_scale * 0.8 * (m + 1) / cfg.dx
    alpha_max = cfg.pml_alpha * cfg.omega
    dt = cfg.dt

    def coeffs(pos):
        depth = np.maximum(np.maximum(p - pos, pos - (last - p)), 0.0) / p
        sigma = sigma_max * depth ** m
        alpha = np.where(depth > 0, alpha_max * (1 - depth), 0.0)
        b = np.exp(-(sigma + alpha) * dt)
        with np.errstate(invalid="ignore", divide="ignore"):
            a = np.where(sigma > 0, sigma / (sigma + alpha) * (b - 1), 0.0)
        slab = np.nonzero(depth > 0)[0].astype(np.int64)
        return b, a, slab

    e = coeffs(np.arange(n_nodes, dtype=float))
    h = coeffs(np.arange(n_nodes, dtype=float) + 0.5)
    return e, h


@dataclass(frozen=True)
class FluxBox:
    lo: tuple   # E-node index of each low face
    hi: tuple   # E-node index of each high face


def flux_box(grid: VoxelGrid, cfg: SolverConfig) -> FluxBox:
    m = cfg.flux_margin / grid.dx
    if abs(m - round(m)) > 1e-6:
        raise SolverError("flux margin must be a whole number of cells")
    m = int(round(m))
    if m < 2:
        raise SolverError("flux box must sit at least 2 cells inside the PML-free region")
    p = grid.pad
    lo = tuple(p + m for _ in range(3))
    hi = tuple(grid.shape[a] - 1 - p - m for a in range(3))
    return FluxBox(lo, hi)


class Simulation:
    """A solver instance bound to one permittivity grid; reusable across sources."""

    def __init__(self, grid: VoxelGrid, cfg: SolverConfig):
        if grid.pad != cfg.pml_cells:
            raise SolverError("voxel grid padding must equal pml_cells")
        if abs(grid.dx - cfg.dx) > 1e-12:
            raise SolverError("voxel grid step differs from solver dx")
        ncell = int(np.prod(grid.shape))
        if ncell > cfg.max_cells:
            raise CellBudgetExceeded(f"{ncell} cells exceed budget {cfg.max_cells}")
        self.grid = grid
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        self.box = flux_box(grid, cfg)
        dt, dx = cfg.dt, cfg.dx
        self.c_h = self.dtype.type(dt / dx)
        self.c_e = tuple(np.ascontiguousarray((dt / dx) / e, dtype=self.dtype) for e in grid.eps)
        self.profiles = [_pml_profiles(n, cfg) for n in grid.shape]

    # -- source -----------------------------------------------------------

    def _source_nodes(self, src: DipoleSource):
        out = []
        for comp in range(3):
            d = src.orientation[comp]
            if d == 0.0:
                continue
            idx, w = trilinear_nodes(self.grid, comp, src.position)
            keep = w > 0
            idx, w = idx[keep], w[keep]
            if len(w) == 0:
                continue
            p = self.grid.pad
            for a in range(3):
                if idx[:, a].min() < p or idx[:, a].max() > self.grid.shape[a] - 1 - p:
                    raise SolverError("dipole lies outside the PML-free region")
            out.append((comp, idx, w * d * src.amplitude))
        return out

    def _check_source_in_box(self, src):
        g = self.grid
        for a in range(3):
            lo = g.origin[a] + self.box.lo[a] * g.dx
            hi = g.origin[a] + self.box.hi[a] * g.dx
            if not lo + g.dx <= src.position[a] <= hi - g.dx:
                raise SolverError("dipole must lie inside the flux box")

    # -- run --------------------------------------------------------------

    def run(self, src: DipoleSource, allow_unconverged: bool = False,
            track_energy: bool = False) -> PowerResult:
        cfg, g = self.cfg, self.grid
        self._check_source_in_box(src)
        nodes = self._source_nodes(src)
        shape = g.shape
        dt_ = self.dtype
        E = [np.zeros(shape, dt_) for _ in range(3)]
        H = [np.zeros(shape, dt_) for _ in range(3)]
        psi = self._alloc_psi()
        self._cast_profiles()
        faces = self._face_accumulators()
        M = cfg.steps_per_cycle
        dt = cfg.dt
        w = cfg.omega
        dx = cfg.dx
        t_ramp = cfg.ramp_cycles * cfg.wavelength
        src_amp = [(c, idx, (wt / dx ** 2).astype(dt_)) for c, idx, wt in nodes]
        src_phasor = [np.zeros(len(wt), complex) for _, _, wt in nodes]

        history = []
        energy = []
        prev = None
        converged = False
        cycle = 0
        n = 0
        while cycle < cfg.max_cycles:
            measuring = cycle >= cfg.warmup_cycles
            if measuring:
                self._clear_faces(faces)
                for ph in src_phasor:
                    ph[:] = 0.0
            for _ in range(M):
                th = (n + 0.5) * dt
                self._step_h(E, H, psi)
                if measuring:
                    self._accumulate(faces, H, "H", th, M)
                jt = _current(th, w, t_ramp)
                self._step_e(E, H, psi)
                for c, idx, amp in src_amp:
                    K.inject(E[c], idx, amp * dt_.type(jt), self.c_e[c])
                n += 1
                if measuring:
                    te = n * dt
                    self._accumulate(faces, E, "E", te, M)
                    ph_w = np.exp(1j * w * te) * 2.0 / M
                    for (c, idx, _), ph in zip(src_amp, src_phasor):
                        ph += E[c][idx[:, 0], idx[:, 1], idx[:, 2]] * ph_w
            cycle += 1
            self._check_stable(E, cycle)
            if track_energy:
                energy.append(self._box_energy(E, H))
            if not measuring:
                continue
            p_flux = self._flux(faces)
            p_work = self._work(nodes, src_phasor)
            history.append((cycle, p_flux, p_work))
            log.debug("cycle %d: P_flux=%.6e P_work=%.6e", cycle, p_flux, p_work)
            if prev is not None and abs(p_flux - prev) <= cfg.conv_tol * abs(p_flux):
                converged = True
                break
            prev = p_flux
            if cycle == cfg.warmup_cycles + cfg.measure_cycles:
                log.info("power not steady after %d measured cycles; continuing to %d",
                         cfg.measure_cycles, cfg.max_cycles)
        if not converged and not allow_unconverged:
            raise SolverNonConvergence(
                f"power not steady after {cycle} cycles: last values "
                f"{[round(h[1], 12) for h in history[-3:]]}")
        _, p_flux, p_work = history[-1]
        if not (p_flux > 0 and p_work > 0):
            raise SolverError(f"nonpositive radiated power (flux {p_flux}, work {p_work})")
        return PowerResult(p_flux, p_work, converged, cycle, history, energy)

    # -- internals ----------------------------------------------------------

    def _alloc_psi(self):
        nx, ny, nz = self.grid.shape
        (_, _, sx_e), (_, _, sx_h) = self.profiles[0]
        (_, _, sy_e), (_, _, sy_h) = self.profiles[1]
        (_, _, sz_e), (_, _, sz_h) = self.profiles[2]
        z = lambda s: np.zeros(s, self.dtype)
        return {
            "hx": (z((len(sx_h), ny, nz)), z((len(sx_h), ny, nz))),
            "hy": (z((nx, len(sy_h), nz)), z((nx, len(sy_h), nz))),
            "hz": (z((nx, ny, len(sz_h))), z((nx, ny, len(sz_h)))),
            "ex": (z((len(sx_e), ny, nz)), z((len(sx_e), ny, nz))),
            "ey": (z((nx, len(sy_e), nz)), z((nx, len(sy_e), nz))),
            "ez": (z((nx, ny, len(sz_e))), z((nx, ny, len(sz_e)))),
        }

    def _cast_profiles(self):
        """Per-axis CPML coefficients in the working precision, cast once."""
        dt_ = self.dtype
        out = []
        for e, h in self.profiles:
            out.append(tuple((b.astype(dt_), a.astype(dt_), sl) for b, a, sl in (e, h)))
        # the z slabs are handled inside the bulk update as two contiguous runs
        zruns = []
        for _, _, sl in out[2]:
            klo = int(np.argmax(np.diff(sl) != 1)) + 1 if np.any(np.diff(sl) != 1) else len(sl)
            khi = int(sl[klo]) if klo < len(sl) else self.grid.shape[2]
            if not (np.array_equal(sl[:klo], np.arange(klo))
                    and np.array_equal(sl[klo:], np.arange(khi, khi + len(sl) - klo))):
                raise SolverError("unexpected CPML slab layout")
            zruns.append((klo, khi))
        self._prof = out
        self._zruns = zruns

    def _step_h(self, E, H, psi):
        ex, ey, ez = E
        hx, hy, hz = H
        c = self.c_h
        (_, (bx, ax, sx)), (_, (by, ay, sy)), (_, (bz, az, _)) = self._prof
        klo, khi = self._zruns[1]
        K.update_h(ex, ey, ez, hx, hy, hz, c, *psi["hz"], bz, az, klo, khi)
        K.cpml_h_x(ey, ez, hy, hz, *psi["hx"], sx, bx, ax, c)
        K.cpml_h_y(ex, ez, hx, hz, *psi["hy"], sy, by, ay, c)

    def _step_e(self, E, H, psi):
        ex, ey, ez = E
        hx, hy, hz = H
        cex, cey, cez = self.c_e
        ((bx, ax, sx), _), ((by, ay, sy), _), ((bz, az, _), _) = self._prof
        klo, khi = self._zruns[0]
        K.update_e(ex, ey, ez, hx, hy, hz, cex, cey, cez, *psi["ez"], bz, az, klo, khi)
        K.cpml_e_x(hy, hz, ey, ez, *psi["ex"], sx, bx, ax, cey, cez)
        K.cpml_e_y(hx, hz, ex, ez, *psi["ey"], sy, by, ay, cex, cez)

    def _face_accumulators(self):
        """Phasor accumulators for the tangential fields on the six box faces.

        For the face normal to axis ``a`` with tangential axes ``(b, c)`` in
        cyclic order, the outward flux density is ``E_b H_c* - E_c H_b*``. E_b and
        the normal-averaged H_c share the points (b + 1/2, c); E_c and H_b share
        (b, c + 1/2).
        """
        lo, hi = self.box.lo, self.box.hi
        out = []
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            others = sorted((b, c))
            for side, plane in ((-1.0, lo[a]), (1.0, hi[a])):
                for pair_sign, (ec, half_axis) in ((1.0, (b, b)), (-1.0, (c, c))):
                    hc = c if ec == b else b
                    # patch extents along the two in-plane axes (array order)
                    ext = []
                    wts = []
                    for ax_ in others:
                        if ax_ == half_axis:
                            ext.append((lo[ax_], hi[ax_] - lo[ax_]))
                            wts.append(np.ones(hi[ax_] - lo[ax_]))
                        else:
                            ext.append((lo[ax_], hi[ax_] - lo[ax_] + 1))
                            wt = np.ones(hi[ax_] - lo[ax_] + 1)
                            wt[0] = wt[-1] = 0.5
                            wts.append(wt)
                    shape2 = (ext[0][1], ext[1][1])
                    out.append({
                        "axis": a, "plane": plane, "sign": side * pair_sign,
                        "e": ec, "h": hc, "lo0": ext[0][0], "lo1": ext[1][0],
                        "weight": np.outer(wts[0], wts[1]),
                        "re": np.zeros(shape2), "im": np.zeros(shape2),
                        "hre": np.zeros(shape2), "him": np.zeros(shape2),
                    })
        return out

    def _accumulate(self, faces, F, kind, t, M):
        ph = np.exp(1j * self.cfg.omega * t) * 2.0 / M
        wr, wi = ph.real, ph.imag
        for f in faces:
            a = f["axis"]
            if kind == "E":
                K.accumulate_plane(f["re"], f["im"], F[f["e"]], a, f["plane"], f["lo0"], f["lo1"],
                                   wr, wi, 1.0)
            else:
                hf = F[f["h"]]
                for off in (-1, 0):
                    K.accumulate_plane(f["hre"], f["him"], hf, a, f["plane"] + off, f["lo0"],
                                       f["lo1"], wr, wi, 0.5)

    def _flux(self, faces) -> float:
        total = 0.0
        for f in faces:
            e = f["re"] + 1j * f["im"]
            h = f["hre"] + 1j * f["him"]
            total += f["sign"] * 0.5 * float(np.sum(f["weight"] * (e * np.conj(h)).real))
        return total * self.cfg.dx ** 2

    def _work(self, nodes, phasors) -> float:
        cfg = self.cfg
        s = 0.0
        for (_, _, wt), ph in zip(nodes, phasors):
            s += float(np.sum(wt * ph.real))
        # current phasor is w * weight (real); E averaged over the half step
        return -0.5 * cfg.omega * math.cos(cfg.omega * cfg.dt / 2) * s

    def _box_energy(self, E, H) -> float:
        lo, hi = self.box.lo, self.box.hi
        sl = tuple(slice(lo[a], hi[a] + 1) for a in range(3))
        u = 0.0
        for c in range(3):
            e = E[c][sl].astype(np.float64)
            h = H[c][sl].astype(np.float64)
            u += float(np.sum(self.grid.eps[c][sl] * e * e) + np.sum(h * h))
        return 0.5 * u * self.cfg.dx ** 3

    def _check_stable(self, E, cycle):
        m = max(float(np.max(np.abs(e))) for e in E)
        if not math.isfinite(m) or m > 1e6:
            raise SolverInstability(f"field magnitude {m} after cycle {cycle}")

    def _clear_faces(self, faces):
        for f in faces:
            for k in ("re", "im", "hre", "him"):
                f[k][:] = 0.0


def _current(t, w, t_ramp):
    """dp/dt for p(t) = r(t) sin(wt) with a raised-cosine turn-on of length t_ramp."""
    if t >= t_ramp:
        return w * math.cos(w * t)
    r = 0.5 * (1 - math.cos(math.pi * t / t_ramp))
    dr = 0.5 * math.pi / t_ramp * math.sin(math.pi * t / t_ramp)
    return dr * math.sin(w * t) + r * w * math.cos(w * t)


# -- public entry points ------------------------------------------------------

def radiated_power(grid: VoxelGrid, src: DipoleSource, cfg: SolverConfig,
                   allow_unconverged: bool = False, dump_csv=None) -> PowerResult:
    """Steady-state (P_flux, P_work) of ``src`` on a voxelized grid."""
    res = Simulation(grid, cfg).run(src, allow_unconverged=allow_unconverged)
    if dump_csv is not None:
        res.to_csv(dump_csv)
    return res


def _uniform_scene(index: float, center, side: float) -> DielectricScene:
    m = Material("uniform", index)
    return DielectricScene(m, (), Sphere(tuple(center), 1.0, m), (side,) * 3, tuple(center),
                           preset="homogeneous", params={"n_background": index})


def compact_side(cfg: SolverConfig, min_cells: int = 40) -> float:
    half = max(min_cells * cfg.dx / 2, cfg.flux_margin + 4 * cfg.dx)
    return 2 * cfg.dx * math.ceil(half / cfg.dx - 1e-9)


def bulk_power(src: DipoleSource, cfg: SolverConfig, index: float, like: VoxelGrid | None = None,
               mode: str = "compact", allow_unconverged: bool = False) -> PowerResult:
    """Power of ``src`` in a uniform medium on the same lattice as ``like``.

    ``mode="direct"`` repeats the run on a grid of identical dimensions.
    ``mode="compact"`` uses a smaller cube whose nodes coincide with the
    lattice of ``like``, so the source keeps the same sub-cell position; in a
    uniform lossless medium the flux through any enclosing box is the same.
    """
    if mode not in ("direct", "compact"):
        raise ValueError(f"unknown bulk mode {mode!r}")
    eps = index ** 2
    if like is not None and mode == "direct":
        g = VoxelGrid(like.dx, np.array(like.origin), tuple(like.shape),
                      tuple(np.full(like.shape, eps) for _ in range(3)), like.pad)
        return radiated_power(g, src, cfg, allow_unconverged)
    origin = np.zeros(3) if like is None else np.asarray(like.origin)
    pos = np.asarray(src.position)
    center = origin + np.round((pos - origin) / cfg.dx) * cfg.dx
    g = voxelize(_uniform_scene(index, center, compact_side(cfg)), cfg.dx, pad=cfg.pml_cells)
    return radiated_power(g, src, cfg, allow_unconverged)


def relative_rate(scene: DielectricScene, src: DipoleSource, cfg: SolverConfig,
                  reference_index: float | None = None, bulk: str = "direct",
                  grid: VoxelGrid | None = None, allow_unconverged: bool = False) -> SimulationResult:
    """R = P_flux / P_bulk_flux with the bulk run sharing grid step and source.

    The reference medium defaults to the nanodiamond material. ``grid`` may be
    passed to reuse a voxelization of ``scene`` across sources.
    """
    if reference_index is None:
        reference_index = scene.nanodiamond.material.index
    lo, hi = scene.domain_bounds()
    pos = np.asarray(src.position)
    if np.any(pos < lo) or np.any(pos > hi):
        raise SolverError("dipole lies outside the scene domain")
    if grid is None:
        grid = voxelize(scene, cfg.dx, pad=cfg.pml_cells)
    main = radiated_power(grid, src, cfg, allow_unconverged)
    ref = bulk_power(src, cfg, reference_index, like=grid, mode=bulk,
                     allow_unconverged=allow_unconverged)
    return SimulationResult(
        p_flux=main.p_flux, p_work=main.p_work, p_bulk=ref.p_flux, p_bulk_work=ref.p_work,
        R=main.p_flux / ref.p_flux, converged=main.converged and ref.converged,
        cycles_run=main.cycles_run)


@dataclass
class ProbeRow:
    dx: float
    R: float
    rel_change: float | None   # |R(dx) - R(previous dx)| / R(dx)
    cells: int


def grid_cells(scene: DielectricScene, dx: float, pml_cells: int) -> int:
    n = 1
    for L in scene.domain_size:
        q = L / dx
        if abs(q - round(q)) > 1e-6:
            raise SolverError(f"grid step {dx} does not divide domain length {L}")
        n *= int(round(q)) + 2 * pml_cells + 1
    return n


def convergence_probe(scene: DielectricScene, src: DipoleSource, dx_list, cfg: SolverConfig,
                      bulk: str = "direct", **kw) -> tuple[list[ProbeRow], bool]:
    """R at a sequence of decreasing grid steps.

    Returns the rows and a flag that is True when successive differences
    shrink. Grids above ``cfg.max_cells`` are refused before any work is done.
    """
    dx_list = [float(d) for d in dx_list]
    if any(b >= a for a, b in zip(dx_list, dx_list[1:])):
        raise ValueError("grid steps must be strictly decreasing")
    for d in dx_list:
        n = grid_cells(scene, d, cfg.pml_cells)
        if n > cfg.max_cells:
            raise CellBudgetExceeded(f"dx={d}: {n} cells exceed budget {cfg.max_cells}")
    rows: list[ProbeRow] = []
    for d in dx_list:
        c = with_dx(cfg, d)
        r = relative_rate(scene, src, c, bulk=bulk, **kw)
        prev = rows[-1].R if rows else None
        rows.append(ProbeRow(d, r.R, None if prev is None else abs(r.R - prev) / abs(r.R),
                             grid_cells(scene, d, c.pml_cells)))
    diffs = [r.rel_change for r in rows[1:]]
    monotone = all(b <= a for a, b in zip(diffs, diffs[1:]))
    if not monotone:
        log.warning("non-monotone grid convergence: %s", diffs)
    return rows, monotone


def with_dx(cfg: SolverConfig, dx: float) -> SolverConfig:
    """Copy of ``cfg`` at a new grid step, keeping the flux margin on whole cells."""
    margin = dx * math.ceil(max(cfg.flux_margin, 2 * dx) / dx - 1e-9)
    return replace(cfg, dx=dx, flux_margin=margin)
