"""Dielectric scenes: materials, primitives, presets and voxelization.

All lengths are in nanometres. A scene is an ordered list of primitives on a
background material; later primitives override earlier ones where they
overlap and the nanodiamond (the emitter host) is painted last.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
import numpy as np

TANGENCY_TOL = 0.5  # nm


class SceneError(ValueError):
    """Invalid preset, geometry or grid request."""


@dataclass(frozen=True)
class Material:
    name: str
    index: float

    def __post_init__(self):
        if not self.index > 0:
            raise SceneError(f"refractive index must be positive, got {self.index}")

    @property
    def eps(self) -> float:
        return self.index ** 2


AIR = Material("air", 1.0)
DIAMOND = Material("diamond", 2.4)
GLASS = Material("glass", 1.45)
POLYSTYRENE = Material("polystyrene", 1.59)


def _as_points(p) -> np.ndarray:
    return np.asarray(p, dtype=float)


# -- primitives -------------------------------------------------------------
#
# ``sdf`` returns a signed distance (negative inside) or, where the exact value
# is awkward, a bound with the same sign whose magnitude never exceeds the true
# distance. Voxelization relies only on that property.

@dataclass(frozen=True)
class HalfSpace:
    """Points with ``normal . x <= offset``; ``normal`` is the outward normal."""
    normal: tuple
    offset: float
    material: Material
    kind = "halfspace"

    def __post_init__(self):
        n = np.asarray(self.normal, float)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise SceneError("half-space normal must be nonzero")
        object.__setattr__(self, "normal", tuple(float(v) for v in n / norm))

    def sdf(self, x, y, z):
        nx, ny, nz = self.normal
        return nx * x + ny * y + nz * z - self.offset

    def contains(self, x, y, z):
        return self.sdf(x, y, z) <= 0.0

    def bounds(self):
        return None

    def volume(self):
        return math.inf

    def describe(self):
        return {"type": self.kind, "normal": list(self.normal), "offset": self.offset}


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    material: Material
    kind = "sphere"

    def __post_init__(self):
        if not self.radius > 0:
            raise SceneError("sphere radius must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))

    def sdf(self, x, y, z):
        cx, cy, cz = self.center
        return np.sqrt((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2) - self.radius

    def contains(self, x, y, z):
        cx, cy, cz = self.center
        return (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= self.radius ** 2

    def bounds(self):
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def volume(self):
        return 4.0 / 3.0 * math.pi * self.radius ** 3

    def inset_contains(self, x, y, z, shell):
        cx, cy, cz = self.center
        r = self.radius - shell
        return (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= r * r

    def describe(self):
        return {"type": self.kind, "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Cube:
    """Axis-aligned cube; resting on a face."""
    center: tuple
    side: float
    material: Material
    kind = "cube"

    def __post_init__(self):
        if not self.side > 0:
            raise SceneError("cube side must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))

    def sdf(self, x, y, z):
        cx, cy, cz = self.center
        h = self.side / 2
        qx, qy, qz = np.abs(x - cx) - h, np.abs(y - cy) - h, np.abs(z - cz) - h
        outside = np.sqrt(np.maximum(qx, 0) ** 2 + np.maximum(qy, 0) ** 2 + np.maximum(qz, 0) ** 2)
        inside = np.minimum(np.maximum(np.maximum(qx, qy), qz), 0.0)
        return outside + inside

    def contains(self, x, y, z):
        cx, cy, cz = self.center
        h = self.side / 2
        return (np.abs(x - cx) <= h) & (np.abs(y - cy) <= h) & (np.abs(z - cz) <= h)

    def inset_contains(self, x, y, z, shell):
        cx, cy, cz = self.center
        h = self.side / 2 - shell
        return (np.abs(x - cx) <= h) & (np.abs(y - cy) <= h) & (np.abs(z - cz) <= h)

    def bounds(self):
        c = np.array(self.center)
        return c - self.side / 2, c + self.side / 2

    def volume(self):
        return self.side ** 3

    @property
    def bounding_radius(self):
        return self.side * math.sqrt(3) / 2

    def describe(self):
        return {"type": self.kind, "center": list(self.center), "side": self.side}


@dataclass(frozen=True)
class Octahedron:
    """Regular octahedron with vertices on the coordinate axes (rests on a vertex)."""
    center: tuple
    side: float
    material: Material
    kind = "octahedron"

    def __post_init__(self):
        if not self.side > 0:
            raise SceneError("octahedron side must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))

    @property
    def vertex_distance(self):
        return self.side / math.sqrt(2)

    def _l1(self, x, y, z):
        cx, cy, cz = self.center
        return np.abs(x - cx) + np.abs(y - cy) + np.abs(z - cz)

    def sdf(self, x, y, z):
        return (self._l1(x, y, z) - self.vertex_distance) / math.sqrt(3)

    def contains(self, x, y, z):
        return self._l1(x, y, z) <= self.vertex_distance

    def inset_contains(self, x, y, z, shell):
        return self._l1(x, y, z) <= self.vertex_distance - shell * math.sqrt(3)

    def bounds(self):
        c = np.array(self.center)
        return c - self.vertex_distance, c + self.vertex_distance

    def volume(self):
        return math.sqrt(2) / 3 * self.side ** 3

    @property
    def bounding_radius(self):
        return self.vertex_distance

    def describe(self):
        return {"type": self.kind, "center": list(self.center), "side": self.side}


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid with semi-axes ``(ax, ay, az)``."""
    center: tuple
    semi_axes: tuple
    material: Material
    kind = "ellipsoid"

    def __post_init__(self):
        if min(self.semi_axes) <= 0:
            raise SceneError("ellipsoid semi-axes must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "semi_axes", tuple(float(v) for v in self.semi_axes))

    def _rho(self, x, y, z):
        (cx, cy, cz), (a, b, c) = self.center, self.semi_axes
        return np.sqrt(((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 + ((z - cz) / c) ** 2)

    def sdf(self, x, y, z):
        # |diag(a) v| >= min(a) |v| makes this a distance lower bound
        return (self._rho(x, y, z) - 1.0) * min(self.semi_axes)

    def contains(self, x, y, z):
        return self._rho(x, y, z) <= 1.0

    def distance(self, x, y, z):
        # first-order distance (rho - 1) / |grad rho|; sign agrees with sdf
        (cx, cy, cz), (a, b, c) = self.center, self.semi_axes
        u, v, w = (x - cx) / a, (y - cy) / b, (z - cz) / c
        rho = np.sqrt(u * u + v * v + w * w)
        g = np.sqrt((u / a) ** 2 + (v / b) ** 2 + (w / c) ** 2)
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(g > 0, (rho - 1.0) * rho / g, -min(self.semi_axes))
        return d

    def inset_contains(self, x, y, z, shell):
        # shrunk semi-axes stand in for the parallel surface
        (cx, cy, cz), (a, b, c) = self.center, self.semi_axes
        a, b, c = a - shell, b - shell, c - shell
        return ((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 + ((z - cz) / c) ** 2 <= 1.0

    def bounds(self):
        c, s = np.array(self.center), np.array(self.semi_axes)
        return c - s, c + s

    def volume(self):
        a, b, c = self.semi_axes
        return 4.0 / 3.0 * math.pi * a * b * c

    @property
    def bounding_radius(self):
        return max(self.semi_axes)

    def describe(self):
        return {"type": self.kind, "center": list(self.center), "semi_axes": list(self.semi_axes)}


Primitive = HalfSpace | Sphere | Cube | Octahedron | Ellipsoid


def host_radius(p) -> float:
    """Radius of the smallest centred ball containing an emitter host."""
    if isinstance(p, Sphere):
        return p.radius
    if isinstance(p, (Cube, Octahedron, Ellipsoid)):
        return p.bounding_radius
    raise SceneError(f"{type(p).__name__} cannot host an emitter")


def host_inset_contains(p, x, y, z, shell):
    return p.inset_contains(x, y, z, shell)


# -- scene ------------------------------------------------------------------

@dataclass(frozen=True)
class DielectricScene:
    background: Material
    primitives: tuple
    nanodiamond: object
    domain_size: tuple
    domain_center: tuple = (0.0, 0.0, 0.0)
    preset: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "domain_size", tuple(float(v) for v in self.domain_size))
        object.__setattr__(self, "domain_center", tuple(float(v) for v in self.domain_center))
        if min(self.domain_size) <= 0:
            raise SceneError("domain size must be positive")

    @property
    def all_primitives(self):
        return self.primitives + (self.nanodiamond,)

    @property
    def emitter_center(self) -> np.ndarray:
        return np.array(self.nanodiamond.center)

    def materials(self):
        return [self.background] + [p.material for p in self.all_primitives]

    def eps_range(self):
        e = [m.eps for m in self.materials()]
        return min(e), max(e)

    def domain_bounds(self):
        c, s = np.array(self.domain_center), np.array(self.domain_size)
        return c - s / 2, c + s / 2

    def substrate_gaps(self) -> list[float]:
        """Surface gap between a spherical nanodiamond and each substrate sphere."""
        nd = self.nanodiamond
        if not isinstance(nd, Sphere):
            return []
        c = np.array(nd.center)
        return [float(np.linalg.norm(c - np.array(p.center)) - p.radius - nd.radius)
                for p in self.primitives if isinstance(p, Sphere)]

    def material_at(self, x, y, z) -> np.ndarray:
        """Permittivity at points (arrays broadcast together)."""
        x, y, z = np.broadcast_arrays(_as_points(x), _as_points(y), _as_points(z))
        eps = np.full(x.shape, self.background.eps)
        for p in self.all_primitives:
            eps[p.contains(x, y, z)] = p.material.eps
        return eps

    def to_dict(self) -> dict:
        def prim(p):
            d = p.describe()
            d["index"] = p.material.index
            d["material"] = p.material.name
            return d
        return {
            "preset": self.preset,
            "params": self.params,
            "units": "nm",
            "background": {"material": self.background.name, "index": self.background.index},
            "domain_size": list(self.domain_size),
            "domain_center": list(self.domain_center),
            "primitives": [prim(p) for p in self.primitives],
            "nanodiamond": prim(self.nanodiamond),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


# -- presets ----------------------------------------------------------------

PRESETS = (
    "coverslip", "opal-interstitial", "opal-intermediate", "opal-top",
    "isolated-sphere", "homogeneous", "shape-study",
)
SHAPES = ("sphere", "cube", "octahedron", "ellipsoid")

DEFAULT_GEOMETRY = {
    "a": 160.0,              # opal sphere radius
    "D": 54.0,               # nanodiamond diameter
    "n_diamond": DIAMOND.index,
    "n_glass": GLASS.index,
    "n_opal": POLYSTYRENE.index,
    "n_background": AIR.index,
    "coverslip_domain": 300.0,
    "opal_domain": 700.0,
    "intermediate_lift": 20.0,
    "opal_max_spheres": None,   # None: every sphere intersecting the domain
    "opal_lower_layer": True,
    "under_pocket": True,        # lower-layer sphere directly beneath the pocket
    "shape": "sphere",
    "shape_size": 60.0,
    "eta": 1.2,
}


def interstitial_height(a: float, D: float) -> float:
    """Height of a resting nanodiamond centre above the sphere-centre plane."""
    r2 = (a + D / 2) ** 2 - (2 * a / math.sqrt(3)) ** 2
    if r2 < -1e-9:
        raise SceneError(f"nanodiamond D={D} falls through the pocket of spheres a={a}")
    return math.sqrt(max(r2, 0.0))


def _hex_layer(a, z, shift, lo, hi):
    """Centres of a close-packed layer (nearest-neighbour spacing 2a) intersecting a box."""
    out = []
    span = max(hi[0] - lo[0], hi[1] - lo[1]) / 2 + 4 * a
    nmax = int(span / (math.sqrt(3) * a)) + 2
    for j in range(-nmax, nmax + 1):
        for i in range(-nmax - abs(j), nmax + abs(j) + 1):
            x = 2 * a * i + a * j + shift[0]
            y = math.sqrt(3) * a * j + shift[1]
            # sphere-box overlap test
            q = np.clip([x, y, z], lo, hi)
            if np.linalg.norm(q - np.array([x, y, z])) < a:
                out.append((x, y, z))
    return out


def _opal_spheres(p, nd_center, site):
    a = p["a"]
    D = p["D"]
    half = p["opal_domain"] / 2
    c = np.array(nd_center)
    lo, hi = c - half, c + half
    if site == "top":
        # apex sphere directly below the nanodiamond
        z_top = c[2] - (a + D / 2)
        shift = (c[0], c[1])
        pocket = (c[0] + a, c[1] + a / math.sqrt(3))
    else:
        z_top = c[2] - interstitial_height(a, D)
        if site == "intermediate":
            z_top -= p["intermediate_lift"]
        # put an upward triangle's centroid at the nanodiamond axis
        shift = (c[0] - a, c[1] - a / math.sqrt(3))
        pocket = (c[0], c[1])
    top = _hex_layer(a, z_top, shift, lo, hi)
    layers = [top]
    if p["opal_lower_layer"]:
        # fcc stacking: the layer beneath sits in one family of pockets
        dz = 2 * a * math.sqrt(2.0 / 3.0)
        if p["under_pocket"]:
            lshift = (pocket[0], pocket[1]) if site != "top" else (shift[0] + a, shift[1] + a / math.sqrt(3))
        else:
            lshift = (pocket[0], pocket[1] + 2 * a / math.sqrt(3)) if site != "top" else (shift[0] + a, shift[1] - a / math.sqrt(3))
        layers.append(_hex_layer(a, z_top - dz, lshift, lo, hi))
    centres = [q for layer in layers for q in layer]
    centres.sort(key=lambda q: (np.linalg.norm(np.array(q) - c), q))
    if p["opal_max_spheres"] is not None:
        centres = centres[: int(p["opal_max_spheres"])]
    mat = Material("polystyrene", p["n_opal"])
    return [Sphere(q, a, mat) for q in centres]


def _shape_host(p, mat):
    shape = p["shape"]
    s = p["shape_size"]
    if shape == "sphere":
        return Sphere((0, 0, s / 2), s / 2, mat)
    if shape == "cube":
        return Cube((0, 0, s / 2), s, mat)
    if shape == "octahedron":
        return Octahedron((0, 0, s / math.sqrt(2)), s, mat)
    if shape == "ellipsoid":
        eta = p["eta"]
        r = s / 2
        axes = (r * eta, r * eta, r / eta ** 2)
        return Ellipsoid((0, 0, axes[2]), axes, mat)
    raise SceneError(f"unknown shape {shape!r}; expected one of {SHAPES}")


def build_scene(preset: str, params: dict | None = None) -> DielectricScene:
    """Build a named scene.

    Coordinates put the glass surface (when present) at z = 0 and the
    nanodiamond on the vertical axis x = y = 0; the domain is centred on the
    nanodiamond.
    """
    unknown = set(params or {}) - set(DEFAULT_GEOMETRY)
    if unknown:
        raise SceneError(f"unknown geometry parameters: {sorted(unknown)}")
    p = dict(DEFAULT_GEOMETRY)
    p.update(params or {})
    if preset.startswith("shape-study:"):
        p["shape"] = preset.split(":", 1)[1]
        preset = "shape-study"
    if preset not in PRESETS:
        raise SceneError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    for key in ("a", "D", "coverslip_domain", "opal_domain", "shape_size"):
        if not p[key] > 0:
            raise SceneError(f"{key} must be positive, got {p[key]}")
    if p["eta"] <= 0:
        raise SceneError("eta must be positive")

    diamond = Material("diamond", p["n_diamond"])
    background = Material("air", p["n_background"])
    D = p["D"]
    r = D / 2
    L = p["coverslip_domain"]
    prims: list = []

    if preset == "coverslip":
        nd = Sphere((0, 0, r), r, diamond)
        prims.append(HalfSpace((0, 0, 1), 0.0, Material("glass", p["n_glass"])))
        center = nd.center
    elif preset == "isolated-sphere":
        nd = Sphere((0, 0, 0), r, diamond)
        center = nd.center
    elif preset == "homogeneous":
        background = Material("uniform", p["n_background"] if params and "n_background" in params else p["n_diamond"])
        nd = Sphere((0, 0, 0), r, Material("uniform", background.index))
        center = nd.center
    elif preset == "shape-study":
        nd = _shape_host(p, diamond)
        prims.append(HalfSpace((0, 0, 1), 0.0, Material("glass", p["n_glass"])))
        center = nd.center
    else:
        site = preset.split("-", 1)[1]
        nd = Sphere((0, 0, 0), r, diamond)
        prims.extend(_opal_spheres(p, nd.center, site))
        L = p["opal_domain"]
        center = nd.center

    scene = DielectricScene(background, prims, nd, (L, L, L), center, preset=preset,
                            params={k: p[k] for k in sorted(p)})
    _check_contacts(scene, require_tangent=preset in ("opal-interstitial", "opal-top"))
    return scene


def interface_scene(height: float, n1: float = 1.0, n2: float = 1.45, lateral: float = 600.0,
                    above: float = 150.0, below: float = 150.0) -> DielectricScene:
    """A bare point emitter at the origin, ``height`` nm above a planar interface.

    Used to validate the solver against the interface model; the host sphere
    is a sub-cell marker made of the upper medium, so it leaves the grid
    unchanged.
    """
    if height < 0:
        raise SceneError("height must be >= 0")
    upper = Material("upper", n1)
    lo, hi = -height - below, above
    prims = [HalfSpace((0, 0, 1), -height, Material("lower", n2))]
    marker = Sphere((0.0, 0.0, 0.0), 0.5, upper)
    return DielectricScene(upper, prims, marker, (lateral, lateral, hi - lo),
                           (0.0, 0.0, (lo + hi) / 2), preset="interface",
                           params={"height": height, "n1": n1, "n2": n2, "lateral": lateral,
                                   "above": above, "below": below})


def _check_contacts(scene: DielectricScene, require_tangent: bool):
    nd = scene.nanodiamond
    for q in scene.primitives:
        if isinstance(q, HalfSpace) and isinstance(nd, Sphere):
            gap = float(q.sdf(*nd.center)) - nd.radius
            if gap < -TANGENCY_TOL:
                raise SceneError(f"nanodiamond overlaps half-space by {-gap:.3f} nm")
    gaps = scene.substrate_gaps()
    if gaps:
        if min(gaps) < -TANGENCY_TOL:
            raise SceneError(f"nanodiamond overlaps an opal sphere by {-min(gaps):.3f} nm")
        if require_tangent and min(gaps) > TANGENCY_TOL:
            raise SceneError(f"nanodiamond is {min(gaps):.3f} nm clear of its support")


# -- voxelization ------------------------------------------------------------

# identifies the cell-averaging rule; part of every cache key
GRID_SCHEME = "subcell-ramp-v1"

# staggered offsets (in cells) of Ex, Ey, Ez relative to the cell corner
COMPONENT_OFFSETS = ((0.5, 0.0, 0.0), (0.0, 0.5, 0.0), (0.0, 0.0, 0.5))


@dataclass
class VoxelGrid:
    """Permittivity sampled at the three electric-field component locations.

    ``eps[c][i, j, k]`` is the permittivity of the cube of side ``dx`` centred at
    ``origin + (ijk + COMPONENT_OFFSETS[c]) * dx``. Node indices run over the
    scene domain plus ``pad`` cells on every side, so each axis holds
    ``L/dx + 2*pad + 1`` nodes.
    """
    dx: float
    origin: np.ndarray
    shape: tuple
    eps: tuple
    pad: int = 0

    @property
    def dims(self):
        return self.shape

    def node_coords(self, comp: int, axis: int) -> np.ndarray:
        off = COMPONENT_OFFSETS[comp][axis]
        return self.origin[axis] + (np.arange(self.shape[axis]) + off) * self.dx

    def weighted_volume(self, eps_bg: float, eps_fg: float, comp: int = 0) -> float:
        """Volume of the foreground material implied by the mixed permittivity."""
        frac = (self.eps[comp] - eps_bg) / (eps_fg - eps_bg)
        return float(frac.sum()) * self.dx ** 3


def _divides(length, dx):
    q = length / dx
    return abs(q - round(q)) < 1e-6 * max(1.0, q)


def voxelize(scene: DielectricScene, dx: float, pad: int = 0, subsamples: int = 4,
             chunk: int = 8192, mean: str = "arithmetic") -> VoxelGrid:
    """Volume-fraction-averaged permittivity on the staggered E-component lattices.

    ``mean="harmonic"`` averages 1/eps instead (used only for sensitivity checks).
    """
    if mean not in ("arithmetic", "harmonic"):
        raise SceneError(f"unknown averaging rule {mean!r}")
    if not dx > 0:
        raise SceneError("grid step must be positive")
    if not scene.all_primitives:
        raise SceneError("empty scene")
    for L in scene.domain_size:
        if not _divides(L, dx):
            raise SceneError(f"grid step {dx} does not divide domain length {L}")
    n = tuple(int(round(L / dx)) + 2 * pad + 1 for L in scene.domain_size)
    lo, _ = scene.domain_bounds()
    origin = lo - pad * dx
    half_diag = math.sqrt(3) / 2 * dx
    s = subsamples
    sub = (np.arange(s) + 0.5) / s - 0.5
    sx, sy, sz = [g.ravel() * dx for g in np.meshgrid(sub, sub, sub, indexing="ij")]

    eps_out = []
    prims = scene.all_primitives
    for comp in range(3):
        xs = [origin[a] + (np.arange(n[a]) + COMPONENT_OFFSETS[comp][a]) * dx for a in range(3)]
        X, Y, Z = xs[0][:, None, None], xs[1][None, :, None], xs[2][None, None, :]
        eps = np.full(n, scene.background.eps)
        mixed = np.zeros(n, dtype=bool)
        for p in prims:
            box = _index_box(p, xs, half_diag)
            if box is None:
                continue
            sl = tuple(slice(b0, b1) for b0, b1 in box)
            d = p.sdf(X[sl[0], :, :], Y[:, sl[1], :], Z[:, :, sl[2]])
            d = np.broadcast_to(d, tuple(b1 - b0 for b0, b1 in box))
            sub_eps = eps[sl]
            sub_eps[d <= -half_diag] = p.material.eps
            sub_mixed = mixed[sl]
            sub_mixed[np.abs(d) < half_diag] = True
        idx = np.argwhere(mixed)
        flat_eps = eps.reshape(-1)
        flat_idx = np.ravel_multi_index(idx.T, n) if len(idx) else np.zeros(0, int)
        for start in range(0, len(idx), chunk):
            part = idx[start:start + chunk]
            cx = xs[0][part[:, 0]][:, None] + sx
            cy = xs[1][part[:, 1]][:, None] + sy
            cz = xs[2][part[:, 2]][:, None] + sz
            e = _subcell_eps(scene, prims, cx, cy, cz, dx / s, mean)
            avg = e.mean(axis=1) if mean == "arithmetic" else 1.0 / (1.0 / e).mean(axis=1)
            # keep uniform cells exact
            same = e.min(axis=1) == e.max(axis=1)
            avg[same] = e[same, 0]
            flat_eps[flat_idx[start:start + chunk]] = avg
        eps_out.append(eps)
    return VoxelGrid(dx=float(dx), origin=origin, shape=n, eps=tuple(eps_out), pad=pad)


def _distance(p, x, y, z):
    f = getattr(p, "distance", None)
    return f(x, y, z) if f is not None else p.sdf(x, y, z)


def _subcell_eps(scene, prims, cx, cy, cz, h, mean):
    """Permittivity of each sub-cell of side ``h`` centred at (cx, cy, cz).

    A sub-cell cut by exactly one surface gets the fill fraction
    clip(1/2 - d/h, 0, 1) from that surface's signed distance d, which is exact
    for grid-aligned planes; sub-cells cut by several surfaces fall back to the
    material at their centre. Later primitives cover earlier ones.
    """
    bg = scene.background.eps
    top = np.full(cx.shape, -1)          # highest primitive fully covering the sub-cell
    cutter = np.full(cx.shape, -1)
    ncut = np.zeros(cx.shape, dtype=np.int8)
    frac = np.zeros(cx.shape)
    centre = np.full(cx.shape, -1)       # painter result at the centre point
    plo = np.array([cx.min(), cy.min(), cz.min()]) - h
    phi = np.array([cx.max(), cy.max(), cz.max()]) + h
    half_diag = math.sqrt(3) / 2 * h
    for i, p in enumerate(prims):
        b = p.bounds()
        if b is not None and (np.any(b[1] < plo) or np.any(b[0] > phi)):
            continue
        d = p.sdf(cx, cy, cz)
        inside = d <= 0
        centre[inside] = i
        cut = np.abs(d) < half_diag
        top[inside & ~cut] = i
        if np.any(cut):
            ncut += cut
            cutter[cut] = i
            frac[cut] = np.clip(0.5 - _distance(p, cx[cut], cy[cut], cz[cut]) / h, 0.0, 1.0)
    eps_of = np.array([q.material.eps for q in prims] + [bg])   # index -1 -> background
    e = eps_of[top]
    one = (ncut == 1) & (cutter > top)
    if np.any(one):
        f = frac[one]
        e_in, e_out = eps_of[cutter[one]], e[one]
        e[one] = (e_out + f * (e_in - e_out) if mean == "arithmetic"
                  else 1.0 / (f / e_in + (1 - f) / e_out))
    many = ncut > 1
    e[many] = eps_of[centre[many]]
    return e


def _index_box(p, xs, margin):
    """Index ranges per axis where a primitive's surface or interior can lie."""
    b = p.bounds()
    if b is None:
        return [(0, len(x)) for x in xs]
    box = []
    for a, x in enumerate(xs):
        i0 = int(np.searchsorted(x, b[0][a] - margin))
        i1 = int(np.searchsorted(x, b[1][a] + margin, side="right"))
        if i1 <= i0:
            return None
        box.append((i0, i1))
    return box


# -- volume fraction ---------------------------------------------------------

def volume_fraction(scene: DielectricScene, center=None, cube_side: float = 680.0,
                    resolution: int = 136) -> float:
    """Fraction of a cube occupied by material other than background and diamond.

    Midpoint-rule integration on ``resolution**3`` points; points outside the
    scene domain count as background.
    """
    c = scene.emitter_center if center is None else np.asarray(center, float)
    t = (np.arange(resolution) + 0.5) / resolution - 0.5
    t = t * cube_side
    lo, hi = scene.domain_bounds()
    hits = 0
    xs = c[0] + t
    ys = c[1] + t
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    for zc in c[2] + t:
        Z = np.full_like(X, zc)
        owner = np.full(X.shape, -1)
        for i, p in enumerate(scene.all_primitives):
            owner[p.contains(X, Y, Z)] = i
        sub = owner >= 0
        sub &= owner != len(scene.primitives)  # the nanodiamond is excluded
        inside_domain = ((X >= lo[0]) & (X <= hi[0]) & (Y >= lo[1]) & (Y <= hi[1])
                         & (zc >= lo[2]) & (zc <= hi[2]))
        hits += int(np.count_nonzero(sub & inside_domain))
    return hits / resolution ** 3
