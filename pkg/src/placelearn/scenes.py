"""Synthetic placing scenes: parametric objects, environments, and labeled datasets.

Objects are sampled on their surface, centered at the sample centroid, and
stored in a canonical upright pose with the natural symmetry axis along +z
(a rod stands along +z, a plate lies with its face normal along +z).
Environments are world-frame clouds whose support structure starts at z = 0.

Labels come from two oracles:
  * stability -- the rigid-body settle simulation (:mod:`placelearn.physics`);
  * preference -- an explicit rule table (``data/preference_rules.json``)
    mapping (object class, environment class) to an orientation cone plus
    optional location constraints.  Y = +1 iff stable AND preferred.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import _kernels
from . import physics
from .features import FeatureConfig, extract_batch
from .geometry import (
    OBJECT_FRAME,
    WORLD_FRAME,
    Placement,
    PointCloud,
    collision_filter,
    default_orientations,
    sample_candidates,
)

log = logging.getLogger(__name__)

OBJECT_CLASSES = ("plate", "bowl", "mug", "martini", "rod", "disc", "hook_item", "fork")
ENV_CLASSES = ("flat", "rack_slots", "pen_holder", "hook_bar", "stemware_holder")

MIN_OBJECT_POINTS = 200
MIN_ENV_POINTS = 500

# Structural surfaces (rack walls, support posts) are sampled thinner than
# surfaces objects rest on; contact reliability only needs one dense side.
STRUCT_DENSITY_FACTOR = 0.5


@dataclass(frozen=True)
class ObjectSpec:
    """Parametric object: class name, dimensions in meters, sampling density.

    ``density`` is in points per square meter of surface area; generated
    clouds always have at least ``MIN_OBJECT_POINTS`` points.
    """

    kind: str
    params: dict = field(default_factory=dict)
    density: float = 10_000.0

    def __post_init__(self):
        if self.kind not in OBJECT_CLASSES:
            raise ValueError(f"unknown object class {self.kind!r}")
        if self.density <= 0:
            raise ValueError("degenerate dimensions: density must be positive")
        for name, value in self.params.items():
            if value <= 0:
                raise ValueError(f"degenerate dimensions: {name}={value}")


@dataclass(frozen=True)
class EnvSpec:
    """Parametric environment: class name, geometry parameters, density."""

    kind: str
    params: dict = field(default_factory=dict)
    density: float = 150_000.0

    def __post_init__(self):
        if self.kind not in ENV_CLASSES:
            raise ValueError(f"unknown environment class {self.kind!r}")
        if self.density <= 0:
            raise ValueError("degenerate dimensions: density must be positive")
        for name, value in self.params.items():
            if name == "n_slots":
                if int(value) < 1:
                    raise ValueError(f"degenerate dimensions: {name}={value}")
            elif value <= 0:
                raise ValueError(f"degenerate dimensions: {name}={value}")


@dataclass(frozen=True)
class PlacingTask:
    """One (object, environment) pairing with its stable corpus-wide id."""

    object_spec: ObjectSpec
    env_spec: EnvSpec
    task_id: int

    @property
    def name(self) -> str:
        return f"{self.object_spec.kind}@{self.env_spec.kind}"


@dataclass(frozen=True)
class LabeledPlacement:
    placement: Placement
    features: np.ndarray
    stable: bool
    preferred: bool
    y: int

    def __post_init__(self):
        if self.preferred and not self.stable:
            raise ValueError("preferred placement must be stable")
        if self.y != (1 if self.preferred else -1):
            raise ValueError("label must be +1 iff preferred")


# ---------------------------------------------------------------------------
# surface sampling primitives
# ---------------------------------------------------------------------------


def _count_for(area: float, density: float) -> int:
    return max(1, int(round(area * density)))


# Every primitive returns (points, normals); normals are exact unit outward
# surface normals. Object generators discard them (only environments need
# normals, for the contact model), via `_assemble`.


def _disc(rng, n, radius, z, cx=0.0, cy=0.0, nz=1.0):
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, n))
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    pts = np.column_stack([cx + r * np.cos(phi), cy + r * np.sin(phi), np.full(n, z)])
    return pts, np.tile((0.0, 0.0, float(nz)), (n, 1))


def _annulus(rng, n, r0, r1, z, nz=1.0):
    r = np.sqrt(rng.uniform(r0 * r0, r1 * r1, n))
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi), np.full(n, z)])
    return pts, np.tile((0.0, 0.0, float(nz)), (n, 1))


def _rect(rng, n, x0, x1, y0, y1, z, nz=1.0):
    pts = np.column_stack(
        [rng.uniform(x0, x1, n), rng.uniform(y0, y1, n), np.full(n, z)]
    )
    return pts, np.tile((0.0, 0.0, float(nz)), (n, 1))


def _wall_x(rng, n, x, y0, y1, z0, z1, nx=1.0):
    """Vertical plane sheet at fixed x, facing along ``nx``."""
    pts = np.column_stack(
        [np.full(n, x), rng.uniform(y0, y1, n), rng.uniform(z0, z1, n)]
    )
    return pts, np.tile((float(nx), 0.0, 0.0), (n, 1))


def _cylinder_z(rng, n, radius, z0, z1, cx=0.0, cy=0.0, inward=False):
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    c, s = np.cos(phi), np.sin(phi)
    pts = np.column_stack([cx + radius * c, cy + radius * s, rng.uniform(z0, z1, n)])
    sign = -1.0 if inward else 1.0
    return pts, np.column_stack([sign * c, sign * s, np.zeros(n)])


def _cylinder_axis(rng, n, radius, length, center, axis):
    """Cylinder side surface with axis along 'x' or 'y'."""
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    along = rng.uniform(-0.5 * length, 0.5 * length, n)
    cph, sph = np.cos(phi), np.sin(phi)
    u = radius * cph
    v = radius * sph
    c = np.asarray(center, dtype=np.float64)
    zeros = np.zeros(n)
    if axis == "x":
        pts = np.column_stack([along, u, v])
        nrm = np.column_stack([zeros, cph, sph])
    elif axis == "y":
        pts = np.column_stack([u, along, v])
        nrm = np.column_stack([cph, zeros, sph])
    else:
        raise ValueError(f"unsupported axis {axis!r}")
    return pts + c, nrm


def _cone_z(rng, n, r_top, z_apex, z_top):
    """Open cone from an apex on the z-axis widening to r_top at z_top."""
    # area element grows linearly with distance from the apex
    t = np.sqrt(rng.uniform(0.0, 1.0, n))
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    r = r_top * t
    z = z_apex + (z_top - z_apex) * t
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    # outward-down normal of the flank (away from the axis)
    h = z_top - z_apex
    slant = math.hypot(r_top, h)
    nrm = np.column_stack(
        [
            (h / slant) * np.cos(phi),
            (h / slant) * np.sin(phi),
            np.full(n, -r_top / slant),
        ]
    )
    return pts, nrm


def _hemisphere_shell(rng, n, radius):
    """Lower half-sphere surface opening upward; pole at z = 0, rim at z = radius."""
    # uniform on the sphere: z' uniform in [-1, 0]
    zn = rng.uniform(-1.0, 0.0, n)
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    s = np.sqrt(1.0 - zn * zn)
    pts = np.column_stack(
        [
            radius * s * np.cos(phi),
            radius * s * np.sin(phi),
            radius + radius * zn,
        ]
    )
    return pts, np.column_stack([s * np.cos(phi), s * np.sin(phi), zn])


def _torus_arc(rng, n, center, arc_radius, tube_radius, ang0, ang1):
    """Arc of a torus lying in the x-z plane around ``center``.

    The arc parameter runs from ang0 to ang1 (radians, measured in the x-z
    plane); the tube circle adds the y component.
    """
    t = rng.uniform(ang0, ang1, n)
    psi = rng.uniform(0.0, 2.0 * np.pi, n)
    ring = arc_radius + tube_radius * np.cos(psi)
    c = np.asarray(center, dtype=np.float64)
    pts = np.column_stack(
        [
            c[0] + ring * np.cos(t),
            c[1] + tube_radius * np.sin(psi),
            c[2] + ring * np.sin(t),
        ]
    )
    nrm = np.column_stack(
        [np.cos(t) * np.cos(psi), np.sin(psi), np.sin(t) * np.cos(psi)]
    )
    return pts, nrm


def _assemble(parts):
    """Concatenate (points, normals) pieces, keeping only the points."""
    pts = np.concatenate([p for p, _ in parts if len(p)], axis=0)
    return np.ascontiguousarray(pts, dtype=np.float64)


def _assemble_surface(parts):
    """Concatenate (points, normals) pieces, keeping both."""
    kept = [(p, m) for p, m in parts if len(p)]
    pts = np.concatenate([p for p, _ in kept], axis=0)
    nrm = np.concatenate([m for _, m in kept], axis=0)
    return (
        np.ascontiguousarray(pts, dtype=np.float64),
        np.ascontiguousarray(nrm, dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# object generators
# ---------------------------------------------------------------------------


def _gen_plate(params, density, rng):
    r = params["radius"]
    t = params["thickness"]
    n_face = _count_for(np.pi * r * r, density)
    n_rim = _count_for(2.0 * np.pi * r * t, density)
    return _assemble(
        [
            _disc(rng, n_face, r, 0.0),
            _disc(rng, n_face, r, t),
            _cylinder_z(rng, max(n_rim, 24), r, 0.0, t),
        ]
    )


def _gen_bowl(params, density, rng):
    # Pure hemispherical shell, opening up: pole at z=0, rim circle at z=radius.
    r = params["radius"]
    n = _count_for(2.0 * np.pi * r * r, density)
    return _hemisphere_shell(rng, n, r)[0]


def _gen_mug(params, density, rng):
    r = params["radius"]
    h = params["height"]
    hr = params["handle_radius"]
    tube = params["handle_tube"]
    n_side = _count_for(2.0 * np.pi * r * h, density)
    n_bottom = _count_for(np.pi * r * r, density)
    n_handle = _count_for(2.0 * np.pi * tube * (np.pi * hr), density)
    # open top; half-torus handle in the x-z plane, attached at mid-height
    handle = _torus_arc(
        rng,
        max(n_handle, 40),
        (r, 0.0, 0.5 * h),
        hr,
        tube,
        -0.5 * np.pi,
        0.5 * np.pi,
    )
    return _assemble(
        [
            _cylinder_z(rng, n_side, r, 0.0, h),
            _disc(rng, n_bottom, r, 0.0),
            handle,
        ]
    )


def _gen_martini(params, density, rng):
    rb = params["bowl_radius"]
    hb = params["bowl_depth"]
    hs = params["stem_height"]
    rf = params["base_radius"]
    rs = params.get("stem_radius", 0.004)
    slant = math.hypot(rb, hb)
    n_base = _count_for(np.pi * rf * rf, density)
    n_stem = _count_for(2.0 * np.pi * rs * hs, density)
    n_cone = _count_for(np.pi * rb * slant, density)
    return _assemble(
        [
            _disc(rng, n_base, rf, 0.0),
            _cylinder_z(rng, max(n_stem, 30), rs, 0.0, hs),
            _cone_z(rng, n_cone, rb, hs, hs + hb),
        ]
    )


def _gen_rod(params, density, rng):
    r = params["radius"]
    length = params["length"]
    n_side = _count_for(2.0 * np.pi * r * length, density)
    n_cap = max(12, _count_for(np.pi * r * r, density))
    return _assemble(
        [
            _cylinder_z(rng, n_side, r, 0.0, length),
            _disc(rng, n_cap, r, 0.0),
            _disc(rng, n_cap, r, length),
        ]
    )


def _gen_disc(params, density, rng):
    return _gen_plate(params, density, rng)


def _gen_hook_item(params, density, rng):
    """Rod with a closed hanging loop at the top (an ornament-hanger shape).

    The loop is a full ring in the local x-z plane centered on the shaft
    axis, so hanging from a horizontal bar leaves the shaft plumb: the
    hanging pose IS the canonical upright pose.
    """
    rs = params["shaft_radius"]
    ls = params["shaft_length"]
    rh = params["hook_radius"]
    tube = params["hook_tube"]
    ring_len = 2.0 * np.pi * rh
    n_side = _count_for(2.0 * np.pi * rs * ls, density)
    n_cap = max(12, _count_for(np.pi * rs * rs, density))
    n_ring = max(60, _count_for(2.0 * np.pi * tube * ring_len, density))
    return _assemble(
        [
            _cylinder_z(rng, n_side, rs, 0.0, ls),
            _disc(rng, n_cap, rs, 0.0),
            _disc(rng, n_cap, rs, ls),
            _torus_arc(rng, n_ring, (0.0, 0.0, ls + rh), rh, tube, 0.0, 2.0 * np.pi),
        ]
    )


def _gen_fork(params, density, rng):
    """Flat fork lying in the x-y plane: box handle plus four thin tines."""
    hl = params["handle_length"]
    hw = params["handle_width"]
    t = params["thickness"]
    tl = params["tine_length"]
    tr = params.get("tine_radius", 0.0015)
    n_face = _count_for(hl * hw, density)
    faces = [
        _rect(rng, n_face, -hl, 0.0, -0.5 * hw, 0.5 * hw, 0.0),
        _rect(rng, n_face, -hl, 0.0, -0.5 * hw, 0.5 * hw, t),
    ]
    tines = []
    n_tine = max(30, _count_for(2.0 * np.pi * tr * tl, density))
    for yo in np.linspace(-0.5 * hw, 0.5 * hw, 4):
        tines.append(
            _cylinder_axis(rng, n_tine, tr, tl, (0.5 * tl, yo, 0.5 * t), "x")
        )
    return _assemble(faces + tines)


_OBJECT_GENERATORS = {
    "plate": _gen_plate,
    "bowl": _gen_bowl,
    "mug": _gen_mug,
    "martini": _gen_martini,
    "rod": _gen_rod,
    "disc": _gen_disc,
    "hook_item": _gen_hook_item,
    "fork": _gen_fork,
}


def generate_object(spec: ObjectSpec, seed: int) -> PointCloud:
    """Sample the object surface deterministically; centered at its centroid."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pts = _OBJECT_GENERATORS[spec.kind](spec.params, spec.density, rng)
    if len(pts) < MIN_OBJECT_POINTS:
        extra_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
        reps = [pts]
        while sum(len(p) for p in reps) < MIN_OBJECT_POINTS:
            reps.append(_OBJECT_GENERATORS[spec.kind](spec.params, spec.density, extra_rng))
        pts = np.ascontiguousarray(np.concatenate(reps, axis=0))
    pts = pts - pts.mean(axis=0)
    return PointCloud(pts, frame=OBJECT_FRAME)


# ---------------------------------------------------------------------------
# environment generators
# ---------------------------------------------------------------------------


def _gen_flat(params, density, rng):
    size = params["size"]
    n = _count_for(size * size, density)
    return _assemble_surface(
        [_rect(rng, n, -0.5 * size, 0.5 * size, -0.5 * size, 0.5 * size, 0.0)]
    )


def _gen_rack_slots(params, density, rng):
    """Dish rack: evenly pitched thin vertical walls on a base plate.

    Each wall is a slab: two facing sheets with opposed x normals plus a top
    cap strip, so objects can neither sink through a wall sideways nor
    through its top edge (wide items rest across the cap strips).
    """
    n_slots = int(params["n_slots"])
    pitch = params["pitch"]
    height = params["wall_height"]
    span = params["wall_span"]
    thick = params.get("wall_thickness", 0.006)
    margin = params.get("base_margin", 0.015)
    if thick >= pitch:
        raise ValueError("degenerate dimensions: wall_thickness >= pitch")
    x0 = -0.5 * n_slots * pitch
    ht = 0.5 * thick
    n_sheet = _count_for(span * height, density * STRUCT_DENSITY_FACTOR)
    n_cap = max(30, _count_for(span * thick, density))
    parts = []
    for i in range(n_slots + 1):
        xc = x0 + i * pitch
        parts.append(
            _wall_x(rng, n_sheet, xc - ht, -0.5 * span, 0.5 * span, 0.0, height, nx=-1.0)
        )
        parts.append(
            _wall_x(rng, n_sheet, xc + ht, -0.5 * span, 0.5 * span, 0.0, height, nx=1.0)
        )
        parts.append(
            _rect(rng, n_cap, xc - ht, xc + ht, -0.5 * span, 0.5 * span, height)
        )
    n_base = _count_for((n_slots * pitch + 2 * margin) * (span + 2 * margin), density)
    parts.append(
        _rect(
            rng,
            n_base,
            x0 - margin,
            -x0 + margin,
            -0.5 * span - margin,
            0.5 * span + margin,
            0.0,
        )
    )
    return _assemble_surface(parts)


def _gen_pen_holder(params, density, rng):
    """Open cup whose well is a steep V-taper: wall sheets, a rim ring, and
    an interior cone rising from an apex on the axis to the bore radius.

    The taper slope (~33 degrees) exceeds the friction angle, so a dropped
    shaft's tip slides to the center instead of wedging against a wall
    corner.  The cup is deeper than the shafts placed in it: a fully
    enclosed shaft leans until its top end touches the bore, so its settled
    tilt is atan(bore slack / shaft length) -- the longest available brace
    -- instead of the much larger angle a rim pivot partway down would give.

    The wall must be thick relative to contact resolution: with two facing
    sheets, a point pressed deeper than half the gap snaps to the far sheet,
    whose normal then expels it through the wall.  Same reason there is no
    exterior bottom sheet under the taper -- a down-facing layer just below
    the apex would pump anything that reaches the gap straight through the
    base (and a sensor looking into the cup never sees the underside anyway).
    """
    r = params["inner_radius"]
    h = params["height"]
    thick = params.get("wall_thickness", 0.008)
    apex = params.get("funnel_apex", 0.002)
    funnel_top = params.get("funnel_top", 0.015)
    n_wall = max(
        300, _count_for(2.0 * np.pi * r * h, density * STRUCT_DENSITY_FACTOR)
    )
    n_rim = max(60, _count_for(2.0 * np.pi * r * thick, density))
    slant = math.hypot(r, funnel_top - apex)
    # The taper is the load-bearing surface; sample it densely so contact
    # anchor jitter cannot kick a seated shaft into a slow axial spin.
    n_cone = max(1500, _count_for(np.pi * r * slant, 2.0 * density))
    cone_pts, cone_nrm = _cone_z(rng, n_cone, r, apex, funnel_top)
    return _assemble_surface(
        [
            _cylinder_z(rng, n_wall, r, funnel_top, h, inward=True),
            _cylinder_z(rng, n_wall, r + thick, 0.0, h),
            _annulus(rng, n_rim, r, r + thick, h),
            (cone_pts, -cone_nrm),  # cup interior: normals face up-inward
        ]
    )


def _gen_hook_bar(params, density, rng):
    """Wall-mounted horizontal bar along y (a towel/garment rail).

    The sensed geometry is the bar plus the two bracket arms that drop from
    its ends toward the mount; there is no table under it.  The cloud's
    bounding box therefore hugs the bar and the space just below it, so
    candidate locations concentrate where hanging is geometrically possible,
    and anything that misses free-falls into the drop-out bail quickly.
    """
    rb = params["bar_radius"]
    lb = params["bar_length"]
    hb = params["bar_height"]
    drop = params.get("bracket_drop", 0.10)
    rp = params.get("post_radius", 0.005)
    struct = density * STRUCT_DENSITY_FACTOR
    n_bar = _count_for(2.0 * np.pi * rb * lb, density)
    n_post = _count_for(2.0 * np.pi * rp * drop, struct)
    return _assemble_surface(
        [
            _cylinder_axis(rng, max(n_bar, 600), rb, lb, (0.0, 0.0, hb), "y"),
            _cylinder_z(rng, max(n_post, 80), rp, hb - drop, hb, 0.0, -0.5 * lb),
            _cylinder_z(rng, max(n_post, 80), rp, hb - drop, hb, 0.0, 0.5 * lb),
        ]
    )


def _gen_stemware_holder(params, density, rng):
    """Two parallel rails along x on corner posts; deliberately no ground plate,
    so the environment offers no flat patch."""
    gap = params["rail_gap"]
    rr = params["rail_radius"]
    lr = params["rail_length"]
    hr = params["rail_height"]
    rp = params.get("post_radius", 0.004)
    struct = density * STRUCT_DENSITY_FACTOR
    n_rail = _count_for(2.0 * np.pi * rr * lr, density)
    n_post = _count_for(2.0 * np.pi * rp * hr, struct)
    post_x = 0.5 * lr - 0.01
    parts = [
        _cylinder_axis(rng, max(n_rail, 500), rr, lr, (0.0, -0.5 * gap, hr), "x"),
        _cylinder_axis(rng, max(n_rail, 500), rr, lr, (0.0, 0.5 * gap, hr), "x"),
    ]
    for sx in (-post_x, post_x):
        for sy in (-0.5 * gap, 0.5 * gap):
            parts.append(_cylinder_z(rng, max(n_post, 80), rp, 0.0, hr, sx, sy))
    return _assemble_surface(parts)


_ENV_GENERATORS = {
    "flat": _gen_flat,
    "rack_slots": _gen_rack_slots,
    "pen_holder": _gen_pen_holder,
    "hook_bar": _gen_hook_bar,
    "stemware_holder": _gen_stemware_holder,
}


def generate_env(spec: EnvSpec, seed: int) -> PointCloud:
    """Sample the environment surface with its outward normals; support
    structure starts at z = 0."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pieces = [_ENV_GENERATORS[spec.kind](spec.params, spec.density, rng)]
    if len(pieces[0][0]) < MIN_ENV_POINTS:
        extra_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
        while sum(len(p) for p, _ in pieces) < MIN_ENV_POINTS:
            pieces.append(
                _ENV_GENERATORS[spec.kind](spec.params, spec.density, extra_rng)
            )
    pts, nrm = _assemble_surface(pieces)
    return PointCloud(pts, frame=WORLD_FRAME, normals=nrm)


# ---------------------------------------------------------------------------
# preference rules
# ---------------------------------------------------------------------------

_RULES_CACHE = None


def load_preference_rules() -> dict:
    """Load the packaged preference rule table (cached)."""
    global _RULES_CACHE
    if _RULES_CACHE is None:
        text = resources.files("placelearn").joinpath("data/preference_rules.json").read_text()
        _RULES_CACHE = json.loads(text)
    return _RULES_CACHE


def _orientation_ok(kind: str, rot_z: np.ndarray, cos_cone: float) -> bool:
    cz = float(rot_z[2])
    if kind == "z_up":
        return cz >= cos_cone
    if kind == "z_down":
        return -cz >= cos_cone
    if kind == "z_vertical_abs":
        return abs(cz) >= cos_cone
    if kind == "z_horizontal":
        # within the cone of the horizontal plane: |cos(tilt from vertical)|
        # no larger than sin(cone half-angle)
        return abs(cz) <= math.sqrt(max(0.0, 1.0 - cos_cone * cos_cone))
    if kind == "z_along_x_abs":
        return abs(float(rot_z[0])) >= cos_cone
    raise ValueError(f"unknown orientation rule {kind!r}")


def _location_ok(kind: str, loc: np.ndarray, env: EnvSpec) -> bool:
    if kind == "inside_bore":
        return math.hypot(loc[0], loc[1]) < env.params["inner_radius"]
    if kind == "near_bar":
        # bar runs along y at x = 0
        return abs(loc[0]) <= 0.05
    if kind == "hanging_below_bar":
        # A capture starts threaded (the bar already passes through the
        # hook's ring), which puts the starting center of mass below the
        # bar by roughly the ring-to-COM offset.
        bar_z = env.params["bar_height"]
        return bar_z - 0.10 <= loc[2] < bar_z
    if kind == "above_rails":
        return loc[2] > env.params["rail_height"]
    raise ValueError(f"unknown location rule {kind!r}")


def preference_label(task: PlacingTask, p: Placement, stable: bool) -> bool:
    """Apply the rule table; unstable placements are never preferred."""
    table = load_preference_rules()
    rules = table["rules"]
    key = f"{task.object_spec.kind}|{task.env_spec.kind}"
    rule = rules.get(key) or rules.get(f"*|{task.env_spec.kind}")
    if rule is None:
        raise ValueError(f"no preference rule for {key}")
    if not stable:
        return False
    cos_cone = math.cos(math.radians(table["cone_half_angle_deg"]))
    rot_z = p.orientation.matrix()[:, 2]
    if not _orientation_ok(rule["orientation"], rot_z, cos_cone):
        return False
    for loc_rule in rule.get("location", ()):
        if not _location_ok(loc_rule, p.location, task.env_spec):
            return False
    return True


# ---------------------------------------------------------------------------
# default corpus
# ---------------------------------------------------------------------------


def default_objects() -> dict:
    """The six-object desk corpus (subset of the eight supported classes)."""
    return {
        "plate": ObjectSpec("plate", {"radius": 0.075, "thickness": 0.005}, 10_000),
        "bowl": ObjectSpec("bowl", {"radius": 0.075}, 16_000),
        "mug": ObjectSpec(
            "mug",
            {"radius": 0.04, "height": 0.09, "handle_radius": 0.025, "handle_tube": 0.003},
            18_000,
        ),
        "martini": ObjectSpec(
            "martini",
            {
                "bowl_radius": 0.05,
                "bowl_depth": 0.065,
                "stem_height": 0.05,
                "base_radius": 0.035,
            },
            20_000,
        ),
        "rod": ObjectSpec("rod", {"radius": 0.009, "length": 0.15}, 60_000),
        "hook_item": ObjectSpec(
            "hook_item",
            {
                "shaft_radius": 0.006,
                "shaft_length": 0.125,
                "hook_radius": 0.035,
                "hook_tube": 0.002,
            },
            55_000,
        ),
    }


def default_envs() -> dict:
    return {
        # The table is sampled more sparsely than the structured
        # environments: contact scans over its big footprint dominate the
        # settle cost, and 80k pts/m2 still spaces samples well inside the
        # collision-filter clearance.
        "flat": EnvSpec("flat", {"size": 0.4}, 80_000),
        "rack_slots": EnvSpec(
            "rack_slots",
            {"n_slots": 9, "pitch": 0.026, "wall_height": 0.13, "wall_span": 0.22},
        ),
        "pen_holder": EnvSpec("pen_holder", {"inner_radius": 0.020, "height": 0.165}),
        "hook_bar": EnvSpec(
            "hook_bar", {"bar_radius": 0.006, "bar_length": 0.13, "bar_height": 0.20}
        ),
        "stemware_holder": EnvSpec(
            "stemware_holder",
            {"rail_gap": 0.06, "rail_radius": 0.008, "rail_length": 0.20, "rail_height": 0.13},
        ),
    }


# (env class, object class) pairs that make physical sense, mirroring a sparse
# pairing of dishes/racks, pens/holders, canes/hooks, stemware/rails.
DEFAULT_COMPAT = (
    ("flat", "plate"),
    ("flat", "bowl"),
    ("flat", "mug"),
    ("flat", "martini"),
    ("flat", "rod"),
    ("flat", "hook_item"),
    ("rack_slots", "plate"),
    ("rack_slots", "bowl"),
    ("rack_slots", "mug"),
    ("rack_slots", "martini"),
    # A rod rests across the wall caps; it cannot drop into a channel (the
    # channel gap is narrower than rod diameter + collision clearance), and
    # the hook's ring is wider than the pen holder's bore, so neither pair
    # below pairs the other way around.
    ("rack_slots", "rod"),
    ("pen_holder", "rod"),
    ("hook_bar", "hook_item"),
    ("stemware_holder", "martini"),
)

DEFAULT_OBJECT_ORDER = ("plate", "bowl", "mug", "martini", "rod", "hook_item")
DEFAULT_ENV_ORDER = ("flat", "rack_slots", "pen_holder", "hook_bar", "stemware_holder")


def task_id_for(env_kind: str, obj_kind: str,
                env_order=DEFAULT_ENV_ORDER, obj_order=DEFAULT_OBJECT_ORDER) -> int:
    """task_id = M * env_index + object_index with M = number of objects."""
    return len(obj_order) * env_order.index(env_kind) + obj_order.index(obj_kind)


def default_corpus() -> list:
    """The 14 compatible tasks of the 5-environment x 6-object desk corpus."""
    objs = default_objects()
    envs = default_envs()
    tasks = []
    for env_kind, obj_kind in DEFAULT_COMPAT:
        tasks.append(
            PlacingTask(objs[obj_kind], envs[env_kind], task_id_for(env_kind, obj_kind))
        )
    return sorted(tasks, key=lambda t: t.task_id)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetConfig:
    """Knobs for labeled dataset generation (everything seeded explicitly)."""

    seed: int = 0
    # Clouds are seeded separately so different candidate draws (train vs
    # test splits) still see the identical scene geometry.  None reuses
    # `seed`.
    geometry_seed: int | None = None
    n_orientations: int = 18
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)
    sim_params: physics.SimParams = field(default_factory=physics.SimParams)
    headroom: float = 0.10
    require_positive: bool = True
    max_attempts: int = 5


@dataclass
class TaskDataset:
    """Labeled, featurized candidates for one task (collision survivors only)."""

    task: PlacingTask
    candidate_ids: np.ndarray  # (m,) int64, = 18*loc_index + orientation_index
    locations: np.ndarray  # (m, 3)
    quaternions: np.ndarray  # (m, 4) w,x,y,z
    X: np.ndarray  # (m, 120)
    stable: np.ndarray  # (m,) bool
    preferred: np.ndarray  # (m,) bool
    y: np.ndarray  # (m,) int8 in {+1, -1}
    n_candidates: int
    seed: int
    attempts: int

    @property
    def counts(self) -> dict:
        return {
            "candidates": int(self.n_candidates),
            "collision_free": int(len(self.candidate_ids)),
            "stable": int(self.stable.sum()),
            "preferred": int(self.preferred.sum()),
        }

    def labeled_placements(self) -> list:
        from .geometry import Rotation

        out = []
        for i in range(len(self.candidate_ids)):
            out.append(
                LabeledPlacement(
                    Placement(
                        self.locations[i],
                        Rotation(self.quaternions[i]),
                        candidate_id=int(self.candidate_ids[i]),
                    ),
                    self.X[i],
                    bool(self.stable[i]),
                    bool(self.preferred[i]),
                    int(self.y[i]),
                )
            )
        return out


def _attempt_seed(base_seed: int, task_id: int, attempt: int) -> int:
    ss = np.random.SeedSequence(base_seed, spawn_key=(task_id, attempt))
    return int(ss.generate_state(1)[0])


def build_task_dataset(
    task: PlacingTask,
    n_loc: int,
    cfg: DatasetConfig,
    obj: PointCloud,
    env: PointCloud,
) -> TaskDataset:
    """Sample, filter, settle, and label the candidates of a single task."""
    orientations = default_orientations()[: cfg.n_orientations]
    sim = cfg.sim_params
    env_grid = physics.env_contact_grid(env, sim)
    support_grid = _kernels.support_grid(env.points, cell=max(0.05, cfg.feature_config.support_radius))

    for attempt in range(cfg.max_attempts):
        seed = _attempt_seed(cfg.seed, task.task_id, attempt)
        candidates = sample_candidates(
            env, n_loc, orientations, rng_seed=seed, headroom=cfg.headroom
        )
        survivors = collision_filter(
            obj, env, candidates, clearance=cfg.feature_config.clearance
        )
        m = len(survivors)
        if m == 0:
            log.warning("task %d (%s): no collision-free candidates", task.task_id, task.name)
            return TaskDataset(
                task,
                np.zeros(0, dtype=np.int64),
                np.zeros((0, 3)),
                np.zeros((0, 4)),
                np.zeros((0, 120)),
                np.zeros(0, dtype=bool),
                np.zeros(0, dtype=bool),
                np.zeros(0, dtype=np.int8),
                n_candidates=len(candidates),
                seed=seed,
                attempts=attempt + 1,
            )

        stable = np.zeros(m, dtype=bool)
        for i, cand in enumerate(survivors):
            start = Placement(cand.location, cand.orientation)
            result = physics.settle(obj, start, env, sim, env_grid=env_grid)
            stable[i] = physics.label_validity(start, result, sim.validity_delta)
        preferred = np.array(
            [
                preference_label(task, cand, bool(stable[i]))
                for i, cand in enumerate(survivors)
            ],
            dtype=bool,
        )
        y = np.where(preferred, 1, -1).astype(np.int8)
        if y.max(initial=-1) > 0 or not cfg.require_positive:
            X = extract_batch(obj, env, survivors, cfg.feature_config, support_grid=support_grid)
            return TaskDataset(
                task,
                np.array([c.candidate_id for c in survivors], dtype=np.int64),
                np.stack([c.location for c in survivors]),
                np.stack([c.orientation.q for c in survivors]),
                X,
                stable,
                preferred,
                y,
                n_candidates=len(candidates),
                seed=seed,
                attempts=attempt + 1,
            )
        log.warning(
            "task %d (%s): zero positives with seed %d; regenerating (attempt %d)",
            task.task_id,
            task.name,
            seed,
            attempt + 2,
        )
    raise RuntimeError(
        f"task {task.task_id} ({task.name}): no positive candidates after "
        f"{cfg.max_attempts} regeneration attempts"
    )


def corpus_clouds(tasks, seed: int):
    """Generate each distinct object/environment cloud exactly once.

    Objects keep the same sampled cloud across every task they appear in, so
    per-task features and labels are comparable corpus-wide.
    """
    obj_clouds = {}
    env_clouds = {}
    for t in tasks:
        ok = t.object_spec.kind
        ek = t.env_spec.kind
        if ok not in obj_clouds:
            oseed = int(
                np.random.SeedSequence(
                    seed, spawn_key=(101, OBJECT_CLASSES.index(ok))
                ).generate_state(1)[0]
            )
            obj_clouds[ok] = generate_object(t.object_spec, oseed)
        if ek not in env_clouds:
            eseed = int(
                np.random.SeedSequence(
                    seed, spawn_key=(202, ENV_CLASSES.index(ek))
                ).generate_state(1)[0]
            )
            env_clouds[ek] = generate_env(t.env_spec, eseed)
    return obj_clouds, env_clouds


def build_dataset(tasks, n_loc: int, cfg: DatasetConfig) -> dict:
    """Build labeled datasets for every task; returns {task_id: TaskDataset}."""
    if not tasks:
        raise ValueError("no tasks given")
    gseed = cfg.seed if cfg.geometry_seed is None else cfg.geometry_seed
    obj_clouds, env_clouds = corpus_clouds(tasks, gseed)
    out = {}
    for t in sorted(tasks, key=lambda t: t.task_id):
        ds = build_task_dataset(
            t, n_loc, cfg, obj_clouds[t.object_spec.kind], env_clouds[t.env_spec.kind]
        )
        out[t.task_id] = ds
        log.info("task %d (%s): %s", t.task_id, t.name, ds.counts)
    return out
