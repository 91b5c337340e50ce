"""Point clouds, rigid transforms, candidate sampling and collision filtering.

Conventions used everywhere in this package:
  * coordinates are metric (meters), z is vertical, gravity acts along -z
  * quaternions are (w, x, y, z), unit norm, canonicalized so w >= 0
  * point clouds are float64 arrays of shape (n, 3)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

OBJECT_FRAME = "object-local"
WORLD_FRAME = "world"

QUAT_NORM_TOL = 1e-9


class InvalidRotationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# quaternions
# ---------------------------------------------------------------------------

def quat_normalize(q):
    """Return the unit, w>=0 canonical form of a quaternion array (w,x,y,z)."""
    q = np.asarray(q, dtype=np.float64)
    n = math.sqrt(float(q @ q))
    if n == 0.0 or not np.isfinite(n):
        raise InvalidRotationError("invalid rotation: zero or non-finite quaternion")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_is_unit(q, tol=QUAT_NORM_TOL):
    n = float(np.asarray(q, dtype=np.float64) @ np.asarray(q, dtype=np.float64))
    return abs(math.sqrt(n) - 1.0) <= tol


def quat_multiply(a, b):
    """Hamilton product a*b, both (w,x,y,z)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / math.sqrt(float(axis @ axis))
    h = 0.5 * angle
    s = math.sin(h)
    return quat_normalize(np.array([math.cos(h), s * axis[0], s * axis[1], s * axis[2]]))


def quat_to_matrix(q):
    """3x3 rotation matrix from a unit quaternion (w,x,y,z)."""
    w, x, y, z = q
    return np.array(
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
            [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
            [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
        ]
    )


def quat_angle(a, b):
    """Geodesic angle in radians between two unit quaternions (double-cover aware)."""
    d = abs(float(np.asarray(a) @ np.asarray(b)))
    d = min(d, 1.0)
    return 2.0 * math.acos(d)


@dataclass(frozen=True)
class Rotation:
    """Unit quaternion wrapper; always normalized and canonicalized (w >= 0)."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        if q.shape != (4,):
            raise InvalidRotationError("invalid rotation: expected 4 components")
        if not quat_is_unit(q):
            raise InvalidRotationError("invalid rotation: quaternion norm != 1")
        object.__setattr__(self, "q", quat_normalize(q))

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_axis_angle(axis, angle) -> "Rotation":
        return Rotation(quat_from_axis_angle(axis, angle))

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def compose(self, other: "Rotation") -> "Rotation":
        """self applied after other."""
        return Rotation(quat_normalize(quat_multiply(self.q, other.q)))

    def angle_to(self, other: "Rotation") -> float:
        return quat_angle(self.q, other.q)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return transform_points(points, self.q, np.zeros(3))


# ---------------------------------------------------------------------------
# point clouds and boxes
# ---------------------------------------------------------------------------

@dataclass
class PointCloud:
    """Ordered set of 3D points tagged with the frame they live in.

    Environment clouds may carry per-point outward surface normals (used by
    the contact model); object clouds never need them.
    """

    points: np.ndarray
    frame: str = WORLD_FRAME
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("point cloud must have shape (n, 3)")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains NaN/Inf")
        self.points = pts
        if self.normals is not None:
            nrm = np.ascontiguousarray(self.normals, dtype=np.float64)
            if nrm.shape != pts.shape:
                raise ValueError("normals must match points in shape")
            if not np.all(np.isfinite(nrm)):
                raise ValueError("normals contain NaN/Inf")
            lens = np.sqrt(np.sum(nrm * nrm, axis=1))
            if np.any(lens < 1e-12):
                raise ValueError("zero-length normal")
            self.normals = nrm / lens[:, None]
        if self.frame not in (OBJECT_FRAME, WORLD_FRAME):
            raise ValueError(f"unknown frame {self.frame!r}")

    def __len__(self):
        return self.points.shape[0]

    def aabb(self) -> "Aabb":
        if len(self) == 0:
            raise ValueError("empty point cloud has no bounding box")
        return Aabb(self.points.min(axis=0), self.points.max(axis=0))


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned bounding box, min <= max componentwise."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64)
        hi = np.asarray(self.max, dtype=np.float64)
        if np.any(lo > hi):
            raise ValueError("Aabb min must be <= max componentwise")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    def extents(self) -> np.ndarray:
        return self.max - self.min

    def scaled(self, factor: float) -> "Aabb":
        """Box scaled by `factor` about its own center."""
        c = self.center()
        h = 0.5 * factor * self.extents()
        return Aabb(c - h, c + h)

    def padded(self, pad) -> "Aabb":
        pad = np.broadcast_to(np.asarray(pad, dtype=np.float64), (3,))
        return Aabb(self.min - pad, self.max + pad)


@dataclass(frozen=True)
class Placement:
    """Candidate pose of an object in the environment: where and how oriented."""

    location: np.ndarray
    orientation: Rotation
    candidate_id: int = 0

    def __post_init__(self):
        loc = np.asarray(self.location, dtype=np.float64)
        if loc.shape != (3,) or not np.all(np.isfinite(loc)):
            raise ValueError("placement location must be 3 finite reals")
        object.__setattr__(self, "location", loc)


# ---------------------------------------------------------------------------
# rigid transform application
# ---------------------------------------------------------------------------

def transform_points(points, quat, translation):
    """Apply p -> R p + t to each row.

    Written termwise (not as a matmul) so the compiled kernels, the numpy
    path and the test oracles perform bit-identical arithmetic.
    """
    pts = np.asarray(points, dtype=np.float64)
    m = quat_to_matrix(quat)
    t = np.asarray(translation, dtype=np.float64)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    out = np.empty_like(pts)
    out[:, 0] = m[0, 0] * x + m[0, 1] * y + m[0, 2] * z + t[0]
    out[:, 1] = m[1, 0] * x + m[1, 1] * y + m[1, 2] * z + t[1]
    out[:, 2] = m[2, 0] * x + m[2, 1] * y + m[2, 2] * z + t[2]
    return out


def apply_placement(obj: PointCloud, placement: Placement) -> PointCloud:
    """Pose an object-local cloud into the world frame."""
    if len(obj) == 0:
        raise ValueError("cannot pose an empty point cloud")
    if obj.frame != OBJECT_FRAME:
        raise ValueError("apply_placement expects an object-local cloud")
    if not quat_is_unit(placement.orientation.q):
        raise InvalidRotationError("invalid rotation")
    pts = transform_points(obj.points, placement.orientation.q, placement.location)
    return PointCloud(pts, frame=WORLD_FRAME)


# ---------------------------------------------------------------------------
# candidate orientations
# ---------------------------------------------------------------------------

_SQ2 = math.sqrt(0.5)

# Map the object's local +z onto each of the six axis directions.  Fixed,
# documented choices (rotation about y for +-x, about x for +-y and -z).
_UP_ALIGNMENTS = [
    ("+z", np.array([1.0, 0.0, 0.0, 0.0])),
    ("-z", np.array([0.0, 1.0, 0.0, 0.0])),          # 180 deg about x
    ("+x", np.array([_SQ2, 0.0, _SQ2, 0.0])),        # +90 deg about y
    ("-x", np.array([_SQ2, 0.0, -_SQ2, 0.0])),       # -90 deg about y
    ("+y", np.array([_SQ2, -_SQ2, 0.0, 0.0])),       # -90 deg about x
    ("-y", np.array([_SQ2, _SQ2, 0.0, 0.0])),        # +90 deg about x
]

_YAWS_DEG = (0.0, 60.0, 120.0)


def default_orientations() -> list[Rotation]:
    """The 18 candidate orientations: 6 axis alignments x 3 yaws.

    Yaw is applied about the world vertical after the axis alignment, so
    every orientation keeps the object's local z axis on one of the six
    world axis directions.
    """
    out = []
    for _, align in _UP_ALIGNMENTS:
        for yaw_deg in _YAWS_DEG:
            yaw = quat_from_axis_angle([0.0, 0.0, 1.0], math.radians(yaw_deg))
            out.append(Rotation(quat_normalize(quat_multiply(yaw, align))))
    return out


# ---------------------------------------------------------------------------
# candidate sampling
# ---------------------------------------------------------------------------

def sample_candidates(
    env: PointCloud,
    n_loc: int,
    orientations: list[Rotation],
    rng_seed: int,
    headroom: float = 0.10,
) -> list[Placement]:
    """Draw n_loc uniform locations in the environment's bounding box and pair
    each with every candidate orientation.

    `headroom` extends the box upward so environments whose cloud is nearly
    flat (a bare table surface) still admit poses above the support plane.
    """
    if len(env) == 0:
        raise ValueError("cannot sample candidates in an empty environment")
    if n_loc < 1:
        raise ValueError("n_loc must be >= 1")
    if not orientations:
        raise ValueError("orientation list must be nonempty")
    box = env.aabb()
    lo = box.min
    hi = box.max.copy()
    hi[2] += headroom
    rng = np.random.default_rng(rng_seed)
    locs = rng.uniform(lo, hi, size=(n_loc, 3))
    out = []
    cid = 0
    for i in range(n_loc):
        for rot in orientations:
            out.append(Placement(locs[i], rot, candidate_id=cid))
            cid += 1
    return out


def collision_filter(
    obj: PointCloud,
    env: PointCloud,
    candidates: list[Placement],
    clearance: float = 0.003,
) -> list[Placement]:
    """Keep candidates whose posed object stays farther than `clearance` from
    every environment point. Order is preserved."""
    if clearance <= 0:
        raise ValueError("clearance must be > 0")
    if not candidates:
        return []
    if len(env) == 0:
        return list(candidates)
    grid = _kernels.env_grid(env.points, cell=max(clearance, 0.005))
    quats = np.stack([c.orientation.q for c in candidates])
    locs = np.stack([c.location for c in candidates])
    free = _kernels.collision_mask(obj.points, quats, locs, grid, clearance)
    return [c for c, ok in zip(candidates, free) if ok]


def estimate_normals(points: np.ndarray, radius: float = 0.012) -> np.ndarray:
    """Per-point unit normals from a PCA plane fit over the `radius` ball.

    Deterministic: neighborhoods are gathered in index order and each normal
    is the eigenvector of the smallest covariance eigenvalue, sign-fixed to
    point up (+z), falling back to +x then +y components on exact ties.
    Points with fewer than 3 neighbors get a +z normal.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must have shape (n, 3)")
    if radius <= 0:
        raise ValueError("radius must be > 0")
    n = pts.shape[0]
    out = np.zeros((n, 3), dtype=np.float64)
    r2 = radius * radius
    for i in range(n):
        d = pts - pts[i]
        mask = np.einsum("ij,ij->i", d, d) <= r2
        nbrs = pts[mask]
        if nbrs.shape[0] < 3:
            out[i] = (0.0, 0.0, 1.0)
            continue
        centered = nbrs - nbrs.mean(axis=0)
        cov = centered.T @ centered
        _, vecs = np.linalg.eigh(cov)
        nrm = vecs[:, 0]
        if nrm[2] < 0 or (nrm[2] == 0 and (nrm[0] < 0 or (nrm[0] == 0 and nrm[1] < 0))):
            nrm = -nrm
        out[i] = nrm / math.sqrt(float(nrm @ nrm))
    return out


# ---------------------------------------------------------------------------
# point cloud text files
# ---------------------------------------------------------------------------

def load_pointcloud(path, frame=WORLD_FRAME) -> PointCloud:
    """Read a text file with `x y z` or `x y z nx ny nz` per line.

    '#' starts a comment; the two layouts cannot be mixed in one file.
    """
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (3, 6):
                raise ValueError(f"{path}:{lineno}: expected 3 or 6 values, got {len(parts)}")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ValueError(f"{path}:{lineno}: mixed 3- and 6-column rows")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: unparseable coordinate") from exc
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{path}:{lineno}: NaN/Inf coordinate rejected")
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no points")
    arr = np.array(rows, dtype=np.float64)
    if width == 6:
        return PointCloud(arr[:, :3], frame=frame, normals=arr[:, 3:])
    return PointCloud(arr, frame=frame)


def save_pointcloud(path, cloud: PointCloud):
    with open(path, "w", encoding="utf-8") as fh:
        if cloud.normals is None:
            fh.write("# x y z (meters)\n")
            for x, y, z in cloud.points:
                fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
        else:
            fh.write("# x y z nx ny nz (meters, unit normal)\n")
            for (x, y, z), (a, b, c) in zip(cloud.points, cloud.normals):
                fh.write(f"{x:.9g} {y:.9g} {z:.9g} {a:.9g} {b:.9g} {c:.9g}\n")
