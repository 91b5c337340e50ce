"""The 120-dimensional placement descriptor.

Layout (see FEATURE_NAMES for the full header):

    [0..3)    supporting contacts — min / max / variance of the k smallest
              vertical gaps between object points and the environment
              beneath them
    [3..24)   caging — 9 region heights plus 12 side-support distances
              over a 3x3x3 zone partition around the object
    [24..120) signatures of geometry — per spherical region: object point
              counts, nearby-environment point counts, and the ratio of
              the object's radial extent to the environment's closest
              approach

Conventions frozen here (they are not forced by the math):
  * vertical gap c_i = p.z − max{e.z : e within `support_radius`
    horizontally, e.z ≤ p.z}; no supporting point → c_i = cap;
  * k defaults to max(10, ceil(n/20)) when not set explicitly;
  * variance is over exactly the k selected gaps (divide by k);
  * caging heights are relative to the posed object's Aabb bottom;
  * zone / bin boundary ties go to the lower index;
  * inclination is measured from +z, azimuth from +x toward +y;
  * count features use 0 for an empty region, ratio and caging features
    use the sentinel −1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import PointCloud, Placement, apply_placement

N_FEATURES = 120

FAMILY_SLICES = {
    "contact": slice(0, 3),
    "caging": slice(3, 24),
    "signature": slice(24, 120),
}


def _feature_names():
    names = ["sc_min", "sc_max", "sc_var"]
    names += [f"cage_h_{r}" for r in range(9)]
    names += [f"cage_d_{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3, 4)]
    for fam in ("sig_obj", "sig_env", "sig_ratio"):
        names += [f"{fam}_{a}_{b}" for a in range(4) for b in range(8)]
    return names


FEATURE_NAMES = _feature_names()
assert len(FEATURE_NAMES) == N_FEATURES


@dataclass(frozen=True)
class FeatureConfig:
    """Knobs of the extractor; defaults are the values used throughout."""

    k: int | None = None          # None → max(10, ceil(n/20))
    cap: float = 1.0              # gap assigned when nothing lies beneath
    support_radius: float = 0.005
    clearance: float = 0.003      # candidate collision filter threshold

    def k_for(self, n_points: int) -> int:
        if self.k is not None:
            if self.k < 1:
                raise ValueError("k must be >= 1")
            return self.k
        return max(10, (n_points + 19) // 20)


@dataclass
class FeatureVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (N_FEATURES,):
            raise ValueError(f"feature vector must have {N_FEATURES} entries")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature vector contains NaN/Inf")
        self.values = v

    def family(self, name: str) -> np.ndarray:
        return self.values[FAMILY_SLICES[name]]


# ---------------------------------------------------------------------------
# supporting contacts
# ---------------------------------------------------------------------------

def supporting_contact_features(obj_world: PointCloud, env: PointCloud,
                                k: int, cap: float = 1.0,
                                support_radius: float = 0.005) -> np.ndarray:
    """(min, max, variance) of the k smallest vertical gaps.

    Direct all-pairs implementation; the batch extractor reproduces it
    bit-for-bit through a grid index.
    """
    if len(obj_world) < 1:
        raise ValueError("object cloud is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    p = obj_world.points
    if len(env) == 0:
        gaps = np.full(len(obj_world), cap)
    else:
        e = env.points
        dx = p[:, 0][:, None] - e[None, :, 0]
        dy = p[:, 1][:, None] - e[None, :, 1]
        within = (dx * dx + dy * dy <= support_radius * support_radius) \
            & (e[None, :, 2] <= p[:, 2][:, None])
        below = np.where(within, e[None, :, 2], -np.inf).max(axis=1)
        supported = below > -np.inf
        gaps = np.where(supported, p[:, 2] - np.where(supported, below, 0.0),
                        cap)
    kk = min(k, gaps.shape[0])
    sel = np.sort(gaps, kind="stable")[:kk]
    total = 0.0
    for v in sel:
        total += float(v)
    mean = total / kk
    acc = 0.0
    for v in sel:
        d = float(v) - mean
        acc += d * d
    return np.array([sel[0], sel[kk - 1], acc / kk])


# ---------------------------------------------------------------------------
# caging
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CagingGrid:
    """Zone boundaries of the 3x3x3 partition around a posed object."""

    outer_lo: np.ndarray
    outer_hi: np.ndarray
    center_lo: np.ndarray
    center_hi: np.ndarray

    @staticmethod
    def from_points(posed: np.ndarray) -> "CagingGrid":
        lo = posed.min(axis=0)
        hi = posed.max(axis=0)
        center = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        return CagingGrid(center - 1.6 * half, center + 1.6 * half,
                          center - 1.05 * half, center + 1.05 * half)

    def axis_zones(self, values: np.ndarray, axis: int) -> np.ndarray:
        """0/1/2 along one axis, −1 outside; boundary ties go low."""
        zone = np.where(values <= self.center_lo[axis], 0,
                        np.where(values <= self.center_hi[axis], 1, 2))
        outside = (values < self.outer_lo[axis]) | (values > self.outer_hi[axis])
        return np.where(outside, -1, zone)


def caging_features(obj_world: PointCloud, env: PointCloud,
                    grid: CagingGrid | None = None) -> np.ndarray:
    """9 region heights then d_11..d_34, sentinel −1 where a region or
    slab holds no environment point."""
    posed = obj_world.points
    if grid is None:
        grid = CagingGrid.from_points(posed)
    lo = posed.min(axis=0)
    hi = posed.max(axis=0)
    out = np.empty(21)

    if len(env) == 0:
        out[:] = -1.0
        return out
    e = env.points
    zx = grid.axis_zones(e[:, 0], 0)
    zy = grid.axis_zones(e[:, 1], 1)
    zz = grid.axis_zones(e[:, 2], 2)
    inbox = (zx >= 0) & (zy >= 0) & (zz >= 0)

    heights = np.full(9, -np.inf)
    np.maximum.at(heights, 3 * zx[inbox] + zy[inbox], e[inbox, 2])
    for r in range(9):
        out[r] = heights[r] - lo[2] if heights[r] > -np.inf else -1.0

    pos = 9
    for iz in range(3):
        slab = inbox & (zz == iz)
        for val in (
            lo[0] - _masked_max(e[:, 0], slab & (zx == 0)),
            _masked_min(e[:, 0], slab & (zx == 2)) - hi[0],
            lo[1] - _masked_max(e[:, 1], slab & (zy == 0)),
            _masked_min(e[:, 1], slab & (zy == 2)) - hi[1],
        ):
            out[pos] = val if np.isfinite(val) else -1.0
            pos += 1
    return out


def _masked_max(v, mask):
    return np.max(v[mask]) if mask.any() else -np.inf


def _masked_min(v, mask):
    return np.min(v[mask]) if mask.any() else np.inf


# ---------------------------------------------------------------------------
# signatures of geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SphericalBins:
    """32 regions around an origin: 4 inclination bands x 8 azimuth bands,
    45 degrees each; ties go to the lower index."""

    origin: np.ndarray

    def regions(self, points: np.ndarray):
        dx = points[:, 0] - self.origin[0]
        dy = points[:, 1] - self.origin[1]
        dz = points[:, 2] - self.origin[2]
        rho = np.sqrt(dx * dx + dy * dy + dz * dz)
        c45 = math.sqrt(0.5)
        a = np.select([dz >= c45 * rho, dz >= 0.0, dz >= -(c45 * rho)],
                      [0, 1, 2], default=3)
        b = np.select(
            [
                (dy >= 0.0) & (dx >= dy),
                (dy >= 0.0) & (dx >= 0.0),
                (dy >= 0.0) & (dy >= -dx),
                (dy >= 0.0),
                (dx <= dy),
                (dx <= 0.0),
                (dy <= -dx),
            ],
            [0, 1, 2, 3, 4, 5, 6], default=7)
        return 8 * a + b, rho


def signature_features(obj_world: PointCloud, env: PointCloud,
                       p: np.ndarray) -> np.ndarray:
    """96 features: object counts, nearby-env counts, radial-extent ratios."""
    bins = SphericalBins(np.asarray(p, dtype=np.float64))
    reg_o, rho_o = bins.regions(obj_world.points)
    rho_max = float(np.max(rho_o))

    counts_o = np.zeros(32)
    np.add.at(counts_o, reg_o, 1.0)
    c_ab = np.full(32, -np.inf)
    np.maximum.at(c_ab, reg_o, rho_o)

    counts_e = np.zeros(32)
    t_ab = np.full(32, np.inf)
    if len(env):
        reg_e, rho_e = bins.regions(env.points)
        near = rho_e <= 1.5 * rho_max
        np.add.at(counts_e, reg_e[near], 1.0)
        np.minimum.at(t_ab, reg_e[near], rho_e[near])

    ratios = np.empty(32)
    for r in range(32):
        c, t = c_ab[r], t_ab[r]
        if c > 0.0 and np.isfinite(c) and t > 0.0 and np.isfinite(t):
            ratios[r] = c / t
        else:
            ratios[r] = -1.0
    return np.concatenate([counts_o, counts_e, ratios])


# ---------------------------------------------------------------------------
# full extraction
# ---------------------------------------------------------------------------

def extract(obj_local: PointCloud, env: PointCloud, placement: Placement,
            cfg: FeatureConfig = FeatureConfig()) -> FeatureVector:
    """Pose the object and compute all 120 features."""
    row = extract_batch(obj_local, env, [placement], cfg)[0]
    return FeatureVector(row)


def extract_batch(obj_local: PointCloud, env: PointCloud,
                  placements, cfg: FeatureConfig = FeatureConfig(),
                  support_grid: "_kernels.Grid2 | None" = None) -> np.ndarray:
    """(m, 120) matrix over candidate placements of one object; the heavy
    path used by dataset generation."""
    if len(obj_local) < 1:
        raise ValueError("object cloud is empty")
    if len(env) < 1:
        raise ValueError("environment cloud is empty")
    if support_grid is None:
        support_grid = _kernels.support_grid(env.points, cfg.support_radius)
    quats = np.stack([pl.orientation.q for pl in placements])
    locs = np.stack([pl.location for pl in placements])
    k = cfg.k if cfg.k is not None else 0
    return _kernels.features_batch(obj_local.points, quats, locs,
                                   support_grid, k, cfg.cap,
                                   cfg.support_radius)


def extract_families(obj_local: PointCloud, env: PointCloud,
                     placement: Placement,
                     cfg: FeatureConfig = FeatureConfig()) -> FeatureVector:
    """Same vector as extract(), assembled from the three standalone
    family functions. Kept as an executable cross-check of the kernels."""
    posed = apply_placement(obj_local, placement)
    sc = supporting_contact_features(posed, env, cfg.k_for(len(obj_local)),
                                     cfg.cap, cfg.support_radius)
    cage = caging_features(posed, env)
    sig = signature_features(posed, env, placement.location)
    return FeatureVector(np.concatenate([sc, cage, sig]))
