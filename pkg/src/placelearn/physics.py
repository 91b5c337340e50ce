"""Rigid-body settling oracle.

An object released at a candidate pose either stays put (valid) or
slides, tips, or falls (invalid). The object is the only dynamic body;
the environment cloud is static. Each object point looks up its nearest
environment point within `contact_radius`; if it sits behind that
point's surface plane (negative signed distance along the stored
outward normal) a penalty spring pushes it back out along the normal,
with Coulomb-capped tangential damping for friction. Stiffness and
damping are body-level totals, split evenly across the active contacts
so the net restoring force does not scale with sampling density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import (PointCloud, Placement, Rotation, estimate_normals,
                       quat_angle)

GRAVITY = 9.81
DEFAULT_MASS = 0.2


class DegenerateInertiaError(ValueError):
    pass


@dataclass
class SimParams:
    timestep: float = 1e-3
    energy_delta: float = 1e-6        # J; |dE| and E must both sit below
    validity_delta: float = 0.01      # m^2 + rad^2 mixed displacement budget
    max_steps: int = 20000
    stiffness: float = 5e3            # N/m, body total
    damping: float = 50.0             # N*s/m, body total
    friction: float = 0.5
    contact_radius: float = 6e-3
    gravity: float = GRAVITY
    mass: float = DEFAULT_MASS
    consec_steps: int = 50            # steps the energy test must hold
    # Early stop once the pose translates farther from the start than a
    # ball strictly larger than the validity envelope
    # (sqrt(validity_delta)); nothing in a gravity-plus-contact scene
    # pushes the center of mass back toward an arbitrary start point, so
    # the label is already decided.  No rotation analogue: swinging
    # bodies (a hook settling onto a bar) legitimately oscillate far
    # past any angle bound and damp back.  inf disables the cutoff.
    divergence_translation: float = 0.15   # m
    divergence_rotation: float = math.inf

    def __post_init__(self):
        if self.timestep <= 0 or self.energy_delta <= 0 \
                or self.validity_delta <= 0 or self.max_steps < 1:
            raise ValueError("invalid simulation parameters")
        envelope = math.sqrt(self.validity_delta)
        if self.divergence_translation <= envelope \
                or self.divergence_rotation <= envelope:
            raise ValueError(
                "divergence cutoffs must exceed the validity envelope")


@dataclass
class RigidState:
    position: np.ndarray
    orientation: Rotation
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray  # body frame, pairs with the body inertia

    def __post_init__(self):
        if not (np.all(np.isfinite(self.linear_velocity))
                and np.all(np.isfinite(self.angular_velocity))):
            raise ValueError("non-finite velocity")


@dataclass
class SettleResult:
    final: RigidState
    energy_trace: np.ndarray
    converged: bool
    steps: int
    poses: np.ndarray | None = None  # optional (steps, 7) T+q trajectory


def mass_properties(obj: PointCloud, mass: float = DEFAULT_MASS):
    """Uniform point-mass inertia about the centroid.

    Returns (center, inertia, inverse inertia); raises for clouds whose
    points are collinear (no resistance about the long axis).
    """
    pts = obj.points
    n = len(obj)
    if n < 3:
        raise DegenerateInertiaError("degenerate inertia")
    center = pts.mean(axis=0)
    r = pts - center
    m_pt = mass / n
    rr = (r * r).sum(axis=1)
    inertia = m_pt * (np.eye(3) * rr.sum() - r.T @ r)
    eigvals = np.linalg.eigvalsh(inertia)
    if eigvals[0] <= 1e-12 * max(eigvals[-1], 1e-30):
        raise DegenerateInertiaError("degenerate inertia")
    return center, inertia, np.linalg.inv(inertia)


def kinetic_energy(state: RigidState, mass: float, inertia: np.ndarray) -> float:
    """0.5 m |v|^2 + 0.5 w^T I w (w and I in the same frame)."""
    if mass <= 0:
        raise ValueError("mass must be > 0")
    inertia = np.asarray(inertia, dtype=np.float64)
    if inertia.shape != (3, 3) or not np.allclose(inertia, inertia.T):
        raise ValueError("inertia must be symmetric 3x3")
    if np.linalg.eigvalsh(inertia)[0] <= 0:
        raise ValueError("inertia must be positive definite")
    v = state.linear_velocity
    w = state.angular_velocity
    return 0.5 * mass * float(v @ v) + 0.5 * float(w @ inertia @ w)


def env_contact_grid(env: PointCloud, params: SimParams):
    """Voxel index of an environment ready for `settle`.

    Uses the cloud's own surface normals, estimating them when absent
    (clouds loaded from plain xyz files).
    """
    normals = env.normals
    if normals is None:
        normals = estimate_normals(env.points)
    return _kernels.env_grid(
        env.points, cell=max(0.005, params.contact_radius), normals=normals)


def settle(obj: PointCloud, start: Placement, env: PointCloud,
           params: SimParams = SimParams(), env_grid=None,
           record_poses: bool = False) -> SettleResult:
    """Integrate the object from rest at `start` until its kinetic energy
    is both flat and near zero, it leaves the scene, or max_steps runs out.

    `env_grid` may carry a prebuilt voxel index of `env` (see
    `env_contact_grid`) so callers settling many candidates against one
    environment pay for it once.
    """
    if len(obj) == 0:
        raise ValueError("object cloud is empty")
    center, inertia, inv_inertia = mass_properties(obj, params.mass)
    if env_grid is None:
        env_grid = env_contact_grid(env, params)
    bail_z = float(env.points[:, 2].min()) - 0.2
    # integrate about the center of mass: shift the cloud so the reference
    # point is the centroid, then express results back in the caller's frame
    local = np.ascontiguousarray(obj.points - center)
    r0 = start.orientation.matrix()
    t_com = start.location + r0 @ center
    raw = _kernels.settle(
        local, start.orientation.q, t_com, env_grid,
        params.mass, inertia, inv_inertia, params.timestep,
        params.stiffness, params.damping, params.friction,
        params.contact_radius, params.gravity, params.energy_delta,
        params.consec_steps, params.max_steps, bail_z,
        params.divergence_translation, params.divergence_rotation,
        record_poses)
    rot = Rotation(raw["q"])
    t_ref = raw["t"] - rot.matrix() @ center
    final = RigidState(t_ref, rot, raw["v"], raw["w"])
    poses = raw.get("poses")
    if poses is not None and len(poses):
        poses = poses.copy()
        for i in range(len(poses)):
            poses[i, 0:3] -= Rotation(poses[i, 3:7]).matrix() @ center
    return SettleResult(final, raw["energies"], raw["converged"],
                        raw["steps"], poses)


def label_validity(start: Placement, result: SettleResult,
                   validity_delta: float) -> bool:
    """Valid iff the run converged and the settled pose stayed within the
    squared-displacement budget: |T_s - T0|^2 + angle(R_s, R0)^2 < delta."""
    if not result.converged:
        return False
    dt = result.final.position - start.location
    angle = quat_angle(result.final.orientation.q, start.orientation.q)
    return float(dt @ dt) + angle * angle < validity_delta


def trajectory_rows(result: SettleResult):
    """Yield (step, E, Tx, Ty, Tz, qw, qx, qy, qz) rows for a recorded run."""
    if result.poses is None:
        raise ValueError("settle was run without record_poses")
    for i in range(result.steps):
        yield (i, float(result.energy_trace[i]), *result.poses[i].tolist())
