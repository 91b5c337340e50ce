"""Kernel backend selection.

The hot loops (collision filtering, feature extraction, settling) exist
twice: a Cython extension (placelearn._kernels._core) and a pure-numpy
fallback (placelearn._kernels._ref) with identical semantics. The
compiled backend is preferred when importable; set PLACELEARN_BACKEND to
"python" or "compiled" to force one (forcing "compiled" raises if the
extension is missing).
"""

from __future__ import annotations

import logging
import math
import os

from .grids import Grid2, Grid3, build_grid2, build_grid3

__all__ = [
    "BACKEND", "Grid2", "Grid3", "env_grid", "support_grid",
    "collision_mask", "features_batch", "settle",
]

_log = logging.getLogger(__name__)
_choice = os.environ.get("PLACELEARN_BACKEND", "auto").strip().lower()

if _choice in ("auto", ""):
    try:
        from . import _core as _impl
        BACKEND = "compiled"
    except ImportError:
        from . import _ref as _impl
        BACKEND = "python"
        _log.info("compiled kernels unavailable; using numpy fallback")
elif _choice == "compiled":
    from . import _core as _impl
    BACKEND = "compiled"
elif _choice == "python":
    from . import _ref as _impl
    BACKEND = "python"
else:
    raise ImportError(
        f"PLACELEARN_BACKEND={_choice!r} not recognized "
        "(expected 'auto', 'compiled' or 'python')")


def env_grid(points, cell: float, normals=None) -> Grid3:
    """Voxel index over environment points (3D queries).

    Pass per-point surface `normals` when the grid will feed `settle`;
    collision queries ignore them.
    """
    return build_grid3(points, cell, normals)


def support_grid(points, cell: float) -> Grid2:
    """Horizontal index over environment points (vertical-gap queries)."""
    return build_grid2(points, cell)


def collision_mask(obj_points, quats, locs, grid: Grid3, clearance: float):
    """uint8 mask per candidate: 1 = no object point within `clearance`
    of any environment point."""
    return _impl.collision_mask(
        obj_points, quats, locs, grid.origin, grid.dims, grid.cell,
        grid.cell_start, grid.point_idx, grid.points, grid.occ_dilated,
        float(clearance))


def features_batch(obj_points, quats, locs, grid: Grid2, k: int, cap: float,
                   support_radius: float):
    """(m, 120) feature matrix for m candidate poses of one object."""
    return _impl.features_batch(
        obj_points, quats, locs, grid.points, grid.origin, grid.dims,
        grid.cell, grid.cell_start, grid.point_idx, int(k), float(cap),
        float(support_radius))


def settle(obj_points, q0, t0, grid: Grid3, mass, inertia, inv_inertia,
           dt, stiffness, damping, friction, contact_radius, gravity,
           delta, consec_required, max_steps, bail_z,
           div_translation=math.inf, div_rotation=math.inf,
           record_poses=False):
    """Integrate one settling run; returns a dict with final state,
    energy trace, step count and convergence flag.

    `div_translation` / `div_rotation` stop the run early once the pose
    has drifted that far from the start (the outcome can no longer be a
    valid placement); both default to "never".
    """
    if grid.normals is None:
        raise ValueError("settle requires a grid built with surface normals")
    div_t2 = float(div_translation) ** 2 if math.isfinite(div_translation) else math.inf
    # rotation threshold as a quaternion-dot bound: |q . q0| < cos(theta/2)
    if math.isfinite(div_rotation) and div_rotation < math.pi:
        div_qcos = math.cos(0.5 * float(div_rotation))
    else:
        div_qcos = -1.0
    return _impl.settle(
        obj_points, q0, t0, grid.origin, grid.dims, grid.cell,
        grid.cell_start, grid.point_idx, grid.points, grid.normals,
        grid.occ_dilated,
        float(mass), inertia, inv_inertia, float(dt), float(stiffness),
        float(damping), float(friction), float(contact_radius),
        float(gravity), float(delta), int(consec_required), int(max_steps),
        float(bail_z), div_t2, div_qcos, bool(record_poses))
