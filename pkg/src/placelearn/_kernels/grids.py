"""Uniform-grid spatial indexes over static environment clouds.

Both kernel backends consume these structures; they are plain arrays so
they pickle cheaply across worker processes.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class Grid3(NamedTuple):
    """CSR voxel grid over 3D points plus a one-cell-dilated occupancy mask."""

    origin: np.ndarray      # (3,)
    cell: float
    dims: np.ndarray        # (3,) int64
    cell_start: np.ndarray  # (ncells+1,) int64
    point_idx: np.ndarray   # (n,) int64, point indices sorted by cell
    points: np.ndarray      # (n, 3) the indexed points
    occ_dilated: np.ndarray  # (ncells,) uint8
    normals: np.ndarray | None = None  # (n, 3) unit surface normals, or None


class Grid2(NamedTuple):
    """CSR grid over the horizontal (x, y) projection of 3D points."""

    origin: np.ndarray      # (2,)
    cell: float
    dims: np.ndarray        # (2,) int64
    cell_start: np.ndarray
    point_idx: np.ndarray
    points: np.ndarray      # (n, 3) full 3D points


def _csr(flat: np.ndarray, ncells: int):
    counts = np.bincount(flat, minlength=ncells)
    cell_start = np.zeros(ncells + 1, dtype=np.int64)
    np.cumsum(counts, out=cell_start[1:])
    point_idx = np.argsort(flat, kind="stable").astype(np.int64)
    return cell_start, point_idx


def build_grid3(points: np.ndarray, cell: float,
                normals: np.ndarray | None = None) -> Grid3:
    if cell <= 0:
        raise ValueError("cell size must be > 0")
    pts = np.ascontiguousarray(points, dtype=np.float64)
    nrm = None
    if normals is not None:
        nrm = np.ascontiguousarray(normals, dtype=np.float64)
        if nrm.shape != pts.shape:
            raise ValueError("normals must match points in shape")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    dims = (np.floor((hi - lo) / cell).astype(np.int64) + 1)
    idx = np.floor((pts - lo) / cell).astype(np.int64)
    np.clip(idx, 0, dims - 1, out=idx)
    nx, ny, nz = (int(d) for d in dims)
    flat = (idx[:, 0] * ny + idx[:, 1]) * nz + idx[:, 2]
    cell_start, point_idx = _csr(flat, nx * ny * nz)

    occ_inner = np.zeros(nx * ny * nz, dtype=np.uint8)
    occ_inner[np.unique(flat)] = 1
    occ = np.zeros((nx + 2, ny + 2, nz + 2), dtype=np.uint8)
    occ[1:-1, 1:-1, 1:-1] = occ_inner.reshape(nx, ny, nz)
    dil = np.zeros((nx, ny, nz), dtype=np.uint8)
    for dx in (0, 1, 2):
        for dy in (0, 1, 2):
            for dz in (0, 1, 2):
                np.maximum(dil, occ[dx:dx + nx, dy:dy + ny, dz:dz + nz], out=dil)
    return Grid3(lo, float(cell), dims, cell_start, point_idx, pts,
                 dil.reshape(-1), nrm)


def build_grid2(points: np.ndarray, cell: float) -> Grid2:
    if cell <= 0:
        raise ValueError("cell size must be > 0")
    pts = np.ascontiguousarray(points, dtype=np.float64)
    lo = pts[:, :2].min(axis=0)
    hi = pts[:, :2].max(axis=0)
    dims = (np.floor((hi - lo) / cell).astype(np.int64) + 1)
    idx = np.floor((pts[:, :2] - lo) / cell).astype(np.int64)
    np.clip(idx, 0, dims - 1, out=idx)
    nx, ny = (int(d) for d in dims)
    flat = idx[:, 0] * ny + idx[:, 1]
    cell_start, point_idx = _csr(flat, nx * ny)
    return Grid2(lo, float(cell), dims, cell_start, point_idx, pts)
