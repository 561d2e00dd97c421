"""Ego-centric binary occupancy grids built from metric depth maps.

Grid cells are indexed ``(ix, iy, iz)`` along body x (right), y (forward)
and z (up). Cell ``c`` along an axis is centered on ``(c - o) * res`` with
``o = n // 2``, so the vehicle sits at the center of cell ``(o, o, o)`` and
padding by ``k`` cells keeps at least ``k + 1/2`` cells between it and any
binned point along every axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy.ndimage import maximum_filter

from .camera import CameraIntrinsics
from .mapio import write_pgm, write_ppm

DEFAULT_RESOLUTION = 0.25
DEFAULT_RADIUS = 4.0
DEFAULT_PAD = 1
DEFAULT_STRIDE = 4


@dataclass
class OccupancyGrid:
    resolution: float
    radius: float
    flags: np.ndarray

    @classmethod
    def empty(cls, resolution: float = DEFAULT_RESOLUTION, radius: float = DEFAULT_RADIUS) -> "OccupancyGrid":
        if not resolution > 0 or radius < resolution:
            raise ValueError("need resolution > 0 and radius >= resolution")
        n = grid_cells(resolution, radius)
        return cls(resolution, radius, np.zeros((n, n, n), dtype=bool))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.flags.shape

    @property
    def offset(self) -> int:
        return self.flags.shape[0] // 2

    @property
    def origin_cell(self) -> tuple[int, int, int]:
        o = self.offset
        return (o, o, o)

    @property
    def lower(self) -> float:
        """Body-frame coordinate of the grid's minimum face (same on every axis)."""
        return (-self.offset - 0.5) * self.resolution

    @property
    def upper(self) -> float:
        return (self.dims[0] - self.offset - 0.5) * self.resolution

    def cell_of(self, point) -> tuple[int, int, int]:
        """Index of the cell containing a body-frame point (may lie outside the grid)."""
        return tuple(int(math.floor(x / self.resolution + 0.5)) + self.offset for x in point)

    def cell_center(self, cell) -> np.ndarray:
        """Body-frame position of a cell's center."""
        return (np.asarray(cell, dtype=float) - self.offset) * self.resolution

    def inside(self, cell) -> bool:
        return all(0 <= c < n for c, n in zip(cell, self.dims))

    @property
    def occupied_count(self) -> int:
        return int(self.flags.sum())


def grid_cells(resolution: float, radius: float) -> int:
    return int(math.ceil(2.0 * radius / resolution - 1e-9))


def depth_to_pointcloud(depth: np.ndarray, intrinsics: CameraIntrinsics, stride: int = DEFAULT_STRIDE,
                        max_range: Optional[float] = None, unknown_as_occupied: bool = False) -> np.ndarray:
    """Back-project every ``stride``-th pixel into the body frame (x right, y forward, z up).

    Pixels at or beyond ``max_range`` are treated as unobserved and dropped
    unless ``unknown_as_occupied`` is set.
    """
    if stride < 1:
        raise ValueError("stride must be at least 1")
    z = np.asarray(depth, dtype=float)[::stride, ::stride]
    v, u = np.mgrid[0:depth.shape[0]:stride, 0:depth.shape[1]:stride].astype(float)
    keep = np.isfinite(z) & (z > 0)
    if max_range is not None and not unknown_as_occupied:
        keep &= z < max_range
    z, u, v = z[keep], u[keep], v[keep]
    return np.column_stack([z * (u - intrinsics.cx) / intrinsics.fx, z,
                            z * (intrinsics.cy - v) / intrinsics.fy])


def bin_points(cloud: np.ndarray, resolution: float = DEFAULT_RESOLUTION,
               radius: float = DEFAULT_RADIUS) -> OccupancyGrid:
    grid = OccupancyGrid.empty(resolution, radius)
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return grid
    idx = np.floor(pts / resolution + 0.5).astype(np.int64) + grid.offset
    idx = idx[np.all((idx >= 0) & (idx < grid.dims[0]), axis=1)]
    grid.flags[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return grid


def pad_obstacles(grid: OccupancyGrid, pad_cells: int = DEFAULT_PAD) -> OccupancyGrid:
    """Binary dilation by a cube of half-width ``pad_cells`` (Chebyshev ball)."""
    if pad_cells < 0:
        raise ValueError("pad_cells must be nonnegative")
    if pad_cells == 0:
        return OccupancyGrid(grid.resolution, grid.radius, grid.flags.copy())
    padded = maximum_filter(grid.flags, size=2 * pad_cells + 1, mode="constant", cval=False)
    return OccupancyGrid(grid.resolution, grid.radius, padded)


def slice_image(grid: OccupancyGrid, layer: int) -> np.ndarray:
    """Bird's-eye view of one z-layer: rows run forward-to-back, columns left-to-right."""
    return grid.flags[:, :, layer].T[::-1]


def export_slice(grid: OccupancyGrid, layer: int, path) -> None:
    write_pgm(path, slice_image(grid, layer).astype(np.uint8) * 255)


def export_slices(grid: OccupancyGrid, directory, prefix: str = "occ") -> list[Path]:
    out = []
    for k in range(grid.dims[2]):
        p = Path(directory) / f"{prefix}_z{k:03d}.pgm"
        export_slice(grid, k, p)
        out.append(p)
    return out


def overlay_image(grid: OccupancyGrid, layer: int, path_cells: Iterable = ()) -> np.ndarray:
    """RGB bird's-eye slice: occupied cells in the green channel, path cells in red.

    Path cells from every layer are drawn at their horizontal position.
    """
    occ = slice_image(grid, layer)
    rgb = np.zeros(occ.shape + (3,), dtype=np.uint8)
    rgb[..., 1] = occ * 255
    n_y = grid.dims[1]
    for c in path_cells:
        rgb[n_y - 1 - c[1], c[0], 0] = 255
    return rgb


def export_overlay(grid: OccupancyGrid, layer: int, path_cells, path) -> None:
    write_ppm(path, overlay_image(grid, layer, path_cells))
