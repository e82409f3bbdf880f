"""Fusion-center map processing: resample per-BS polar maps to a shared
Cartesian grid and combine them by element-wise summation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import wrap_angle


@dataclass(frozen=True)
class GridSpec:
    """Uniform Cartesian grid; cell (ix, iy) is centered at
    (x_min + (ix + 0.5) dx, y_min + (iy + 0.5) dy)."""

    x_min_m: float
    y_min_m: float
    dx_m: float
    dy_m: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.dx_m <= 0 or self.dy_m <= 0:
            raise ValueError("grid resolution must be > 0")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid must have at least one cell")

    @classmethod
    def from_area(cls, x_min, x_max, y_min, y_max, dx, dy):
        nx = int(round((x_max - x_min) / dx))
        ny = int(round((y_max - y_min) / dy))
        return cls(x_min_m=x_min, y_min_m=y_min, dx_m=dx, dy_m=dy, nx=nx, ny=ny)

    @property
    def x_centers(self):
        return self.x_min_m + (np.arange(self.nx) + 0.5) * self.dx_m

    @property
    def y_centers(self):
        return self.y_min_m + (np.arange(self.ny) + 0.5) * self.dy_m

    @property
    def n_cells(self):
        return self.nx * self.ny

    def cell_of(self, point_m):
        """Nearest cell indices (ix, iy) for a point in meters."""
        ix = int(round((point_m[0] - self.x_min_m) / self.dx_m - 0.5))
        iy = int(round((point_m[1] - self.y_min_m) / self.dy_m - 0.5))
        return ix, iy

    def position_of(self, ix, iy):
        return np.array([self.x_min_m + (np.asarray(ix) + 0.5) * self.dx_m,
                         self.y_min_m + (np.asarray(iy) + 0.5) * self.dy_m]).T

    def cells_to_meters(self, cells):
        """(N, 2) array of (ix, iy) cell coordinates -> cell-center positions."""
        cells = np.asarray(cells, dtype=float).reshape(-1, 2)
        return np.column_stack([self.x_min_m + (cells[:, 0] + 0.5) * self.dx_m,
                                self.y_min_m + (cells[:, 1] + 0.5) * self.dy_m])


@dataclass
class SoftMap:
    """Cartesian likelihood map; values indexed [iy, ix]."""

    values: np.ndarray
    grid: GridSpec
    scan_index: int
    contributing_bs: tuple = ()
    synthesis: str = "signal"

    def __post_init__(self):
        if self.values.shape != (self.grid.ny, self.grid.nx):
            raise ValueError("map shape does not match the grid")


def resample_to_grid(polar_map, bs, grid):
    """Rotate/translate one BS's polar map into the shared Cartesian grid.

    Each grid cell center is converted to (range, bearing) in the BS frame and
    filled by bilinear interpolation of the polar map; cells outside the scan
    aperture or the range span get 0.
    """
    xx, yy = np.meshgrid(grid.x_centers, grid.y_centers)
    dx = xx - bs.position[0]
    dy = yy - bs.position[1]
    rng_m = np.hypot(dx, dy)
    bearing = wrap_angle(np.arctan2(dy, dx) - bs.boresight_rad)

    dirs = polar_map.scan_dirs_rad
    step = dirs[1] - dirs[0] if len(dirs) > 1 else 1.0
    fr = rng_m / polar_map.range_bin_m
    fa = (bearing - dirs[0]) / step

    n_r, n_a = polar_map.values.shape
    inside = (fr >= 0) & (fr <= n_r - 1) & (fa >= 0) & (fa <= n_a - 1)

    r0 = np.clip(np.floor(fr).astype(int), 0, n_r - 2) if n_r > 1 else np.zeros_like(fr, int)
    a0 = np.clip(np.floor(fa).astype(int), 0, n_a - 2) if n_a > 1 else np.zeros_like(fa, int)
    tr = np.clip(fr - r0, 0.0, 1.0)
    ta = np.clip(fa - a0, 0.0, 1.0)

    v = polar_map.values
    r1 = np.minimum(r0 + 1, n_r - 1)
    a1 = np.minimum(a0 + 1, n_a - 1)
    interp = ((1 - tr) * (1 - ta) * v[r0, a0] + tr * (1 - ta) * v[r1, a0]
              + (1 - tr) * ta * v[r0, a1] + tr * ta * v[r1, a1])
    out = np.where(inside, interp, 0.0)
    return SoftMap(values=out, grid=grid, scan_index=polar_map.scan_index,
                   contributing_bs=(polar_map.bs_id,), synthesis=polar_map.synthesis)


def fuse(maps):
    """Element-wise sum of resampled maps sharing one grid and scan index.

    Inputs are folded in ascending BS-id order so the result is bit-identical
    regardless of the caller's ordering.
    """
    if not maps:
        raise ValueError("nothing to fuse")
    grid = maps[0].grid
    scan = maps[0].scan_index
    for m in maps:
        if m.grid != grid:
            raise ValueError("all maps must share one grid")
        if m.scan_index != scan:
            raise ValueError("all maps must come from the same scan")
    ordered = sorted(maps, key=lambda m: m.contributing_bs)
    total = np.zeros_like(ordered[0].values)
    contributing = []
    for m in ordered:
        total = total + m.values
        contributing.extend(m.contributing_bs)
    synthesis = "fast" if any(m.synthesis == "fast" for m in maps) else "signal"
    return SoftMap(values=total, grid=grid, scan_index=scan,
                   contributing_bs=tuple(sorted(contributing)), synthesis=synthesis)
