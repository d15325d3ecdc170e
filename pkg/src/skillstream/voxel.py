"""Back-projection of RGB-D observations into a dense voxel grid.

Channels per cell: occupancy flag, mean RGB of the pixels that landed there,
and the cell's normalized center coordinates (written everywhere, occupied
or not, as a fixed position encoding).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import FAR_PLANE, Camera, Scene

N_RAW_CHANNELS = 7  # occ, r, g, b, x, y, z


@dataclass(frozen=True)
class VoxelGrid:
    data: np.ndarray          # (G, G, G, 7)
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    grid: int

    @property
    def cell_size(self) -> np.ndarray:
        return (self.bounds_hi - self.bounds_lo) / self.grid


def position_channels(grid: int) -> np.ndarray:
    """Normalized cell-center coordinates, shape (G, G, G, 3)."""
    centers = (np.arange(grid) + 0.5) / grid
    gx, gy, gz = np.meshgrid(centers, centers, centers, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


def voxelize(observation: np.ndarray, camera: Camera, scene: Scene,
             grid: int) -> VoxelGrid:
    """Back-project every foreground pixel through the camera and bin it.

    Pixels at the far plane are background; back-projected points that fall
    outside the workspace are dropped.  Raises if nothing lands in the grid.
    """
    hw = observation.shape[0]
    origins, dirs = camera.pixel_rays(hw)
    fwd = camera.rotation()[:, 2]
    cos_axis = dirs @ fwd

    depth = observation[:, :, 3].reshape(-1)
    rgb = observation[:, :, :3].reshape(-1, 3)
    fg = depth < FAR_PLANE - 1e-9
    t = depth[fg] / cos_axis[fg]
    points = origins[fg] + dirs[fg] * t[:, None]
    colors = rgb[fg]

    lo, hi = scene.bounds_lo, scene.bounds_hi
    inside = np.all((points >= lo) & (points <= hi), axis=1)
    points, colors = points[inside], colors[inside]
    if len(points) == 0:
        raise ValueError("voxelize: no points landed in the workspace "
                         f"(scene with {len(scene.boxes)} boxes)")

    idx = np.minimum(((points - lo) / (hi - lo) * grid).astype(np.int64), grid - 1)
    data = np.zeros((grid, grid, grid, N_RAW_CHANNELS))
    flat = (idx[:, 0] * grid + idx[:, 1]) * grid + idx[:, 2]
    occ = np.zeros(grid ** 3)
    np.add.at(occ, flat, 1.0)
    csum = np.zeros((grid ** 3, 3))
    np.add.at(csum, flat, colors)
    occupied = occ > 0
    data[..., 0] = occupied.reshape(grid, grid, grid)
    mean_rgb = np.zeros((grid ** 3, 3))
    mean_rgb[occupied] = csum[occupied] / occ[occupied, None]
    data[..., 1:4] = mean_rgb.reshape(grid, grid, grid, 3)
    data[..., 4:7] = position_channels(grid)
    return VoxelGrid(data=data, bounds_lo=lo, bounds_hi=hi, grid=grid)
