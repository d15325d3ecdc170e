"""Deterministic RGB-D rasterizer for axis-aligned box scenes.

Boxes are painted far-to-near (painter order); each box's footprint is found
by exact per-pixel ray/box intersection, so the depth channel carries the
true camera-frame z distance of the visible surface in meters.  The
background renders as black with depth pinned to the far plane, which keeps
volume rendering consistent: a ray that hits nothing integrates to zero
color against a zero-color target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BACKGROUND_RGB = np.zeros(3)
FAR_PLANE = 4.0
NEAR_EPS = 1e-6


@dataclass(frozen=True)
class Box:
    center: np.ndarray      # (3,) meters
    extent: np.ndarray      # (3,) full side lengths, meters
    color: np.ndarray       # (3,) in [0,1]
    class_id: int = 0

    @property
    def lo(self) -> np.ndarray:
        return self.center - 0.5 * self.extent

    @property
    def hi(self) -> np.ndarray:
        return self.center + 0.5 * self.extent


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: position, look-at orientation, square FOV."""

    position: np.ndarray
    target: np.ndarray
    fov_deg: float = 55.0
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def rotation(self) -> np.ndarray:
        """World-from-camera rotation; camera looks along +z (columns x,y,z)."""
        fwd = self.target - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        right = right / np.linalg.norm(right)
        down = np.cross(fwd, right)
        return np.stack([right, down, fwd], axis=1)

    def pixel_rays(self, hw: int) -> tuple[np.ndarray, np.ndarray]:
        """Unit world-space ray directions for every pixel, plus origins."""
        half = np.tan(np.deg2rad(self.fov_deg) / 2.0)
        xs = (np.arange(hw) + 0.5) / hw * 2.0 - 1.0
        u, v = np.meshgrid(xs * half, xs * half)
        dirs_cam = np.stack([u, v, np.ones_like(u)], axis=-1)
        dirs = dirs_cam @ self.rotation().T
        dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
        origins = np.broadcast_to(self.position, dirs.shape)
        return origins.reshape(-1, 3), dirs.reshape(-1, 3)


@dataclass(frozen=True)
class Scene:
    """Workspace box, object boxes, and the camera set (front first)."""

    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    boxes: tuple[Box, ...]
    cameras: tuple[Camera, ...]

    def __post_init__(self):
        if len(self.boxes) < 1:
            raise ValueError("a scene needs at least one object")
        for b in self.boxes:
            if np.any(b.lo < self.bounds_lo - 1e-9) or np.any(b.hi > self.bounds_hi + 1e-9):
                raise ValueError(f"box at {b.center} lies outside the workspace")


def _ray_box_hits(origins: np.ndarray, dirs: np.ndarray, box: Box):
    """Slab-method intersection; returns (hit mask, entry distance t)."""
    inv = 1.0 / np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    t0 = (box.lo - origins) * inv
    t1 = (box.hi - origins) * inv
    t_near = np.minimum(t0, t1).max(axis=-1)
    t_far = np.maximum(t0, t1).min(axis=-1)
    hit = (t_far >= t_near) & (t_far > NEAR_EPS)
    t_entry = np.where(t_near > NEAR_EPS, t_near, t_far)
    return hit, t_entry


def render_observation(scene: Scene, camera_index: int, hw: int) -> np.ndarray:
    """Render an (hw, hw, 4) RGB-D image; depth is camera-frame z in meters."""
    if not 0 <= camera_index < len(scene.cameras):
        raise ValueError(f"camera index {camera_index} out of range "
                         f"(scene has {len(scene.cameras)} cameras)")
    cam = scene.cameras[camera_index]
    origins, dirs = cam.pixel_rays(hw)
    fwd = cam.rotation()[:, 2]
    cos_axis = dirs @ fwd  # converts ray length to z-depth

    img = np.empty((hw * hw, 4))
    img[:, :3] = BACKGROUND_RGB
    img[:, 3] = FAR_PLANE

    order = sorted(range(len(scene.boxes)),
                   key=lambda i: -float(np.linalg.norm(scene.boxes[i].center - cam.position)))
    for i in order:
        box = scene.boxes[i]
        hit, t = _ray_box_hits(origins, dirs, box)
        z = t * cos_axis
        paint = hit & (z > NEAR_EPS) & (z < FAR_PLANE)
        img[paint, :3] = box.color
        img[paint, 3] = z[paint]
    return img.reshape(hw, hw, 4)


def write_ppm(path, rgb: np.ndarray):
    """Dump an HxWx3 float image in [0,1] as a binary PPM for inspection."""
    h, w = rgb.shape[:2]
    data = np.clip(rgb[:, :, :3] * 255.0, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
