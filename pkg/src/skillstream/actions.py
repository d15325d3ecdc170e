"""Discretized action space: encoding poses to bins and decoding logits.

Actions are classified, not regressed: translation over the flattened voxel
grid, rotation as three per-axis Euler heads with 5-degree bins, gripper and
collision avoidance as binary heads.  Argmax decoding breaks ties toward the
lowest index so evaluation is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROT_BIN_DEG = 5.0
NUM_ROT_BINS = int(360 / ROT_BIN_DEG)  # 72


@dataclass(frozen=True)
class ActionTarget:
    trans_bins: tuple[int, int, int]
    rot_bins: tuple[int, int, int]
    gripper: int
    collision: int

    def __post_init__(self):
        if self.gripper not in (0, 1) or self.collision not in (0, 1):
            raise ValueError("gripper/collision must be 0 or 1")


@dataclass
class ActionLogits:
    """Per-head scores; fields may be autodiff tensors or plain arrays."""

    translation: object   # (G^3,)
    rotation: object      # (3, NUM_ROT_BINS)
    gripper: object       # (2,)
    collision: object     # (2,)

    def arrays(self) -> "ActionLogits":
        def a(x):
            return x.data if hasattr(x, "data") and isinstance(x.data, np.ndarray) else np.asarray(x)
        return ActionLogits(a(self.translation), a(self.rotation),
                            a(self.gripper), a(self.collision))


def flat_index(bins: tuple[int, int, int], grid: int) -> int:
    x, y, z = bins
    return (x * grid + y) * grid + z


def unflat_index(idx: int, grid: int) -> tuple[int, int, int]:
    z = idx % grid
    y = (idx // grid) % grid
    x = idx // (grid * grid)
    return (x, y, z)


def encode_action(position: np.ndarray, angles_deg: np.ndarray, gripper: int,
                  collision: int, bounds_lo: np.ndarray, bounds_hi: np.ndarray,
                  grid: int) -> ActionTarget:
    """Bin a continuous pose.  Positions must lie inside the workspace and
    angles in [0, 360)."""
    position = np.asarray(position, dtype=np.float64)
    angles_deg = np.asarray(angles_deg, dtype=np.float64)
    if np.any(position < bounds_lo) or np.any(position > bounds_hi):
        raise ValueError(f"pose {position} lies outside the workspace "
                         f"[{bounds_lo}, {bounds_hi}]")
    if np.any(angles_deg < 0.0) or np.any(angles_deg >= 360.0):
        raise ValueError(f"angles {angles_deg} outside [0, 360)")
    rel = (position - bounds_lo) / (bounds_hi - bounds_lo)
    tb = np.minimum((rel * grid).astype(np.int64), grid - 1)
    rb = np.floor(angles_deg / ROT_BIN_DEG).astype(np.int64)
    return ActionTarget(tuple(int(v) for v in tb), tuple(int(v) for v in rb),
                        int(gripper), int(collision))


def bin_center_position(bins: tuple[int, int, int], bounds_lo: np.ndarray,
                        bounds_hi: np.ndarray, grid: int) -> np.ndarray:
    b = np.asarray(bins, dtype=np.float64)
    return bounds_lo + (b + 0.5) / grid * (bounds_hi - bounds_lo)


def bin_center_angles(bins: tuple[int, int, int]) -> np.ndarray:
    return (np.asarray(bins, dtype=np.float64) + 0.5) * ROT_BIN_DEG


def decode_action(logits: ActionLogits, grid: int) -> ActionTarget:
    """Per-head argmax (lowest flat index wins ties)."""
    arrs = logits.arrays()
    tb = unflat_index(int(np.argmax(arrs.translation)), grid)
    rb = tuple(int(np.argmax(arrs.rotation[i])) for i in range(3))
    return ActionTarget(tb, rb, int(np.argmax(arrs.gripper)),
                        int(np.argmax(arrs.collision)))


def within_tolerance(pred: ActionTarget, truth: ActionTarget,
                     trans_tol: int = 1, rot_tol: int = 1) -> bool:
    """Success judge: Chebyshev bin distance on translation/rotation, exact
    match on the binary heads."""
    dt = max(abs(p - t) for p, t in zip(pred.trans_bins, truth.trans_bins))
    dr = max(abs(p - t) for p, t in zip(pred.rot_bins, truth.rot_bins))
    return (dt <= trans_tol and dr <= rot_tol
            and pred.gripper == truth.gripper
            and pred.collision == truth.collision)
