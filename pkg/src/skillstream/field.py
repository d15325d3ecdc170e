"""Voxel-conditioned neural field and volume rendering.

A small MLP maps (point, view direction, interpolated voxel feature) to a
nonnegative density, a sigmoid-bounded RGB color, and an unbounded semantic
feature vector.  Color images and semantic maps are rendered by the standard
piecewise-constant quadrature, and both integrals share the identical
per-sample weight vector: the transmittance is computed once from density
alone.

Losses: squared reconstruction error against rasterized ground-truth pixels,
an optional replay term against pseudo ground truth rendered by a frozen
teacher field, and squared error against the frozen semantic oracle's
feature maps.  All per-ray losses are averaged over the ray batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, _accum, _make


@dataclass(frozen=True)
class FieldConfig:
    feat_channels: int = 16     # voxel feature dimension the field conditions on
    hidden: int = 64
    semantic_dim: int = 16
    ray_samples: int = 16
    t_near: float = 0.5
    t_far: float = 3.2


@dataclass(frozen=True)
class RayBatch:
    """Rays with their supervision targets.

    Directions must be unit length; ``pixel_rgb`` holds the ground-truth
    colors and ``semantic_target`` the oracle features at the same pixels.
    """

    origins: np.ndarray          # (R, 3)
    dirs: np.ndarray             # (R, 3), unit norm
    pixel_rgb: np.ndarray        # (R, 3)
    semantic_target: np.ndarray  # (R, semantic_dim)
    t_near: float
    t_far: float
    n_samples: int

    def __post_init__(self):
        norms = np.linalg.norm(self.dirs, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("ray directions must be unit length")
        if not self.t_near < self.t_far:
            raise ValueError("t_near must be smaller than t_far")
        if self.n_samples < 2:
            raise ValueError("need at least two samples per ray")


def init_field_params(config: FieldConfig, rng: np.random.Generator) -> dict:
    d_in = 6 + config.feat_channels
    h = config.hidden

    def gauss(shape, scale):
        return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)

    return {
        "w1": gauss((d_in, h), 1.0 / np.sqrt(d_in)),
        "b1": Tensor(np.zeros(h), requires_grad=True),
        "w2": gauss((h, h), 1.0 / np.sqrt(h)),
        "b2": Tensor(np.zeros(h), requires_grad=True),
        "sigma_w": gauss((h, 1), 1.0 / np.sqrt(h)),
        "sigma_b": Tensor(np.full(1, -1.0), requires_grad=True),
        "color_w": gauss((h, 3), 1.0 / np.sqrt(h)),
        "color_b": Tensor(np.zeros(3), requires_grad=True),
        "sem_w": gauss((h, config.semantic_dim), 1.0 / np.sqrt(h)),
        "sem_b": Tensor(np.zeros(config.semantic_dim), requires_grad=True),
    }


# -- voxel feature interpolation -------------------------------------------


def trilinear_sample(volume: Tensor, points: np.ndarray, bounds_lo: np.ndarray,
                     bounds_hi: np.ndarray) -> Tensor:
    """Interpolate per-cell features at world-space points.

    ``volume`` is a (G, G, G, C) tensor of cell-center features.  Points
    outside the workspace contribute a zero feature (background), not an
    error.  Differentiable with respect to the volume.
    """
    g = volume.shape[0]
    c = volume.shape[3]
    cell = (bounds_hi - bounds_lo) / g
    u = (points - bounds_lo) / cell - 0.5        # continuous cell-center coords
    inside = np.all((points >= bounds_lo) & (points <= bounds_hi), axis=1)

    i0 = np.floor(u).astype(np.int64)
    frac = u - i0
    # pad the grid by a zero ring so edge cells interpolate against zeros
    gp = g + 2
    ip = np.clip(i0 + 1, 0, gp - 2)

    corners = np.empty((len(points), 8), dtype=np.int64)
    weights = np.empty((len(points), 8))
    k = 0
    for dx in (0, 1):
        wx = (1.0 - frac[:, 0]) if dx == 0 else frac[:, 0]
        for dy in (0, 1):
            wy = (1.0 - frac[:, 1]) if dy == 0 else frac[:, 1]
            for dz in (0, 1):
                wz = (1.0 - frac[:, 2]) if dz == 0 else frac[:, 2]
                corners[:, k] = ((ip[:, 0] + dx) * gp + (ip[:, 1] + dy)) * gp + (ip[:, 2] + dz)
                weights[:, k] = wx * wy * wz
                k += 1
    weights = weights * inside[:, None]

    pad_flat_valid = np.zeros((gp, gp, gp), dtype=bool)
    pad_flat_valid[1:-1, 1:-1, 1:-1] = True
    valid_mask = pad_flat_valid.reshape(-1)[corners]
    weights = weights * valid_mask

    # map padded corner index -> unpadded flat index (invalid ones point at 0
    # with zero weight, so they never contribute)
    px = corners // (gp * gp) - 1
    py = (corners // gp) % gp - 1
    pz = corners % gp - 1
    unpadded = np.where(valid_mask, (px * g + py) * g + pz, 0)

    vol_flat = volume.data.reshape(-1, c)
    out_data = np.einsum("nk,nkc->nc", weights, vol_flat[unpadded])

    def bw(grad):
        acc = np.zeros_like(vol_flat)
        contrib = weights[:, :, None] * grad[:, None, :]
        np.add.at(acc, unpadded.reshape(-1), contrib.reshape(-1, c))
        _accum(volume, acc.reshape(volume.shape))

    return _make(out_data, (volume,), bw, "trilinear_sample")


def weighted_sum(weights: Tensor, values: Tensor) -> Tensor:
    """sum_s weights[r, s] * values[r, s, :] -> (R, C)."""
    wd, vd = weights.data, values.data

    def bw(grad):
        _accum(weights, np.einsum("rc,rsc->rs", grad, vd))
        _accum(values, wd[:, :, None] * grad[:, None, :])

    return _make(np.einsum("rs,rsc->rc", wd, vd), (weights, values), bw, "weighted_sum")


# -- quadrature -------------------------------------------------------------


def quadrature_weights(sigma: Tensor, deltas: np.ndarray) -> Tensor:
    """Per-sample contribution weights from density and segment lengths.

    w_i = T_i * (1 - exp(-sigma_i * delta_i)) with
    T_i = exp(-sum_{j<i} sigma_j * delta_j).  Each weight lies in [0, 1],
    they sum to at most one per ray, and T is non-increasing.
    """
    a = ad.mul(sigma, Tensor(deltas))
    transmittance = ad.exp(ad.mul(ad.cumsum_exclusive(a, axis=-1), -1.0))
    absorb = ad.add(ad.mul(ad.exp(ad.mul(a, -1.0)), -1.0), 1.0)
    return ad.mul(transmittance, absorb)


def stratified_samples(rng: np.random.Generator, n_rays: int, n_samples: int,
                       t_near: float, t_far: float) -> np.ndarray:
    """One jittered sample per uniform bin along each ray."""
    width = (t_far - t_near) / n_samples
    edges = t_near + np.arange(n_samples) * width
    jitter = rng.random((n_rays, n_samples))
    return edges + jitter * width


def _deltas(t_values: np.ndarray, t_far: float) -> np.ndarray:
    d = np.diff(t_values, axis=1)
    last = t_far - t_values[:, -1:]
    return np.concatenate([d, last], axis=1)


def field_forward(params: dict, points: np.ndarray, dirs: np.ndarray,
                  voxel_feat: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Evaluate the MLP: returns (sigma, color, semantic) for N points.

    Hidden activations are tanh: smooth everywhere, so finite-difference
    gradient verification is reliable at any evaluation point.
    """
    x = ad.concat([Tensor(points), Tensor(dirs), voxel_feat], axis=1)
    h1 = ad.tanh(ad.add(ad.matmul(x, params["w1"]), params["b1"]))
    h2 = ad.tanh(ad.add(ad.matmul(h1, params["w2"]), params["b2"]))
    sigma = ad.softplus(ad.add(ad.matmul(h2, params["sigma_w"]), params["sigma_b"]))
    color = ad.sigmoid(ad.add(ad.matmul(h2, params["color_w"]), params["color_b"]))
    semantic = ad.add(ad.matmul(h2, params["sem_w"]), params["sem_b"])
    return sigma, color, semantic


def render(params: dict, volume: Tensor, rays: RayBatch,
           bounds_lo: np.ndarray, bounds_hi: np.ndarray,
           t_values: np.ndarray | None = None,
           rng: np.random.Generator | None = None):
    """Volume-render color and semantic maps for a ray batch.

    Returns (color (R,3), semantic (R,D_f), weights (R,S), t_values).  Color
    and semantic renders share the identical weight tensor.  ``t_values``
    may be passed in to reuse the student's sample positions for a teacher
    render.
    """
    n_rays = len(rays.origins)
    if t_values is None:
        if rng is None:
            raise ValueError("render needs either precomputed t_values or an rng")
        t_values = stratified_samples(rng, n_rays, rays.n_samples,
                                      rays.t_near, rays.t_far)
    deltas = _deltas(t_values, rays.t_far)

    points = (rays.origins[:, None, :] + rays.dirs[:, None, :] * t_values[:, :, None])
    flat_pts = points.reshape(-1, 3)
    flat_dirs = np.repeat(rays.dirs, rays.n_samples, axis=0)

    voxel_feat = trilinear_sample(volume, flat_pts, bounds_lo, bounds_hi)
    sigma, color, semantic = field_forward(params, flat_pts, flat_dirs, voxel_feat)

    sigma_rs = ad.reshape(sigma, (n_rays, rays.n_samples))
    weights = quadrature_weights(sigma_rs, deltas)
    color_rs = ad.reshape(color, (n_rays, rays.n_samples, 3))
    sem_rs = ad.reshape(semantic, (n_rays, rays.n_samples, semantic.shape[1]))
    rendered_rgb = weighted_sum(weights, color_rs)
    rendered_sem = weighted_sum(weights, sem_rs)
    return rendered_rgb, rendered_sem, weights, t_values


# -- losses ------------------------------------------------------------------


def color_loss(rendered: Tensor, target_rgb: np.ndarray,
               pseudo: np.ndarray | None, replay_mask: np.ndarray,
               beta: float) -> Tensor:
    """Mean per-ray squared color error, plus the replay term against the
    teacher's pseudo ground truth on masked rays."""
    replay_mask = np.asarray(replay_mask, dtype=np.float64)
    diff = ad.square(rendered - Tensor(target_rgb))
    loss = ad.tmean(ad.tsum(diff, axis=1))
    if replay_mask.any():
        if pseudo is None:
            raise ValueError("replay-masked rays need a teacher render "
                             "(no teacher exists before the second task)")
        pdiff = ad.tsum(ad.square(rendered - Tensor(pseudo)), axis=1)
        loss = loss + ad.tmean(ad.mul(pdiff, Tensor(replay_mask))) * beta
    return loss


def semantic_loss(rendered: Tensor, target: np.ndarray) -> Tensor:
    """Mean per-ray squared feature error against the oracle map."""
    diff = ad.square(rendered - Tensor(target))
    return ad.tmean(ad.tsum(diff, axis=1))


def render_objective(color_term: Tensor, semantic_term: Tensor,
                     semantic_weight: float) -> Tensor:
    """Combined reconstruction objective: color + weight * semantic."""
    if semantic_weight < 0.0:
        raise ValueError("semantic weight must be nonnegative")
    return color_term + semantic_term * semantic_weight
