"""The behavior-cloning policy network.

Pipeline per sample: the raw voxel grid is lifted to a learned feature
volume by a per-cell linear encoder (shared with the rendering branch), cut
into non-overlapping cubic patches that are flattened through a learned
linear map, and prefixed with a gripper-state token.  These tokens plus the
projected instruction tokens attend over a bank of per-skill latent vectors
(cross-attention), then over themselves (self-attention), with every
attention projection carrying per-skill low-rank corrections.  Patch tokens
are finally mapped back to per-cell translation scores by a patch-inverse
linear head; the state token drives the rotation, gripper, and collision
heads.

Per-skill state lives in an AdapterSet: a latent array per skill plus one
(down, up) low-rank factor pair per attention projection.  Up-factors start
at zero, so a freshly allocated skill computes exactly the base forward, and
a forward for skill h never reads any other skill's arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, _accum, _make
from .actions import ActionLogits, NUM_ROT_BINS
from .voxel import N_RAW_CHANNELS


@dataclass(frozen=True)
class PolicyConfig:
    grid: int = 20
    patch: int = 5
    feat_channels: int = 16
    model_dim: int = 64
    latents: int = 32
    lora_rank: int = 10
    self_blocks: int = 2
    sentence_dim: int = 32

    def __post_init__(self):
        if self.grid % self.patch != 0:
            raise ValueError(f"grid {self.grid} not divisible by patch {self.patch}")

    @property
    def patches_per_axis(self) -> int:
        return self.grid // self.patch

    @property
    def n_patches(self) -> int:
        return self.patches_per_axis ** 3

    @property
    def n_tokens(self) -> int:
        return self.n_patches + 1   # one extra gripper-state token

    @property
    def patch_flat(self) -> int:
        return self.patch ** 3 * self.feat_channels

    @property
    def blocks(self) -> list[str]:
        return ["cross"] + [f"self{i}" for i in range(self.self_blocks)]


PROJECTIONS = ("q", "k", "v", "o")


def init_policy_params(config: PolicyConfig, rng: np.random.Generator) -> dict:
    d = config.model_dim

    def gauss(shape, scale):
        return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)

    params = {
        "cell_w": gauss((N_RAW_CHANNELS, config.feat_channels), 1.0 / np.sqrt(N_RAW_CHANNELS)),
        "cell_b": Tensor(np.zeros(config.feat_channels), requires_grad=True),
        "patch_w": gauss((config.patch_flat, d), 1.0 / np.sqrt(config.patch_flat)),
        "patch_b": Tensor(np.zeros(d), requires_grad=True),
        "state_table": gauss((4, d), 0.5),
        "lang_w": gauss((config.sentence_dim, d), 1.0 / np.sqrt(config.sentence_dim)),
        "lang_b": Tensor(np.zeros(d), requires_grad=True),
        "final_ln_g": Tensor(np.ones(d), requires_grad=True),
        "final_ln_b": Tensor(np.zeros(d), requires_grad=True),
        "trans_w": Tensor(np.zeros((d, config.patch ** 3)), requires_grad=True),
        "trans_b": Tensor(np.zeros(config.patch ** 3), requires_grad=True),
        # local voxel-space term of the translation head: a 3x3x3 stencil over
        # the feature volume added to the token-path scores.  Translation
        # equivariance is what lets "one cell above the object" transfer to
        # unseen placements.
        "trans_conv_w": Tensor(np.zeros((27, config.feat_channels)), requires_grad=True),
        "rot_w": Tensor(np.zeros((d, 3 * NUM_ROT_BINS)), requires_grad=True),
        "rot_b": Tensor(np.zeros(3 * NUM_ROT_BINS), requires_grad=True),
        "grip_w": Tensor(np.zeros((d, 2)), requires_grad=True),
        "grip_b": Tensor(np.zeros(2), requires_grad=True),
        "col_w": Tensor(np.zeros((d, 2)), requires_grad=True),
        "col_b": Tensor(np.zeros(2), requires_grad=True),
    }
    for block in config.blocks:
        params[f"{block}.ln_g"] = Tensor(np.ones(d), requires_grad=True)
        params[f"{block}.ln_b"] = Tensor(np.zeros(d), requires_grad=True)
        for proj in PROJECTIONS:
            params[f"{block}.w{proj}"] = gauss((d, d), 1.0 / np.sqrt(d))
    return params


class AdapterSet:
    """Per-skill latent arrays and low-rank projection factors."""

    def __init__(self, config: PolicyConfig):
        self.config = config
        self.skills: dict[int, dict[str, Tensor]] = {}

    def has(self, skill_code: int) -> bool:
        return skill_code in self.skills

    def allocate(self, skill_code: int, rng: np.random.Generator):
        """Fresh latents (Gaussian) and low-rank factors: down-projections are
        Gaussian, up-projections exactly zero so the new skill starts as a
        no-op on every projection."""
        if skill_code in self.skills:
            raise ValueError(f"skill code {skill_code} already allocated")
        c = self.config
        entry = {"latents": Tensor(rng.standard_normal((c.latents, c.model_dim))
                                   / np.sqrt(c.model_dim), requires_grad=True)}
        for block in c.blocks:
            for proj in PROJECTIONS:
                entry[f"{block}.{proj}.down"] = Tensor(
                    rng.standard_normal((c.model_dim, c.lora_rank)) / np.sqrt(c.model_dim),
                    requires_grad=True)
                entry[f"{block}.{proj}.up"] = Tensor(
                    np.zeros((c.lora_rank, c.model_dim)), requires_grad=True)
        self.skills[skill_code] = entry

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for h in sorted(self.skills):
            for name, t in self.skills[h].items():
                out[f"h{h}.{name}"] = t
        return out

    def named_for(self, skill_code: int) -> dict[str, Tensor]:
        return {f"h{skill_code}.{name}": t
                for name, t in self.skills[skill_code].items()}


def _fused_lora(x: Tensor, w: Tensor, down: Tensor, up: Tensor) -> Tensor:
    """Single graph node for x @ W + (x @ A) @ B (same math, fewer nodes)."""
    xd = x.data
    xa = xd @ down.data
    out_data = xd @ w.data + xa @ up.data

    def bw(g):
        _accum(w, xd.T @ g)
        gb = g @ up.data.T
        _accum(up, xa.T @ g)
        _accum(down, xd.T @ gb)
        if x.requires_grad:
            _accum(x, g @ w.data.T + gb @ down.data.T)

    return _make(out_data, (x, w, down, up), bw, "lora_matmul")


def lora_linear(x: Tensor, base_w: Tensor, skill_code: int, adapters: AdapterSet,
                slot: str, use_lora: bool = True) -> Tensor:
    """x @ W plus the skill's rank-limited correction x @ A @ B."""
    if not use_lora:
        return ad.matmul(x, base_w)
    if not adapters.has(skill_code):
        raise ValueError(f"skill code {skill_code} has no allocated adapters; "
                         "routing must precede the forward pass")
    entry = adapters.skills[skill_code]
    return _fused_lora(x, base_w, entry[f"{slot}.down"], entry[f"{slot}.up"])


_STENCIL_OFFSETS = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
                    for dz in (-1, 0, 1)]


def stencil_scores(volume: Tensor, kernel: Tensor) -> Tensor:
    """Per-cell score from a 3x3x3 neighborhood: out[c] = sum_k feat[c+d_k] . w_k.

    Zero padding at the workspace edge.  Differentiable in both the volume
    and the (27, C) kernel.
    """
    vd = volume.data
    g, c = vd.shape[0], vd.shape[3]
    flat = vd.reshape(g ** 3, c)
    # project channels first (one gemm), then sum the 27 shifted planes;
    # keep the offset axis leading so every plane is a contiguous slab
    proj = (kernel.data @ flat.T).reshape(27, g, g, g)

    def _src(d):
        return slice(max(d, 0), g + min(d, 0))

    def _dst(d):
        return slice(max(-d, 0), g + min(-d, 0))

    out = np.zeros((g, g, g))
    for k, (dx, dy, dz) in enumerate(_STENCIL_OFFSETS):
        out[_dst(dx), _dst(dy), _dst(dz)] += proj[k, _src(dx), _src(dy), _src(dz)]

    def bw(grad):
        g3d = grad.reshape(g, g, g)
        # dproj[k, p] = grad[p - d_k]
        dproj = np.zeros((27, g, g, g))
        for k, (dx, dy, dz) in enumerate(_STENCIL_OFFSETS):
            dproj[k, _src(dx), _src(dy), _src(dz)] = g3d[_dst(dx), _dst(dy), _dst(dz)]
        dproj = dproj.reshape(27, g ** 3)
        _accum(kernel, dproj @ flat)
        if volume.requires_grad:
            _accum(volume, (dproj.T @ kernel.data).reshape(vd.shape))

    return _make(out.reshape(g ** 3), (volume, kernel), bw, "stencil_scores")


# -- patch <-> volume reshapes ----------------------------------------------


def patches_from_volume(volume: Tensor, patch: int) -> Tensor:
    """(G, G, G, C) -> (n_patches, patch^3 * C), non-overlapping cubes."""
    g, c = volume.shape[0], volume.shape[3]
    n = g // patch
    perm = (0, 2, 4, 1, 3, 5, 6)

    def fw(arr):
        return (arr.reshape(n, patch, n, patch, n, patch, c)
                .transpose(perm).reshape(n ** 3, patch ** 3 * c))

    def bw(grad):
        back = (grad.reshape(n, n, n, patch, patch, patch, c)
                .transpose(0, 3, 1, 4, 2, 5, 6).reshape(g, g, g, c))
        _accum(volume, back)

    return _make(fw(volume.data), (volume,), bw, "patches_from_volume")


def cells_from_tokens(tokens: Tensor, grid: int, patch: int) -> Tensor:
    """(n_patches, patch^3) per-patch cell scores -> (G^3,) flat grid scores."""
    n = grid // patch

    def fw(arr):
        return (arr.reshape(n, n, n, patch, patch, patch)
                .transpose(0, 3, 1, 4, 2, 5).reshape(grid ** 3))

    def bw(grad):
        back = (grad.reshape(n, patch, n, patch, n, patch)
                .transpose(0, 2, 4, 1, 3, 5).reshape(n ** 3, patch ** 3))
        _accum(tokens, back)

    return _make(fw(tokens.data), (tokens,), bw, "cells_from_tokens")


# -- encoders -----------------------------------------------------------------


def deep_volume(raw_grid: Tensor, params: dict, config: PolicyConfig) -> Tensor:
    """Shared learned voxel encoder: per-cell linear + tanh, (G,G,G,C_feat).

    Smooth activation keeps the whole stack finite-difference checkable.
    """
    g = config.grid
    flat = ad.reshape(raw_grid, (g ** 3, N_RAW_CHANNELS))
    feat = ad.tanh(ad.add(ad.matmul(flat, params["cell_w"]), params["cell_b"]))
    return ad.reshape(feat, (g, g, g, config.feat_channels))


def state_index(state_bits: tuple[int, int]) -> int:
    return state_bits[0] * 2 + state_bits[1]


def encode_patches(volume: Tensor, state_bits: tuple[int, int], params: dict,
                   config: PolicyConfig) -> Tensor:
    """Patch tokens prefixed by the gripper-state token: (n_patches+1, D)."""
    flat_patches = patches_from_volume(volume, config.patch)
    tokens = ad.add(ad.matmul(flat_patches, params["patch_w"]), params["patch_b"])
    state_tok = ad.take_rows(params["state_table"], [state_index(state_bits)])
    return ad.concat([state_tok, tokens], axis=0)


def encode_language(token_embs: np.ndarray | Tensor, params: dict) -> Tensor:
    t = token_embs if isinstance(token_embs, Tensor) else Tensor(token_embs)
    return ad.add(ad.matmul(t, params["lang_w"]), params["lang_b"])


# -- attention ----------------------------------------------------------------


def cross_attend(p: Tensor, e: Tensor, skill_code: int, adapters: AdapterSet,
                 params: dict, config: PolicyConfig,
                 use_lora: bool = True) -> Tensor:
    """Cross-attention: queries from the normalized concatenated tokens,
    keys/values from the skill's latent array.  Returns the attended
    features (before the output projection and residual)."""
    if not adapters.has(skill_code):
        raise ValueError(f"skill code {skill_code} has no allocated adapters; "
                         "routing must precede the forward pass")
    x = ad.concat([p, e], axis=0)
    xn = ad.layer_norm(x, params["cross.ln_g"], params["cross.ln_b"])
    latents = adapters.skills[skill_code]["latents"]
    q = lora_linear(xn, params["cross.wq"], skill_code, adapters, "cross.q", use_lora)
    k = lora_linear(latents, params["cross.wk"], skill_code, adapters, "cross.k", use_lora)
    v = lora_linear(latents, params["cross.wv"], skill_code, adapters, "cross.v", use_lora)
    attn = ad.softmax(ad.mul(ad.matmul(q, k.T), 1.0 / np.sqrt(config.model_dim)))
    return ad.matmul(attn, v)


def _self_attend(x: Tensor, block: str, skill_code: int, adapters: AdapterSet,
                 params: dict, config: PolicyConfig, use_lora: bool) -> Tensor:
    xn = ad.layer_norm(x, params[f"{block}.ln_g"], params[f"{block}.ln_b"])
    q = lora_linear(xn, params[f"{block}.wq"], skill_code, adapters, f"{block}.q", use_lora)
    k = lora_linear(xn, params[f"{block}.wk"], skill_code, adapters, f"{block}.k", use_lora)
    v = lora_linear(xn, params[f"{block}.wv"], skill_code, adapters, f"{block}.v", use_lora)
    attn = ad.softmax(ad.mul(ad.matmul(q, k.T), 1.0 / np.sqrt(config.model_dim)))
    out = lora_linear(ad.matmul(attn, v), params[f"{block}.wo"], skill_code,
                      adapters, f"{block}.o", use_lora)
    return ad.add(x, out)


def forward_policy(p: Tensor, e: Tensor, skill_code: int, adapters: AdapterSet,
                   params: dict, config: PolicyConfig,
                   use_lora: bool = True,
                   volume: Tensor | None = None) -> tuple[Tensor, ActionLogits]:
    """Full stack: cross block, self blocks, heads.

    Returns the final token features (voxel representation plus language
    rows) and the per-head action logits.  When the deep feature volume is
    passed, its per-cell skip contribution is added to the translation
    scores.
    """
    x = ad.concat([p, e], axis=0)
    attended = cross_attend(p, e, skill_code, adapters, params, config, use_lora)
    out = lora_linear(attended, params["cross.wo"], skill_code, adapters,
                      "cross.o", use_lora)
    x = ad.add(x, out)
    for i in range(config.self_blocks):
        x = _self_attend(x, f"self{i}", skill_code, adapters, params, config, use_lora)
    y = ad.layer_norm(x, params["final_ln_g"], params["final_ln_b"])

    patch_rows = ad.rows(y, 1, 1 + config.n_patches)
    cell_scores = ad.add(ad.matmul(patch_rows, params["trans_w"]), params["trans_b"])
    translation = cells_from_tokens(cell_scores, config.grid, config.patch)
    if volume is not None:
        translation = ad.add(translation,
                             stencil_scores(volume, params["trans_conv_w"]))

    pooled = ad.rows(y, 0, 1)
    rotation = ad.reshape(ad.add(ad.matmul(pooled, params["rot_w"]), params["rot_b"]),
                          (3, NUM_ROT_BINS))
    gripper = ad.reshape(ad.add(ad.matmul(pooled, params["grip_w"]), params["grip_b"]), (2,))
    collision = ad.reshape(ad.add(ad.matmul(pooled, params["col_w"]), params["col_b"]), (2,))
    return y, ActionLogits(translation, rotation, gripper, collision)
