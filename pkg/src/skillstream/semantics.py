"""Frozen semantic feature oracle.

Supervision targets for the semantic field come from a fixed, seeded
image-to-feature map instead of a pretrained diffusion model.  The pipeline
mirrors the real one's contract: the image is pushed through a frozen
pixel-space encoder, corrupted by one step of scheduled noise, concatenated
with a broadcast prompt embedding, and passed through a frozen two-layer
3x3 convolutional head.  The noise is keyed by (episode, camera) so a given
view always produces the identical target.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

PROMPT_TEMPLATE_TOKEN = "render"
NOISE_STEPS = 10
LATENT_CHANNELS = 8
PROMPT_CHANNELS = 8
HIDDEN_CHANNELS = 24


def _stable_int(x) -> int:
    """Process-independent integer for seeding (str hashes are salted)."""
    if isinstance(x, (int, np.integer)):
        return int(x) % (2 ** 31)
    digest = hashlib.sha256(str(x).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def noise_alpha(t: int) -> float:
    """Linear schedule from 1.0 down to 0.1 across NOISE_STEPS steps."""
    if not 0 <= t < NOISE_STEPS:
        raise ValueError(f"noise step {t} outside schedule range [0, {NOISE_STEPS})")
    return 1.0 - 0.9 * t / (NOISE_STEPS - 1)


@dataclass(frozen=True)
class SemanticTarget:
    features: np.ndarray       # (H, W, feature_dim)
    prompt: tuple[str, ...]


def _conv3x3(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded 3x3 correlation via nine shifted adds (H, W, Cin) -> (H, W, Cout)."""
    h, w, _ = x.shape
    pad = np.zeros((h + 2, w + 2, x.shape[2]))
    pad[1:-1, 1:-1] = x
    out = np.tile(bias, (h, w, 1))
    for di in range(3):
        for dj in range(3):
            out += pad[di:di + h, dj:dj + w] @ kernel[di, dj]
    return out


class FrozenSemanticOracle:
    """Seeded stand-in producing dense per-pixel semantic feature maps."""

    def __init__(self, feature_dim: int = 16, sentence_dim: int = 32,
                 weight_seed: int = 977):
        self.feature_dim = feature_dim
        self.sentence_dim = sentence_dim
        self.weight_seed = weight_seed
        rng = np.random.default_rng(np.random.SeedSequence((weight_seed, feature_dim,
                                                            sentence_dim)))
        self.enc_w = rng.standard_normal((3, LATENT_CHANNELS)) / np.sqrt(3)
        self.enc_b = rng.standard_normal(LATENT_CHANNELS) * 0.1
        self.prompt_w = rng.standard_normal((sentence_dim, PROMPT_CHANNELS)) / np.sqrt(sentence_dim)
        cin = LATENT_CHANNELS + PROMPT_CHANNELS
        self.conv1_w = rng.standard_normal((3, 3, cin, HIDDEN_CHANNELS)) / np.sqrt(9 * cin)
        self.conv1_b = rng.standard_normal(HIDDEN_CHANNELS) * 0.1
        self.conv2_w = rng.standard_normal((3, 3, HIDDEN_CHANNELS, feature_dim)) / np.sqrt(9 * HIDDEN_CHANNELS)
        self.conv2_b = rng.standard_normal(feature_dim) * 0.1

    def encode_pixels(self, rgb: np.ndarray) -> np.ndarray:
        """Frozen pixel-space encoder (stands in for a VAE encoder)."""
        return np.tanh(rgb @ self.enc_w + self.enc_b)

    def target(self, rgb: np.ndarray, prompt_sentence: np.ndarray,
               prompt_tokens: list[str], t: int,
               noise_key: tuple) -> SemanticTarget:
        """Semantic feature map for one view.

        ``noise_key`` identifies (episode, camera); the same key always draws
        the same noise so targets are reproducible across runs.
        """
        alpha = noise_alpha(t)
        latent = self.encode_pixels(rgb)
        rng = np.random.default_rng(np.random.SeedSequence(
            (self.weight_seed, 31, *[_stable_int(k) for k in noise_key], t)))
        eps = rng.standard_normal(latent.shape)
        noisy = np.sqrt(alpha) * latent + np.sqrt(1.0 - alpha) * eps

        prompt_feat = np.tanh(prompt_sentence @ self.prompt_w)
        h, w = rgb.shape[:2]
        stacked = np.concatenate(
            [noisy, np.tile(prompt_feat, (h, w, 1))], axis=-1)
        hidden = np.maximum(_conv3x3(stacked, self.conv1_w, self.conv1_b), 0.0)
        feats = _conv3x3(hidden, self.conv2_w, self.conv2_b)
        return SemanticTarget(features=feats, prompt=tuple(prompt_tokens))


def prompt_tokens(instruction: list[str]) -> list[str]:
    """The supervision prompt: instruction prefixed by a fixed template token."""
    return [PROMPT_TEMPLATE_TOKEN, *instruction]
