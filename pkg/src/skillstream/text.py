"""Frozen deterministic text encoder.

Stands in for a pretrained language encoder: every token maps to a fixed
embedding drawn from a seeded table (indexed by a stable string hash), and a
sentence embedding is the L2-normalized weighted sum of token embeddings.
Verb-category tokens carry weight ``VERB_WEIGHT`` so the words that identify
a skill dominate the sentence vector; the benchmark generator relies on this
to keep instructions of different skills separable under cosine similarity.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

VERB_WEIGHT = 4.0
TABLE_BUCKETS = 4096


def _token_bucket(token: str) -> int:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % TABLE_BUCKETS


@dataclass(frozen=True)
class TextEncoding:
    """Sentence embedding (unit norm) plus per-token embeddings."""

    sentence: np.ndarray      # (dim,), ||.|| == 1
    tokens: np.ndarray        # (n_tokens, dim)


class FrozenTextEncoder:
    """Deterministic token-table encoder with verb-weighted pooling."""

    def __init__(self, dim: int = 32, table_seed: int = 411,
                 verb_tokens: frozenset[str] | None = None):
        self.dim = dim
        self.table_seed = table_seed
        self.verb_tokens = frozenset(verb_tokens or ())
        rng = np.random.default_rng(np.random.SeedSequence((table_seed, dim)))
        table = rng.standard_normal((TABLE_BUCKETS, dim))
        self.table = table / np.linalg.norm(table, axis=1, keepdims=True)

    def encode(self, tokens: list[str]) -> TextEncoding:
        if not tokens:
            raise ValueError("cannot encode an empty token list")
        embs = np.stack([self.table[_token_bucket(t)] for t in tokens])
        weights = np.array([VERB_WEIGHT if t in self.verb_tokens else 1.0
                            for t in tokens])
        pooled = (weights[:, None] * embs).sum(axis=0)
        norm = np.linalg.norm(pooled)
        if norm == 0.0:
            raise ValueError(f"token list {tokens} pooled to the zero vector")
        return TextEncoding(sentence=pooled / norm, tokens=embs)

    def spec(self) -> dict:
        """Serializable description; rebuilding from it yields the same encoder."""
        return {"dim": self.dim, "table_seed": self.table_seed,
                "verb_tokens": sorted(self.verb_tokens)}

    @classmethod
    def from_spec(cls, spec: dict) -> "FrozenTextEncoder":
        return cls(dim=spec["dim"], table_seed=spec["table_seed"],
                   verb_tokens=frozenset(spec["verb_tokens"]))
