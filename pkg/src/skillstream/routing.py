"""Instruction-to-skill routing through an adaptive semantic bank.

The bank is a zero-initialized matrix of instruction embeddings.  An incoming
sentence embedding is matched by cosine similarity against the occupied rows:
a similarity strictly above the threshold selects that row's skill code and
folds the embedding into the row by a similarity-weighted moving average; at
or below the threshold the next free row is claimed verbatim and the caller
must allocate fresh per-skill adapters for it.

Rows are never renormalized: cosine matching is scale-invariant, and the
moving average of unit vectors keeps row norms at or below one.  Similarity
against an all-zero row is treated as minus infinity so it can never match.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_THRESHOLD = 0.8
DEFAULT_CAPACITY = 16


class BankFullError(RuntimeError):
    """No free rows remain and no existing row matched."""


@dataclass(frozen=True)
class RoutingDecision:
    skill_code: int
    is_new: bool
    similarity: float   # max cosine observed at decision time (-inf on empty bank)


class SemanticBank:
    def __init__(self, capacity: int = DEFAULT_CAPACITY, dim: int = 32,
                 threshold: float = DEFAULT_THRESHOLD):
        if not 0.0 < threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
        self.rows = np.zeros((capacity, dim))
        self.occupancy = 0
        self.threshold = threshold

    @property
    def capacity(self) -> int:
        return self.rows.shape[0]

    def cosines(self, embedding: np.ndarray) -> np.ndarray:
        """Cosine of the embedding against every occupied row."""
        occupied = self.rows[:self.occupancy]
        norms = np.linalg.norm(occupied, axis=1)
        return occupied @ embedding / (norms * np.linalg.norm(embedding))

    def pairwise_cosines(self) -> np.ndarray:
        occupied = self.rows[:self.occupancy]
        norms = np.linalg.norm(occupied, axis=1, keepdims=True)
        unit = occupied / norms
        return unit @ unit.T

    def state_arrays(self) -> dict:
        return {"rows": self.rows, "occupancy": np.array([float(self.occupancy)])}

    def load_state_arrays(self, arrays: dict):
        self.rows = arrays["rows"]
        self.occupancy = int(arrays["occupancy"][0])


def route(embedding: np.ndarray, bank: SemanticBank,
          update: bool = True) -> RoutingDecision:
    """Assign a skill code to one instruction embedding.

    With ``update`` disabled (evaluation) the bank is read-only: no row is
    claimed and no moving average runs; an unmatched embedding falls back to
    the most similar occupied row so evaluation stays total.
    """
    if bank.occupancy == 0:
        if not update:
            raise BankFullError("cannot route against an empty bank read-only")
        bank.rows[0] = embedding
        bank.occupancy = 1
        return RoutingDecision(skill_code=0, is_new=True, similarity=float("-inf"))

    cos = bank.cosines(embedding)
    c_max = float(cos.max())
    if c_max > bank.threshold:
        h = int(np.argmax(cos))
        if update:
            coeff = min(c_max, 1.0)
            bank.rows[h] = (1.0 - coeff) * bank.rows[h] + coeff * embedding
        return RoutingDecision(skill_code=h, is_new=False, similarity=c_max)

    # below/at threshold: claim the next free row
    if not update:
        return RoutingDecision(skill_code=int(np.argmax(cos)), is_new=True,
                               similarity=c_max)
    if bank.occupancy >= bank.capacity:
        raise BankFullError(f"semantic bank is full ({bank.capacity} rows) and "
                            f"best similarity {c_max:.3f} <= threshold {bank.threshold}")
    h = bank.occupancy
    bank.rows[h] = embedding   # moving average with coefficient forced to 1
    bank.occupancy += 1
    return RoutingDecision(skill_code=h, is_new=True, similarity=c_max)


def route_batch(embeddings: list[np.ndarray], bank: SemanticBank,
                update: bool = True) -> list[RoutingDecision]:
    """Route samples sequentially in batch order (bank updates are order
    dependent by design)."""
    return [route(e, bank, update=update) for e in embeddings]
