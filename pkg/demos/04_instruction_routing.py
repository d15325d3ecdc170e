"""Walk the semantic bank through a stream of instructions: first sight
claims a row, repeats fold in by a similarity-weighted moving average, and
evaluation-time routing is read-only."""

import numpy as np

from skillstream.routing import SemanticBank, route
from skillstream.suite import SuiteConfig, generate_suite

suite = generate_suite(SuiteConfig(), seed=0)
bank = SemanticBank(capacity=16, dim=suite.config.sentence_dim, threshold=0.8)

print("streaming two episodes of each skill:")
for spec in suite.skills:
    for idx in range(2):
        ep = suite.episode(spec.skill_id, "train", idx)
        emb = suite.encoder.encode(ep.instruction).sentence
        d = route(emb, bank)
        tag = "NEW " if d.is_new else "     "
        print(f"  {tag}skill {spec.skill_id} -> code {d.skill_code} "
              f"(similarity {d.similarity:+.3f})  {' '.join(ep.instruction)!r}")

print(f"\nbank occupancy: {bank.occupancy}")
cos = bank.pairwise_cosines()
print("pairwise row cosines (diagonal is 1):")
for i in range(bank.occupancy):
    print("  " + " ".join(f"{cos[i, j]:+.2f}" for j in range(bank.occupancy)))

# replayed old instructions keep their codes even after later skills arrive
ep = suite.episode(0, "train", 5)
emb = suite.encoder.encode(ep.instruction).sentence
d = route(emb, bank, update=False)
print(f"\nreplayed skill-0 episode routes back to code {d.skill_code} "
      f"(read-only, bank untouched)")

# the hand-checkable moving average: matching with similarity 0.9 keeps 10%
# of the old row
toy = SemanticBank(capacity=4, dim=3, threshold=0.8)
route(np.array([1.0, 0.0, 0.0]), toy)
route(np.array([0.9, np.sqrt(1 - 0.81), 0.0]), toy)
print("\ntoy bank row after one update:", np.round(toy.rows[0], 5))
