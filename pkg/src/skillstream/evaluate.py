"""Held-out evaluation, continual-learning metrics, and method comparison.

An episode counts as a success only if every keyframe prediction lands
within tolerance: one translation bin per axis (Chebyshev), one rotation bin
per axis, and exact gripper/collision bits.  This judge replaces a
simulator's success signal and is deliberately isolated in
``actions.within_tolerance`` so stricter variants stay pluggable.

Metrics over the task stream: the average metric is the mean over tasks of
the mean score across all skills introduced so far; the forgetting metric is
the per-skill maximum drop from any earlier evaluation to the final one,
averaged over skills that have at least one earlier evaluation (skills
introduced in the final task are excluded and listed in the report
metadata).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from .actions import decode_action, within_tolerance
from .autodiff import Tensor
from .policy import deep_volume, encode_language, encode_patches, forward_policy
from .routing import route


@dataclass
class RunReport:
    """Per-task per-skill success scores plus derived summary metrics."""

    scores: dict[int, dict[int, float]]   # scores[task m][skill i], percent
    base_skill_ids: list[int]
    final_task: int
    config_digest: str
    suite_digest: str
    seed: int
    method: str = "ours"
    meta: dict = dc_field(default_factory=dict)

    def skills_at(self, task_index: int) -> list[int]:
        return sorted(self.scores[task_index])

    def intro_task(self, skill_id: int) -> int:
        for m in sorted(self.scores):
            if skill_id in self.scores[m]:
                return m
        raise KeyError(f"skill {skill_id} never evaluated")

    # -- derived metrics ---------------------------------------------------

    def base_score(self) -> float:
        final = self.scores[self.final_task]
        return float(np.mean([final[i] for i in self.base_skill_ids]))

    def novel_score(self) -> float:
        final = self.scores[self.final_task]
        novel = [i for i in final if i not in self.base_skill_ids]
        if not novel:
            return float("nan")
        return float(np.mean([final[i] for i in novel]))

    def all_score(self) -> float:
        final = self.scores[self.final_task]
        return float(np.mean(list(final.values())))

    def summary(self) -> dict:
        return {"base": self.base_score(), "novel": self.novel_score(),
                "all": self.all_score(), "avg": metric_avg(self),
                "forget": metric_forget(self)}

    def to_dict(self) -> dict:
        return {
            "format": "skillstream-report-v1",
            "method": self.method,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "suite_digest": self.suite_digest,
            "base_skill_ids": self.base_skill_ids,
            "final_task": self.final_task,
            "scores": {str(m): {str(i): self.scores[m][i]
                                for i in sorted(self.scores[m])}
                       for m in sorted(self.scores)},
            "metrics": self.summary(),
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        scores = {int(m): {int(i): v for i, v in row.items()}
                  for m, row in d["scores"].items()}
        return cls(scores=scores, base_skill_ids=list(d["base_skill_ids"]),
                   final_task=d["final_task"], config_digest=d["config_digest"],
                   suite_digest=d["suite_digest"], seed=d["seed"],
                   method=d.get("method", "ours"), meta=d.get("meta", {}))


def metric_avg(report: RunReport) -> float:
    """Mean over tasks of the mean score across skills present so far."""
    per_task = [float(np.mean(list(report.scores[m].values())))
                for m in sorted(report.scores)]
    return float(np.mean(per_task))


def metric_forget(report: RunReport) -> float:
    """Mean over skills of the maximum drop from any earlier evaluation to
    the final score.  Skills first evaluated at the final task are skipped
    (they have no earlier evaluation to drop from)."""
    m_final = report.final_task
    if m_final < 2:
        raise ValueError("forgetting needs at least two tasks")
    final = report.scores[m_final]
    drops = []
    for skill_id in sorted(final):
        prior = [report.scores[m][skill_id] for m in range(1, m_final)
                 if skill_id in report.scores[m]]
        if not prior:
            continue
        drops.append(max(p - final[skill_id] for p in prior))
    if not drops:
        return float("nan")
    return float(np.mean(drops))


# -- running evaluation against a policy ----------------------------------------


def make_predictor(trainer) -> callable:
    """Build a read-only sample -> ActionTarget function from trainer state.

    Routing consults the bank with updates disabled; the bank is never
    mutated by evaluation.
    """
    cfg = trainer.config

    def predict(bundle, sample):
        if cfg.no_sep:
            h = 0
        else:
            h = route(bundle.sentence, trainer.bank, update=False).skill_code
        with Tensor.no_grad():
            volume = deep_volume(bundle.raw_grid, trainer.params, trainer.pc)
            p = encode_patches(volume, sample.state_bits, trainer.params, trainer.pc)
            e = encode_language(bundle.token_embs, trainer.params)
            _, logits = forward_policy(p, e, h, trainer.adapters, trainer.params,
                                       trainer.pc, volume=volume)
        return decode_action(logits, cfg.grid)

    return predict


def evaluate_skill(predict, episode_bundles: list) -> float:
    """Success score (%) over held-out episodes: an episode succeeds iff
    every keyframe prediction is within tolerance."""
    if not episode_bundles:
        raise ValueError("cannot evaluate a skill with no test episodes")
    successes = 0
    for bundle in episode_bundles:
        ok = all(within_tolerance(predict(bundle, s), s.target)
                 for s in bundle.samples)
        successes += bool(ok)
    return 100.0 * successes / len(episode_bundles)


def evaluate_introduced_skills(trainer, upto_task: int) -> dict[int, float]:
    """Score every skill introduced at or before ``upto_task`` on its test set."""
    predict = make_predictor(trainer)
    out = {}
    for m in range(1, upto_task + 1):
        for skill_id in trainer.suite.config.task_skills(m):
            bundles = [trainer.store.bundle(skill_id, "test", i)
                       for i in range(trainer.config.test_episodes)]
            out[skill_id] = evaluate_skill(predict, bundles)
    return out


# -- cross-method comparison -----------------------------------------------------


COMPARE_COLUMNS = ["base", "novel", "all", "avg", "forget"]


def compare_runs(reports_by_method: dict[str, list[RunReport]]) -> dict:
    """Aggregate per-method reports (across seeds) into one table.

    All reports must come from the same suite (digest match).  Values are
    mean and range (max - min) across seeds.
    """
    digests = {r.suite_digest for rs in reports_by_method.values() for r in rs}
    if len(digests) > 1:
        raise ValueError(f"reports span different suites: {sorted(digests)}")
    table = {}
    for method, reports in reports_by_method.items():
        if not reports:
            raise ValueError(f"method '{method}' has no reports")
        rows = [r.summary() for r in reports]
        entry = {}
        for col in COMPARE_COLUMNS:
            vals = np.array([row[col] for row in rows])
            entry[f"{col}_mean"] = float(np.mean(vals))
            entry[f"{col}_range"] = float(np.max(vals) - np.min(vals))
        entry["seeds"] = sorted(r.seed for r in reports)
        table[method] = entry
    return {"format": "skillstream-comparison-v1",
            "suite_digest": next(iter(digests)) if digests else "",
            "methods": table}


def write_comparison(comparison: dict, csv_path, json_path):
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(comparison, fh, indent=2, sort_keys=True)
    methods = comparison["methods"]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["method"]
        for col in COMPARE_COLUMNS:
            header += [f"{col}_mean", f"{col}_range"]
        writer.writerow(header)
        for method in sorted(methods):
            row = [method]
            for col in COMPARE_COLUMNS:
                row += [methods[method][f"{col}_mean"], methods[method][f"{col}_range"]]
            writer.writerow(row)


def gate_checks(comparison: dict) -> list[tuple[str, bool, str]]:
    """The directional acceptance orderings; returns (name, passed, detail)."""
    m = comparison["methods"]

    def mean(method, col):
        return m[method][f"{col}_mean"]

    checks = []
    if "ours" in m and "ft" in m:
        ok = mean("ours", "forget") < mean("ft", "forget")
        checks.append(("forget(ours) < forget(ft)", ok,
                       f"{mean('ours', 'forget'):.2f} vs {mean('ft', 'forget'):.2f}"))
    if "ours" in m and "er" in m:
        ok = mean("ours", "all") >= mean("er", "all")
        checks.append(("all(ours) >= all(er)", ok,
                       f"{mean('ours', 'all'):.2f} vs {mean('er', 'all'):.2f}"))
    if "ours" in m and "no-sep" in m:
        ok = mean("ours", "novel") >= mean("no-sep", "novel")
        checks.append(("novel(ours) >= novel(no-sep)", ok,
                       f"{mean('ours', 'novel'):.2f} vs {mean('no-sep', 'novel'):.2f}"))
    if "ours" in m and "no-srd" in m:
        ok = mean("ours", "base") >= mean("no-srd", "base")
        checks.append(("base(ours) >= base(no-srd)", ok,
                       f"{mean('ours', 'base'):.2f} vs {mean('no-srd', 'base'):.2f}"))
    return checks
