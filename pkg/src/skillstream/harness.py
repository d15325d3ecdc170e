"""Run orchestration: full training runs, resume, and the method benchmark.

A run trains every task in order, evaluates all introduced skills after each
task boundary, writes a checkpoint per task plus the training log, and emits
a deterministic report.  The benchmark repeats runs across methods and seeds
on a shared suite and aggregates the reports into a comparison table.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import replace

from .checkpoint import load_checkpoint, save_checkpoint
from .evaluate import (RunReport, compare_runs, evaluate_introduced_skills,
                       gate_checks, write_comparison)
from .suite import Suite, generate_suite
from .training import EpisodeStore, RunConfig, Trainer, apply_method


def suite_digest(suite: Suite) -> str:
    blob = json.dumps(suite.manifest(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def build_report(trainer: Trainer, method: str = "ours") -> RunReport:
    cfg = trainer.config
    excluded = [i for i in cfg.suite_config().task_skills(cfg.n_tasks)]
    return RunReport(
        scores=trainer.scores,
        base_skill_ids=cfg.suite_config().task_skills(1),
        final_task=cfg.n_tasks,
        config_digest=cfg.digest(),
        suite_digest=suite_digest(trainer.suite),
        seed=cfg.seed,
        method=method,
        meta={"forget_excluded_skills": excluded,
              "note": "skills introduced in the final task have no earlier "
                      "evaluation and are excluded from the forgetting average"},
    )


def train_run(config: RunConfig, out_dir=None, method: str = "ours",
              suite: Suite | None = None, store: EpisodeStore | None = None,
              halt_after_total_iters: int | None = None,
              trainer: Trainer | None = None) -> tuple[RunReport | None, Trainer]:
    """Execute (or finish) a full run.

    ``halt_after_total_iters`` stops mid-run after that many additional
    iterations and returns (None, trainer) so the caller can checkpoint;
    passing a restored ``trainer`` resumes where it stopped.
    """
    if trainer is None:
        trainer = Trainer(config, suite=suite, store=store)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    remaining = halt_after_total_iters
    for m in range(1, config.n_tasks + 1):
        if m <= trainer.tasks_done:
            continue
        start = trainer.iters_done_in_task
        result = trainer.run_task(m, start_iter=start, halt_after=remaining)
        if not result["completed"]:
            return None, trainer
        if remaining is not None:
            remaining -= result["iterations"]
        trainer.scores[m] = evaluate_introduced_skills(trainer, m)
        if out_dir is not None:
            save_checkpoint(trainer, os.path.join(out_dir, f"checkpoint-task{m}.bin"))

    report = build_report(trainer, method)
    if out_dir is not None:
        trainer.write_log(os.path.join(out_dir, "train_log.csv"))
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
        trainer.suite.save_manifest(os.path.join(out_dir, "suite.json"))
    return report, trainer


def resume_run(checkpoint_path, out_dir=None, method: str = "ours",
               suite: Suite | None = None, store: EpisodeStore | None = None):
    trainer = load_checkpoint(checkpoint_path, suite=suite, store=store)
    return train_run(trainer.config, out_dir=out_dir, method=method,
                     trainer=trainer)


DEFAULT_BENCH_METHODS = ("ours", "er", "ft", "no-sep", "no-srd", "no-ssr")


def bench_run(config: RunConfig, seeds: list[int], methods: list[str],
              out_dir=None, progress=None) -> dict:
    """Train every (method, seed) pair on one shared suite and emit the
    comparison table.  The suite is fixed by config.suite_seed; run seeds
    vary only initialization and training randomness, so scores aggregate
    over repetitions of the same benchmark."""
    suite = generate_suite(config.suite_config(), config.suite_seed)
    store = EpisodeStore(suite, config)
    reports: dict[str, list[RunReport]] = {m: [] for m in methods}
    for seed in seeds:
        seed_config = replace(config, seed=seed)
        for method in methods:
            run_config = apply_method(seed_config, method)
            run_dir = None
            if out_dir is not None:
                run_dir = os.path.join(out_dir, f"{method}-seed{seed}")
            report, _ = train_run(run_config, out_dir=run_dir, method=method,
                                  suite=suite, store=store)
            reports[method].append(report)
            if progress is not None:
                progress(method, seed, report)
    comparison = compare_runs(reports)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_comparison(comparison, os.path.join(out_dir, "comparison.csv"),
                         os.path.join(out_dir, "comparison.json"))
    return comparison


__all__ = ["train_run", "resume_run", "bench_run", "build_report",
           "suite_digest", "gate_checks", "DEFAULT_BENCH_METHODS"]
