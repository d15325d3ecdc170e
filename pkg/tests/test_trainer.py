import numpy as np
import pytest

from skillstream.harness import train_run
from skillstream.training import (METHOD_PRESETS, ReplayBuffer, RunConfig,
                                  TaskOrderError, Trainer, apply_method,
                                  sample_batch)

TINY = RunConfig(base_skills=2, increments=(1,), train_episodes=3,
                 test_episodes=2, variations=2, iters_base=30, iters_incr=15,
                 rays_per_sample=6, ray_samples=6, latents=8,
                 replay_capacity=2, seed=0, suite_seed=0)


@pytest.fixture(scope="module")
def finished_run():
    report, trainer = train_run(TINY, method="ours")
    return report, trainer


def test_sample_batch_uniform_union_fraction():
    rng = np.random.default_rng(0)
    current = [("c", i) for i in range(30)]
    replay = [("r", i) for i in range(10)]
    mask_total = 0
    n = 10000
    for _ in range(n // 2):
        _, mask = sample_batch(current, replay, 2, rng)
        mask_total += mask.sum()
    frac = mask_total / n
    assert abs(frac - 0.25) < 0.02


def test_sample_batch_empty_replay_gives_zero_mask():
    rng = np.random.default_rng(1)
    picked, mask = sample_batch([("c", 0)], [], 4, rng)
    assert np.array_equal(mask, np.zeros(4))
    assert all(p == ("c", 0) for p in picked)


def test_sample_batch_empty_current_gives_full_mask():
    rng = np.random.default_rng(2)
    picked, mask = sample_batch([], [("r", 0), ("r", 1)], 3, rng)
    assert np.array_equal(mask, np.ones(3))


def test_sample_batch_empty_union_rejected():
    with pytest.raises(ValueError, match="empty pools"):
        sample_batch([], [], 2, np.random.default_rng(0))


def test_replay_buffer_caps_per_skill():
    rng = np.random.default_rng(3)
    buf = ReplayBuffer(capacity_per_skill=4)
    keys = [(0, "train", i) for i in range(8)]
    buf.store_task({0: keys}, rng)
    assert len(buf.episodes[0]) == 4
    assert len(set(buf.episodes[0])) == 4          # without replacement
    assert set(buf.episodes[0]) <= set(keys)


def test_replay_buffer_stores_all_when_fewer_than_capacity():
    buf = ReplayBuffer(capacity_per_skill=4)
    keys = [(1, "train", i) for i in range(3)]
    buf.store_task({1: keys}, np.random.default_rng(0))
    assert buf.episodes[1] == keys


def test_replay_buffer_selection_reproducible():
    keys = [(0, "train", i) for i in range(10)]
    a = ReplayBuffer(4)
    a.store_task({0: keys}, np.random.default_rng(7))
    b = ReplayBuffer(4)
    b.store_task({0: keys}, np.random.default_rng(7))
    assert a.episodes == b.episodes


def test_replay_buffer_rejects_restore():
    buf = ReplayBuffer(2)
    buf.store_task({0: [(0, "train", 0)]}, np.random.default_rng(0))
    with pytest.raises(ValueError, match="already stored"):
        buf.store_task({0: [(0, "train", 1)]}, np.random.default_rng(0))


def test_tasks_must_run_in_order():
    trainer = Trainer(TINY)
    with pytest.raises(TaskOrderError):
        trainer.run_task(2)


def test_memory_stores_only_after_task_completes():
    trainer = Trainer(TINY)
    trainer.run_task(1, halt_after=5)
    assert trainer.buffer.episodes == {}           # mid-task: nothing stored
    trainer.run_task(1, start_iter=trainer.iters_done_in_task)
    assert sorted(trainer.buffer.episodes) == [0, 1]


def test_base_task_has_zero_distill_column(finished_run):
    _, trainer = finished_run
    rows = [r for r in trainer.log_rows if r["task"] == 1]
    assert all(r["srd"] == 0.0 for r in rows)
    assert all(r["masked"] == 0 for r in rows)


def test_incremental_task_eventually_distills(finished_run):
    _, trainer = finished_run
    rows = [r for r in trainer.log_rows if r["task"] == 2]
    assert any(r["masked"] > 0 for r in rows)
    assert any(r["srd"] > 0.0 for r in rows)


def test_no_srd_keeps_teacher_but_zeroes_loss():
    cfg = apply_method(TINY, "no-srd")
    report, trainer = train_run(cfg, method="no-srd")
    assert trainer.teacher is not None             # snapshots still taken
    rows = [r for r in trainer.log_rows if r["task"] == 2]
    assert all(r["srd"] == 0.0 for r in rows)
    assert all(abs(r["total"] - (r["ce"] + r["ssr"])) < 1e-9 for r in rows)


def test_ft_preset_never_stores_memory():
    cfg = apply_method(TINY, "ft")
    report, trainer = train_run(cfg, method="ft")
    assert trainer.buffer.episodes == {}
    rows = trainer.log_rows
    assert all(r["masked"] == 0 for r in rows)


def test_no_ssr_zeroes_render_column():
    cfg = apply_method(TINY, "no-ssr")
    report, trainer = train_run(cfg, method="no-ssr")
    assert all(r["ssr"] == 0.0 for r in trainer.log_rows)


def test_unknown_method_rejected():
    with pytest.raises(ValueError, match="unknown method"):
        apply_method(TINY, "era")
    assert set(METHOD_PRESETS) == {"ours", "er", "ft", "no-sep", "no-srd", "no-ssr"}


def test_no_sep_routes_everything_to_code_zero():
    cfg = apply_method(TINY, "no-sep")
    report, trainer = train_run(cfg, method="no-sep")
    assert sorted(trainer.adapters.skills) == [0]
    assert trainer.bank.occupancy == 0


def test_sep_allocates_one_code_per_skill(finished_run):
    _, trainer = finished_run
    assert trainer.bank.occupancy == TINY.suite_config().n_skills == 3
    assert sorted(trainer.adapters.skills) == [0, 1, 2]


def test_unrouted_adapters_get_exact_zero_gradients():
    from skillstream.autodiff import gradients
    from skillstream.losses import loss_ce

    trainer = Trainer(TINY)
    trainer.run_task(1, halt_after=8)
    assert len(trainer.adapters.skills) >= 2
    # build a loss that routes only through skill code 0
    bundle = trainer.store.bundle(0, "train", 0)
    from skillstream.policy import deep_volume
    volume = deep_volume(bundle.raw_grid, trainer.params, trainer.pc)
    logits = trainer._policy_logits(bundle, bundle.samples[0], 0,
                                    trainer.params, trainer.adapters, volume)
    loss = loss_ce([logits], [bundle.samples[0].target], TINY.grid)
    everything = trainer.named_parameters()
    grads = gradients(loss, everything)
    for name, g in grads.items():
        if name.startswith("adapter.h1.") or name.startswith("adapter.h2."):
            assert np.all(g == 0.0), name
    assert any(np.any(grads[n] != 0.0) for n in grads
               if n.startswith("adapter.h0."))


def test_run_is_deterministic_end_to_end():
    r1, _ = train_run(TINY, method="ours")
    r2, _ = train_run(TINY, method="ours")
    assert r1.to_json() == r2.to_json()


def test_training_log_schema(tmp_path, finished_run):
    _, trainer = finished_run
    path = tmp_path / "train_log.csv"
    trainer.write_log(path)
    import csv

    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == TINY.iters_base + TINY.iters_incr
    assert set(rows[0]) == {"task", "iteration", "ce", "ssr", "srd", "total",
                            "masked"}
    b = rows[0]
    assert abs(float(b["total"]) - (float(b["ce"]) + float(b["ssr"])
                                    + TINY.distill_weight * float(b["srd"]))) < 1e-9
