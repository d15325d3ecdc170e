import numpy as np
import pytest

from skillstream import autodiff as ad
from skillstream.autodiff import Tensor, check_gradients
from skillstream.actions import ActionLogits, ActionTarget
from skillstream.losses import (loss_ce, loss_srd, loss_total, params_digest,
                                snapshot_teacher)
from skillstream.policy import AdapterSet, PolicyConfig

GRID = 4   # tiny translation head: 64 cells


def make_logits(rng, requires_grad=True, concentrate_on=None, margin=30.0):
    def t(shape):
        return Tensor(rng.standard_normal(shape) * 0.1, requires_grad=requires_grad)

    logits = ActionLogits(t(GRID ** 3), t((3, 72)), t(2), t(2))
    if concentrate_on is not None:
        tr = np.zeros(GRID ** 3)
        from skillstream.actions import flat_index
        tr[flat_index(concentrate_on.trans_bins, GRID)] = margin
        rot = np.zeros((3, 72))
        for a in range(3):
            rot[a, concentrate_on.rot_bins[a]] = margin
        gr = np.zeros(2)
        gr[concentrate_on.gripper] = margin
        co = np.zeros(2)
        co[concentrate_on.collision] = margin
        logits = ActionLogits(Tensor(tr, requires_grad=requires_grad),
                              Tensor(rot, requires_grad=requires_grad),
                              Tensor(gr, requires_grad=requires_grad),
                              Tensor(co, requires_grad=requires_grad))
    return logits


def test_concentrated_logits_give_near_zero_ce():
    rng = np.random.default_rng(0)
    target = ActionTarget((1, 2, 3), (10, 20, 30), 1, 0)
    logits = make_logits(rng, concentrate_on=target)
    loss = loss_ce([logits], [target], GRID)
    assert loss.item() < 1e-9


def test_uniform_rotation_head_contributes_ln72():
    target = ActionTarget((0, 0, 0), (5, 6, 7), 0, 0)
    zero = ActionLogits(Tensor(np.zeros(GRID ** 3), requires_grad=True),
                        Tensor(np.zeros((3, 72)), requires_grad=True),
                        Tensor(np.zeros(2), requires_grad=True),
                        Tensor(np.zeros(2), requires_grad=True))
    loss = loss_ce([zero], [target], GRID)
    expected = np.log(GRID ** 3) + 3 * np.log(72.0) + 2 * np.log(2.0)
    assert loss.item() == pytest.approx(expected, rel=1e-12)
    # the rotation heads alone contribute 3 * ln 72, each about 4.2767
    assert np.log(72.0) == pytest.approx(4.2767, abs=5e-5)


def test_ce_out_of_range_target_rejected():
    rng = np.random.default_rng(1)
    logits = make_logits(rng)
    bad = ActionTarget((GRID, 0, 0), (0, 0, 0), 0, 0)   # bin == GRID overflows
    with pytest.raises(ValueError, match="out of range"):
        loss_ce([logits], [bad], GRID)


def test_ce_empty_batch_rejected():
    with pytest.raises(ValueError, match="nonempty"):
        loss_ce([], [], GRID)


def test_ce_gradcheck():
    rng = np.random.default_rng(2)
    logits = make_logits(rng)
    target = ActionTarget((0, 1, 2), (3, 4, 5), 1, 1)
    params = {"t": logits.translation, "r": logits.rotation,
              "g": logits.gripper, "c": logits.collision}
    rep = check_gradients(lambda: loss_ce([logits], [target], GRID), params,
                          max_entries=20, rng=np.random.default_rng(3))
    assert rep.passed and rep.worst < 1e-4


def test_srd_zero_for_identical_logits():
    rng = np.random.default_rng(4)
    student = make_logits(rng)
    teacher = ActionLogits(student.translation.data.copy(),
                           student.rotation.data.copy(),
                           student.gripper.data.copy(),
                           student.collision.data.copy())
    loss = loss_srd([student], [teacher], np.ones(1), 3.0, GRID)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_srd_zero_when_mask_empty():
    rng = np.random.default_rng(5)
    student = make_logits(rng)
    teacher = make_logits(np.random.default_rng(99))
    loss = loss_srd([student], [teacher.arrays()], np.zeros(1), 3.0, GRID)
    assert loss.item() == 0.0


def test_srd_two_class_hand_example():
    # teacher (ln 2, 0), student (0, 0), temperature 1:
    # KL(<2/3,1/3> || <1/2,1/2>) = (2/3) ln(4/3) + (1/3) ln(2/3)
    expected = (2 / 3) * np.log(4 / 3) + (1 / 3) * np.log(2 / 3)
    assert expected == pytest.approx(0.05663, abs=5e-6)

    student = ActionLogits(Tensor(np.zeros(GRID ** 3), requires_grad=True),
                           Tensor(np.zeros((3, 72)), requires_grad=True),
                           Tensor(np.zeros(2), requires_grad=True),
                           Tensor(np.zeros(2), requires_grad=True))
    teacher = ActionLogits(np.zeros(GRID ** 3), np.zeros((3, 72)),
                           np.array([np.log(2.0), 0.0]), np.zeros(2))
    loss = loss_srd([student], [teacher], np.ones(1), 1.0, GRID)
    # all other heads are identical (zero KL); only the gripper head contributes
    assert loss.item() == pytest.approx(expected, abs=1e-12)


def test_srd_shift_invariance():
    rng = np.random.default_rng(6)
    student = make_logits(rng)
    t_arrays = make_logits(np.random.default_rng(7)).arrays()
    base = loss_srd([student], [t_arrays], np.ones(1), 3.0, GRID).item()

    shifted_student = ActionLogits(
        ad.add(student.translation, 11.0), ad.add(student.rotation, -4.0),
        ad.add(student.gripper, 0.5), ad.add(student.collision, 2.0))
    shifted_teacher = ActionLogits(t_arrays.translation + 3.0,
                                   t_arrays.rotation - 9.0,
                                   t_arrays.gripper + 1.0,
                                   t_arrays.collision - 0.25)
    shifted = loss_srd([shifted_student], [shifted_teacher], np.ones(1), 3.0,
                       GRID).item()
    assert shifted == pytest.approx(base, abs=1e-9)


def test_srd_temperature_limit_vanishes():
    rng = np.random.default_rng(8)
    student = make_logits(rng)
    teacher = make_logits(np.random.default_rng(9)).arrays()
    loss = loss_srd([student], [teacher], np.ones(1), 1e6, GRID)
    assert loss.item() < 1e-6


def test_srd_nonnegative_and_masked_average():
    rng = np.random.default_rng(10)
    students = [make_logits(rng) for _ in range(3)]
    teachers = [make_logits(np.random.default_rng(20 + i)).arrays()
                for i in range(3)]
    mask = np.array([1.0, 0.0, 1.0])
    loss = loss_srd(students, teachers, mask, 3.0, GRID)
    assert loss.item() >= 0.0
    # equals the mean of the two masked single-sample losses
    a = loss_srd([students[0]], [teachers[0]], np.ones(1), 3.0, GRID).item()
    c = loss_srd([students[2]], [teachers[2]], np.ones(1), 3.0, GRID).item()
    assert loss.item() == pytest.approx((a + c) / 2.0, rel=1e-12)


def test_srd_temperature_validated():
    with pytest.raises(ValueError, match="temperature"):
        loss_srd([], [], np.zeros(0), 0.0, GRID)


def test_srd_gradcheck():
    rng = np.random.default_rng(11)
    student = make_logits(rng)
    teacher = make_logits(np.random.default_rng(12)).arrays()
    params = {"t": student.translation, "r": student.rotation,
              "g": student.gripper, "c": student.collision}
    rep = check_gradients(lambda: loss_srd([student], [teacher], np.ones(1),
                                           3.0, GRID), params,
                          max_entries=20, rng=np.random.default_rng(13))
    assert rep.passed and rep.worst < 1e-4


def test_loss_total_arithmetic():
    b = loss_total(1.0, 2.0, 5.0, 0.2)
    assert b.total == pytest.approx(4.0, abs=1e-12)
    assert loss_total(1.0, 2.0, 5.0, 0.0).total == pytest.approx(3.0)
    assert loss_total(1.0, 0.0, 5.0, 0.2).total == pytest.approx(2.0)
    assert abs(b.total - (b.ce + b.ssr + 0.2 * b.srd)) < 1e-9


def test_loss_total_rejects_nonfinite():
    with pytest.raises(ValueError, match="non-finite"):
        loss_total(float("nan"), 0.0, 0.0, 0.2)


def test_teacher_snapshot_frozen_under_student_updates():
    cfg = PolicyConfig(grid=10, patch=5, feat_channels=2, model_dim=8, latents=2,
                       lora_rank=2, self_blocks=1, sentence_dim=4)
    rng = np.random.default_rng(14)
    from skillstream.policy import init_policy_params
    from skillstream.field import FieldConfig, init_field_params

    params = init_policy_params(cfg, rng)
    adapters = AdapterSet(cfg)
    adapters.allocate(0, rng)
    fparams = init_field_params(FieldConfig(feat_channels=2, hidden=4,
                                            semantic_dim=2), rng)
    snap = snapshot_teacher(params, adapters, fparams, task_index=2)
    digest_before = snap.digest
    assert snap.verify()

    # student keeps training; snapshot must not move
    for t in list(params.values()) + list(adapters.skills[0].values()):
        t.data = t.data + 1.0
    assert snap.verify()
    assert snap.digest == digest_before
    groups = {"policy": snap.policy_params, "field": snap.field_params,
              "adapters": snap.adapters.named_parameters()}
    assert params_digest(groups) == digest_before


def test_teacher_snapshot_requires_second_task():
    with pytest.raises(ValueError, match="second task"):
        snapshot_teacher({}, AdapterSet(PolicyConfig(grid=5, patch=5)), {}, 1)
