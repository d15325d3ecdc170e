"""Behavior-cloning and distillation losses, plus teacher snapshots.

Cross-entropy sums the per-head losses (translation, three rotation axes,
gripper, collision) and averages over the batch.  The distillation term is a
per-head KL divergence between temperature-softened teacher and student
head distributions, averaged over the replayed (masked) samples only; with
no replayed samples in the batch it is defined as exactly zero.  Per-head
softening is forced by the heads' different cardinalities, and the KL is not
rescaled by temperature squared, so its gradient scale shrinks as the
temperature grows.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .actions import ActionLogits, ActionTarget, flat_index


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    ssr: float
    srd: float
    total: float
    masked_count: int


def loss_total(ce: float, ssr: float, srd: float, distill_weight: float,
               masked_count: int = 0) -> LossBreakdown:
    for name, v in (("ce", ce), ("ssr", ssr), ("srd", srd)):
        if not np.isfinite(v):
            raise ValueError(f"non-finite loss component '{name}': {v}")
    return LossBreakdown(ce=ce, ssr=ssr, srd=srd,
                         total=ce + ssr + distill_weight * srd,
                         masked_count=masked_count)


def _head_items(logits: ActionLogits, target: ActionTarget | None, grid: int):
    """(head tensor 1-D, target index) pairs in a fixed head order."""
    rot = logits.rotation
    items = [(logits.translation,
              None if target is None else flat_index(target.trans_bins, grid))]
    for axis in range(3):
        head = ad.take_rows(rot, [axis]).reshape(rot.shape[1]) if isinstance(rot, Tensor) \
            else rot[axis]
        items.append((head, None if target is None else target.rot_bins[axis]))
    items.append((logits.gripper, None if target is None else target.gripper))
    items.append((logits.collision, None if target is None else target.collision))
    return items


def loss_ce(logits_batch: list[ActionLogits], targets: list[ActionTarget],
            grid: int) -> Tensor:
    """Summed per-head cross-entropy, averaged over the batch."""
    if not logits_batch:
        raise ValueError("cross-entropy needs a nonempty batch")
    total = None
    for logits, target in zip(logits_batch, targets):
        for head, idx in _head_items(logits, target, grid):
            k = head.shape[0]
            if not 0 <= idx < k:
                raise ValueError(f"target index {idx} out of range for a "
                                 f"{k}-way head")
            nll = ad.nll_1d(head, idx)
            total = nll if total is None else ad.add(total, nll)
    return ad.mul(total, 1.0 / len(logits_batch))


def loss_srd(student_batch: list[ActionLogits], teacher_batch: list[ActionLogits | None],
             replay_mask: np.ndarray, temperature: float, grid: int) -> Tensor:
    """Teacher-to-student KL on softened head distributions over replayed
    samples; exactly zero when the mask selects nothing."""
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    replay_mask = np.asarray(replay_mask)
    masked = int(replay_mask.sum())
    if masked == 0:
        return Tensor(0.0)
    total = None
    for j, (student, teacher) in enumerate(zip(student_batch, teacher_batch)):
        if not replay_mask[j]:
            continue
        if teacher is None:
            raise ValueError("replay-masked sample lacks teacher logits")
        t_arrays = teacher.arrays()
        s_heads = _head_items(student, None, grid)
        t_heads = [t_arrays.translation, t_arrays.rotation[0], t_arrays.rotation[1],
                   t_arrays.rotation[2], t_arrays.gripper, t_arrays.collision]
        for (s_head, _), t_logits in zip(s_heads, t_heads):
            t_soft = t_logits / temperature
            t_soft = t_soft - t_soft.max()
            p = np.exp(t_soft) / np.exp(t_soft).sum()
            # sum_k p log p (constant); p == 0 contributes nothing
            entropy = float(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0).sum())
            cross = ad.softened_cross_entropy(s_head, p, temperature)
            kl = ad.add(cross, Tensor(entropy))
            total = kl if total is None else ad.add(total, kl)
    return ad.mul(total, 1.0 / masked)


# -- teacher snapshots --------------------------------------------------------


def _freeze_map(params: dict) -> dict:
    return {name: Tensor(np.array(t.data, copy=True), requires_grad=False)
            for name, t in params.items()}


def params_digest(groups: dict) -> str:
    """Stable hash over named parameter groups (frozen-contract checks)."""
    digest = hashlib.sha256()
    for group in sorted(groups):
        for name in sorted(groups[group]):
            digest.update(f"{group}/{name}".encode())
            digest.update(groups[group][name].data.tobytes())
    return digest.hexdigest()


@dataclass
class TeacherSnapshot:
    """Frozen value copies of the previous task's models."""

    policy_params: dict
    adapters: object            # AdapterSet with frozen tensors
    field_params: dict
    task_index: int
    digest: str

    def verify(self) -> bool:
        groups = {"policy": self.policy_params, "field": self.field_params,
                  "adapters": self.adapters.named_parameters()}
        return params_digest(groups) == self.digest


def snapshot_teacher(policy_params: dict, adapters, field_params: dict,
                     task_index: int) -> TeacherSnapshot:
    """Deep value copy of the current models; later student updates cannot
    touch it.  Only defined from the second task on."""
    from .policy import AdapterSet   # local import to avoid a cycle

    if task_index < 2:
        raise ValueError("no teacher exists before the second task")
    frozen = AdapterSet(adapters.config)
    for h, entry in adapters.skills.items():
        frozen.skills[h] = {name: Tensor(np.array(t.data, copy=True),
                                         requires_grad=False)
                            for name, t in entry.items()}
    snap = TeacherSnapshot(policy_params=_freeze_map(policy_params),
                           adapters=frozen,
                           field_params=_freeze_map(field_params),
                           task_index=task_index, digest="")
    snap.digest = params_digest({"policy": snap.policy_params,
                                 "field": snap.field_params,
                                 "adapters": frozen.named_parameters()})
    return snap
