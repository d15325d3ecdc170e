"""The continual training loop.

Tasks run strictly in order.  Per iteration: a batch is drawn uniformly from
the union of the current task's keyframes and the replay memory; every
sample is routed to a skill code (allocating fresh adapters on first sight);
the policy computes action logits for the cross-entropy term; the rendering
branch fits color and semantic maps on rays from the sample's auxiliary
views (replayed rays additionally pulled toward the frozen teacher field's
pseudo ground truth); replayed samples are distilled against the teacher
policy's softened head distributions.  One optimizer step updates the shared
parameters, the field, and only the adapters routed in this batch.

At each task boundary the finished task's episodes are subsampled into the
replay memory and the full model is snapshotted as the next task's teacher.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, gradients
from .field import (FieldConfig, RayBatch, color_loss, init_field_params,
                    render, render_objective, semantic_loss, stratified_samples)
from .losses import LossBreakdown, loss_ce, loss_srd, loss_total, snapshot_teacher
from .optim import make_optimizer
from .policy import (AdapterSet, PolicyConfig, deep_volume, encode_language,
                     encode_patches, forward_policy, init_policy_params)
from .routing import SemanticBank, route
from .semantics import FrozenSemanticOracle, prompt_tokens
from .suite import Suite, SuiteConfig, generate_suite
from .raster import render_observation
from .voxel import voxelize


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run; (seed, config) fixes the report."""

    # task stream
    base_skills: int = 4
    increments: tuple[int, ...] = (1, 1)
    train_episodes: int = 8
    test_episodes: int = 8
    variations: int = 4
    image_hw: int = 32
    grid: int = 20
    sentence_dim: int = 32
    table_seed: int = 411
    # policy dims
    feat_channels: int = 16
    model_dim: int = 64
    latents: int = 32
    lora_rank: int = 10
    self_blocks: int = 2
    patch: int = 5
    # rendering branch
    field_hidden: int = 64
    semantic_dim: int = 16
    ray_samples: int = 16
    rays_per_sample: int = 16
    noise_step: int = 2
    aux_views: int = 3
    # optimization
    optimizer: str = "adam"
    lr: float = 5e-4
    batch: int = 2
    iters_base: int = 2000
    iters_incr: int = 500
    # continual-learning knobs
    replay_capacity: int = 4
    routing_threshold: float = 0.8
    bank_capacity: int = 16
    semantic_weight: float = 0.1    # weight of the semantic map term
    distill_weight: float = 0.2     # weight of the teacher KL term
    temperature: float = 3.0
    replay_beta: float = 1.0        # weight of the pseudo-ground-truth term
    mix_ratio: float | None = None  # None: uniform over the pooled union
    # ablations / baselines
    no_sep: bool = False            # single shared adapter, no routing
    no_srd: bool = False            # drop the teacher KL term
    no_ssr: bool = False            # drop the rendering branch entirely
    replay: bool = True             # keep a replay memory
    no_pseudo_gt: bool = False      # drop the teacher render term only
    stop_field_grad: bool = False   # block field gradients into the voxel encoder
    seed: int = 0                   # training/initialization randomness
    suite_seed: int = 0             # benchmark content; fixed across run seeds

    def suite_config(self) -> SuiteConfig:
        return SuiteConfig(base_skills=self.base_skills, increments=self.increments,
                           train_episodes=self.train_episodes,
                           test_episodes=self.test_episodes,
                           variations=self.variations, image_hw=self.image_hw,
                           grid=self.grid, sentence_dim=self.sentence_dim,
                           table_seed=self.table_seed,
                           routing_threshold=self.routing_threshold)

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(grid=self.grid, patch=self.patch,
                            feat_channels=self.feat_channels,
                            model_dim=self.model_dim, latents=self.latents,
                            lora_rank=self.lora_rank, self_blocks=self.self_blocks,
                            sentence_dim=self.sentence_dim)

    def field_config(self) -> FieldConfig:
        return FieldConfig(feat_channels=self.feat_channels, hidden=self.field_hidden,
                           semantic_dim=self.semantic_dim, ray_samples=self.ray_samples)

    def iterations(self, task_index: int) -> int:
        return self.iters_base if task_index == 1 else self.iters_incr

    @property
    def n_tasks(self) -> int:
        return 1 + len(self.increments)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["increments"] = list(self.increments)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if "increments" in d:
            d["increments"] = tuple(d["increments"])
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


METHOD_PRESETS = {
    "ours": {},
    "er": {"no_sep": True, "no_srd": True, "no_pseudo_gt": True},
    "ft": {"no_sep": True, "no_srd": True, "no_pseudo_gt": True, "replay": False},
    "no-sep": {"no_sep": True},
    "no-srd": {"no_srd": True},
    "no-ssr": {"no_ssr": True},
}


def apply_method(config: RunConfig, method: str) -> RunConfig:
    if method not in METHOD_PRESETS:
        raise ValueError(f"unknown method '{method}'; expected one of "
                         f"{sorted(METHOD_PRESETS)}")
    return replace(config, **METHOD_PRESETS[method])


# -- per-episode materialization ----------------------------------------------


@dataclass
class EpisodeBundle:
    episode: object
    samples: list
    raw_grid: Tensor              # constant (G,G,G,7) tensor
    sentence: np.ndarray
    token_embs: np.ndarray
    aux_images: list[np.ndarray]          # (H, W, 4) per auxiliary view
    aux_semantic: list[np.ndarray]        # (H, W, D_f) oracle maps
    aux_rays: list[tuple[np.ndarray, np.ndarray]]  # (origins, dirs) per view


class EpisodeStore:
    """Caches the deterministic per-episode artifacts (renders, voxel grids,
    encodings, oracle targets).  Safe to share across runs on one suite."""

    def __init__(self, suite: Suite, config: RunConfig):
        self.suite = suite
        self.config = config
        self.oracle = FrozenSemanticOracle(feature_dim=config.semantic_dim,
                                           sentence_dim=config.sentence_dim)
        self._cache: dict[tuple, EpisodeBundle] = {}

    def bundle(self, skill_id: int, split: str, index: int) -> EpisodeBundle:
        key = (skill_id, split, index)
        if key in self._cache:
            return self._cache[key]
        cfg = self.config
        episode = self.suite.episode(skill_id, split, index)
        samples = self.suite.extract_keyframes(episode)
        grid = voxelize(samples[0].observation, episode.scene.cameras[0],
                        episode.scene, cfg.grid)
        enc = self.suite.encoder.encode(episode.instruction)
        prompt = prompt_tokens(episode.instruction)
        aux_images, aux_semantic, aux_rays = [], [], []
        for cam_idx in range(1, 1 + cfg.aux_views):
            img = render_observation(episode.scene, cam_idx, cfg.image_hw)
            target = self.oracle.target(img[:, :, :3], enc.sentence, prompt,
                                        cfg.noise_step, (*key, cam_idx))
            aux_images.append(img)
            aux_semantic.append(target.features)
            aux_rays.append(episode.scene.cameras[cam_idx].pixel_rays(cfg.image_hw))
        bundle = EpisodeBundle(episode=episode, samples=samples,
                               raw_grid=Tensor(grid.data), sentence=enc.sentence,
                               token_embs=enc.tokens, aux_images=aux_images,
                               aux_semantic=aux_semantic, aux_rays=aux_rays)
        self._cache[key] = bundle
        return bundle


# -- replay memory -------------------------------------------------------------


class ReplayBuffer:
    """Fixed number of episodes per finished skill; entries are immutable."""

    def __init__(self, capacity_per_skill: int):
        if capacity_per_skill < 1:
            raise ValueError("replay capacity must be at least 1")
        self.capacity = capacity_per_skill
        self.episodes: dict[int, list[tuple]] = {}

    def skills(self) -> list[int]:
        return sorted(self.episodes)

    def all_keys(self) -> list[tuple]:
        return [k for skill in self.skills() for k in self.episodes[skill]]

    def store_task(self, episode_keys_by_skill: dict[int, list[tuple]],
                   rng: np.random.Generator):
        """Uniformly subsample ``capacity`` episodes per newly finished skill,
        without replacement; existing entries are never touched."""
        for skill_id in sorted(episode_keys_by_skill):
            if skill_id in self.episodes:
                raise ValueError(f"skill {skill_id} already stored in memory")
            keys = episode_keys_by_skill[skill_id]
            if len(keys) <= self.capacity:
                chosen = list(keys)
            else:
                picks = rng.choice(len(keys), size=self.capacity, replace=False)
                chosen = [keys[int(i)] for i in sorted(picks)]
            self.episodes[skill_id] = chosen

    def to_meta(self) -> dict:
        return {str(k): [list(key) for key in v] for k, v in self.episodes.items()}

    @classmethod
    def from_meta(cls, meta: dict, capacity: int) -> "ReplayBuffer":
        buf = cls(capacity)
        for k, v in meta.items():
            buf.episodes[int(k)] = [tuple(key) for key in v]
        return buf


def sample_batch(current_pool: list, replay_pool: list, batch: int,
                 rng: np.random.Generator, mix_ratio: float | None = None
                 ) -> tuple[list, np.ndarray]:
    """Draw ``batch`` keyframes; each slot picks the replay pool with
    probability ``mix_ratio`` (default: uniform over the pooled union).
    Returns the picked items and the replay mask."""
    if batch < 1:
        raise ValueError("batch size must be at least 1")
    n_cur, n_rep = len(current_pool), len(replay_pool)
    if n_cur + n_rep == 0:
        raise ValueError("cannot sample from two empty pools")
    if mix_ratio is None:
        p_replay = n_rep / (n_cur + n_rep)
    else:
        p_replay = mix_ratio if n_rep > 0 else 0.0
        if n_cur == 0:
            p_replay = 1.0
    picked, mask = [], np.zeros(batch)
    for j in range(batch):
        use_replay = n_rep > 0 and rng.random() < p_replay
        if not use_replay and n_cur == 0:
            use_replay = True
        if use_replay:
            picked.append(replay_pool[int(rng.integers(n_rep))])
            mask[j] = 1.0
        else:
            picked.append(current_pool[int(rng.integers(n_cur))])
    return picked, mask


# -- trainer --------------------------------------------------------------------


class TaskOrderError(RuntimeError):
    """Tasks must be executed strictly in order 1..M."""


class Trainer:
    def __init__(self, config: RunConfig, suite: Suite | None = None,
                 store: EpisodeStore | None = None):
        self.config = config
        self.suite = suite or generate_suite(config.suite_config(), config.suite_seed)
        self.store = store or EpisodeStore(self.suite, config)
        self.pc = config.policy_config()
        self.fc = config.field_config()

        init_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 101)))
        self.params = init_policy_params(self.pc, init_rng)
        self.field_params = init_field_params(self.fc, init_rng)
        self.adapters = AdapterSet(self.pc)
        self.bank = SemanticBank(capacity=config.bank_capacity,
                                 dim=config.sentence_dim,
                                 threshold=config.routing_threshold)
        if config.no_sep:
            self.adapters.allocate(0, init_rng)

        self.rng = np.random.default_rng(np.random.SeedSequence((config.seed, 202)))
        self.opt = make_optimizer(config.optimizer, config.lr)
        self.buffer = ReplayBuffer(config.replay_capacity)
        self.teacher = None
        self.tasks_done = 0
        self.iters_done_in_task = 0
        self.log_rows: list[dict] = []
        self.scores: dict[int, dict[int, float]] = {}

    # -- plumbing ---------------------------------------------------------

    def named_parameters(self) -> dict:
        out = {f"policy.{k}": v for k, v in self.params.items()}
        out.update({f"field.{k}": v for k, v in self.field_params.items()})
        out.update({f"adapter.{k}": v for k, v in self.adapters.named_parameters().items()})
        return out

    def _task_pool(self, task_index: int) -> list[tuple]:
        keys = []
        for skill_id in self.suite.config.task_skills(task_index):
            for i in range(self.config.train_episodes):
                bundle = self.store.bundle(skill_id, "train", i)
                keys.extend((skill_id, "train", i, s) for s in range(len(bundle.samples)))
        return keys

    def _replay_pool(self) -> list[tuple]:
        keys = []
        for ep_key in self.buffer.all_keys():
            bundle = self.store.bundle(*ep_key)
            keys.extend((*ep_key, s) for s in range(len(bundle.samples)))
        return keys

    def _route_sample(self, bundle: EpisodeBundle) -> int:
        if self.config.no_sep:
            return 0
        decision = route(bundle.sentence, self.bank, update=True)
        if decision.is_new:
            self.adapters.allocate(decision.skill_code, self.rng)
        return decision.skill_code

    # -- the inner loop ---------------------------------------------------

    def _policy_logits(self, bundle: EpisodeBundle, sample, skill_code: int,
                       params: dict, adapters: AdapterSet, volume: Tensor):
        p = encode_patches(volume, sample.state_bits, params, self.pc)
        e = encode_language(bundle.token_embs, params)
        _, logits = forward_policy(p, e, skill_code, adapters, params, self.pc,
                                   volume=volume)
        return logits

    def _render_rays(self, bundle: EpisodeBundle, volume: Tensor, is_replay: bool):
        """Sample rays on one auxiliary view; render the student and, for
        replayed samples, the frozen teacher at the same positions."""
        cfg = self.config
        view = int(self.rng.integers(cfg.aux_views))
        n_pix = cfg.image_hw * cfg.image_hw
        pix = self.rng.integers(0, n_pix, size=cfg.rays_per_sample)
        origins, dirs = bundle.aux_rays[view]
        rays = RayBatch(origins=origins[pix], dirs=dirs[pix],
                        pixel_rgb=bundle.aux_images[view].reshape(-1, 4)[pix, :3],
                        semantic_target=bundle.aux_semantic[view].reshape(
                            -1, cfg.semantic_dim)[pix],
                        t_near=self.fc.t_near, t_far=self.fc.t_far,
                        n_samples=cfg.ray_samples)
        t_values = stratified_samples(self.rng, len(pix), cfg.ray_samples,
                                      rays.t_near, rays.t_far)
        lo = bundle.episode.scene.bounds_lo
        hi = bundle.episode.scene.bounds_hi
        rgb, sem, _, _ = render(self.field_params, volume, rays, lo, hi,
                                t_values=t_values)

        pseudo = None
        use_pseudo = (is_replay and self.teacher is not None
                      and not cfg.no_pseudo_gt)
        if use_pseudo:
            with Tensor.no_grad():
                t_vol = deep_volume(bundle.raw_grid, self.teacher.policy_params, self.pc)
                t_rgb, _, _, _ = render(self.teacher.field_params, t_vol, rays,
                                        lo, hi, t_values=t_values)
            pseudo = t_rgb.data
        mask = np.full(len(pix), 1.0 if use_pseudo else 0.0)
        return rgb, sem, rays, pseudo, mask

    def _iteration(self, task_index: int, current_pool: list, replay_pool: list
                   ) -> LossBreakdown:
        cfg = self.config
        picked, mask = sample_batch(current_pool, replay_pool, cfg.batch,
                                    self.rng, cfg.mix_ratio)

        logits_batch, targets, teacher_batch = [], [], []
        routed_codes: set[int] = set()
        rgb_parts, sem_parts, y_parts, sem_targets = [], [], [], []
        pseudo_parts, mask_parts = [], []

        for j, (skill_id, split, ep_idx, s_idx) in enumerate(picked):
            bundle = self.store.bundle(skill_id, split, ep_idx)
            sample = bundle.samples[s_idx]
            h = self._route_sample(bundle)
            routed_codes.add(h)

            volume = deep_volume(bundle.raw_grid, self.params, self.pc)
            logits = self._policy_logits(bundle, sample, h, self.params,
                                         self.adapters, volume)
            logits_batch.append(logits)
            targets.append(sample.target)

            if mask[j] and self.teacher is not None and not cfg.no_srd:
                with Tensor.no_grad():
                    t_vol = deep_volume(bundle.raw_grid, self.teacher.policy_params,
                                        self.pc)
                    t_logits = self._policy_logits(bundle, sample, h,
                                                   self.teacher.policy_params,
                                                   self.teacher.adapters, t_vol)
                teacher_batch.append(t_logits)
            else:
                teacher_batch.append(None)

            if not cfg.no_ssr:
                field_volume = volume
                if cfg.stop_field_grad:
                    field_volume = Tensor(volume.data)
                rgb, sem, rays, pseudo, ray_mask = self._render_rays(
                    bundle, field_volume, bool(mask[j]))
                rgb_parts.append(rgb)
                sem_parts.append(sem)
                y_parts.append(rays.pixel_rgb)
                sem_targets.append(rays.semantic_target)
                pseudo_parts.append(pseudo if pseudo is not None
                                    else np.zeros((len(ray_mask), 3)))
                mask_parts.append(ray_mask)

        ce = loss_ce(logits_batch, targets, cfg.grid)
        srd_mask = mask if (self.teacher is not None and not cfg.no_srd) \
            else np.zeros_like(mask)
        srd = loss_srd(logits_batch, teacher_batch, srd_mask, cfg.temperature,
                       cfg.grid)

        if not cfg.no_ssr:
            rgb_all = ad.concat(rgb_parts, axis=0)
            sem_all = ad.concat(sem_parts, axis=0)
            ray_mask_all = np.concatenate(mask_parts)
            pseudo_all = np.concatenate(pseudo_parts) if ray_mask_all.any() else None
            c_loss = color_loss(rgb_all, np.concatenate(y_parts), pseudo_all,
                                ray_mask_all, cfg.replay_beta)
            s_loss = semantic_loss(sem_all, np.concatenate(sem_targets))
            ssr = render_objective(c_loss, s_loss, cfg.semantic_weight)
        else:
            ssr = Tensor(0.0)

        total = ce + ssr + srd * cfg.distill_weight
        if not np.isfinite(total.data):
            raise FloatingPointError(f"non-finite training loss at task {task_index}")

        trainable = {f"policy.{k}": v for k, v in self.params.items()}
        if not cfg.no_ssr:
            trainable.update({f"field.{k}": v for k, v in self.field_params.items()})
        for h in sorted(routed_codes):
            trainable.update({f"adapter.{k}": v
                              for k, v in self.adapters.named_for(h).items()})
        grads = gradients(total, trainable)
        self.opt.step(trainable, grads)

        return loss_total(ce.item(), ssr.item(), srd.item(), cfg.distill_weight,
                          masked_count=int(srd_mask.sum()))

    # -- task loop ---------------------------------------------------------

    def run_task(self, task_index: int, start_iter: int = 0,
                 halt_after: int | None = None) -> dict:
        """Train on one task for its configured iteration budget.

        ``start_iter`` resumes mid-task (checkpoint restore); ``halt_after``
        stops early after that many additional iterations (returns with
        ``completed`` False).  Replay episodes are stored only once the task
        finishes, so memory never contains current-task data during training.
        """
        if task_index != self.tasks_done + 1:
            raise TaskOrderError(f"task {task_index} requested but "
                                 f"{self.tasks_done} tasks are done; tasks must "
                                 "run in order")
        cfg = self.config
        if task_index >= 2 and start_iter == 0:
            self.teacher = snapshot_teacher(self.params, self.adapters,
                                            self.field_params, task_index)

        current_pool = self._task_pool(task_index)
        replay_pool = self._replay_pool() if cfg.replay else []

        n_iters = cfg.iterations(task_index)
        executed = 0
        for z in range(start_iter, n_iters):
            if halt_after is not None and executed >= halt_after:
                return {"task": task_index, "completed": False,
                        "iterations": executed}
            breakdown = self._iteration(task_index, current_pool, replay_pool)
            self.log_rows.append({"task": task_index, "iteration": z + 1,
                                  "ce": breakdown.ce, "ssr": breakdown.ssr,
                                  "srd": breakdown.srd, "total": breakdown.total,
                                  "masked": breakdown.masked_count})
            executed += 1
            self.iters_done_in_task = z + 1
            if halt_after is not None and executed >= halt_after:
                return {"task": task_index, "completed": False,
                        "iterations": executed}

        if cfg.replay:
            by_skill = {}
            for skill_id in self.suite.config.task_skills(task_index):
                by_skill[skill_id] = [(skill_id, "train", i)
                                      for i in range(cfg.train_episodes)]
            self.buffer.store_task(by_skill, self.rng)
        self.tasks_done = task_index
        self.iters_done_in_task = 0
        return {"task": task_index, "completed": True, "iterations": executed}

    def write_log(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["task", "iteration", "ce",
                                                    "ssr", "srd", "total", "masked"])
            writer.writeheader()
            for row in self.log_rows:
                writer.writerow(row)
