"""Procedural generator for the desk-scale manipulation skill stream.

Every skill is a verb phrase with its own keyframe script: a short sequence
of end-effector targets expressed as offsets from the episode's object,
constant per-step rotations, and gripper/collision bits.  Episodes vary the
object's placement, size, and the instruction's color/object words; the verb
tokens never change, so skill identity lives in the verbs.

Everything is a pure function of (seed, skill, split, episode index):
regenerating with the same keys is bit-identical, which is what makes replay
buffers, checkpoints, and benchmark manifests cheap to share.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .raster import Box, Camera, Scene, render_observation
from .actions import ActionTarget, encode_action
from .text import FrozenTextEncoder

# Verb phrases with pairwise-disjoint tokens: skills never share a verb word.
VERB_PHRASES = [
    ("pick", "up"), ("stack", "onto"), ("slide", "across"), ("push", "forward"),
    ("pull", "back"), ("drop", "into"), ("turn", "around"), ("press", "down"),
    ("lift", "high"), ("shake", "loose"), ("tip", "over"), ("wipe", "clean"),
    ("spin", "round"), ("nudge", "left"), ("hoist", "aloft"), ("flick", "aside"),
]

OBJECT_WORDS = ["crate", "block", "jar", "plate", "bottle", "cup",
                "bowl", "tray", "brick", "can", "tin", "mug"]

COLOR_TABLE = {
    "red": (0.85, 0.10, 0.10), "green": (0.10, 0.75, 0.15),
    "blue": (0.15, 0.20, 0.85), "yellow": (0.90, 0.85, 0.10),
    "purple": (0.55, 0.15, 0.75), "orange": (0.95, 0.55, 0.10),
    "cyan": (0.10, 0.80, 0.80), "white": (0.92, 0.92, 0.92),
}

WORKSPACE_LO = np.zeros(3)
WORKSPACE_HI = np.ones(3)

FRONT_CAMERA = Camera(position=np.array([0.5, -0.85, 0.80]),
                      target=np.array([0.5, 0.5, 0.22]), fov_deg=34.0)
AUX_CAMERAS = (
    Camera(position=np.array([-0.60, -0.45, 0.90]), target=np.array([0.5, 0.5, 0.22]),
           fov_deg=40.0),
    Camera(position=np.array([1.60, -0.45, 0.90]), target=np.array([0.5, 0.5, 0.22]),
           fov_deg=40.0),
    Camera(position=np.array([0.5, 0.40, 1.75]), target=np.array([0.5, 0.5, 0.20]),
           fov_deg=40.0),
)

MAX_VOCAB_ATTEMPTS = 32
# gripper/collision combos assignable to prediction-source keyframes; kept
# distinct within a script so the state token disambiguates script progress
STATE_COMBOS = [(0, 0), (1, 0), (0, 1), (1, 1)]


@dataclass(frozen=True)
class KeyframeSpec:
    """One scripted step, parameterized by the episode's object position."""

    offset_cells: tuple[int, int, int]
    angles_deg: tuple[float, float, float]
    gripper: int
    collision: int


@dataclass(frozen=True)
class SkillSpec:
    skill_id: int
    verbs: tuple[str, ...]
    variations: tuple[tuple[str, str], ...]   # (color word, object word)
    script: tuple[KeyframeSpec, ...]

    def __post_init__(self):
        if len(self.script) < 2:
            raise ValueError("keyframe script must have length >= 2")

    def instruction(self, variation: int) -> list[str]:
        color, obj = self.variations[variation]
        return [*self.verbs, "the", color, obj]


@dataclass(frozen=True)
class Keyframe:
    position: np.ndarray
    angles_deg: np.ndarray
    gripper: int
    collision: int


@dataclass(frozen=True)
class Episode:
    skill_id: int
    split: str                 # "train" | "test"
    index: int
    variation: int
    scene: Scene
    instruction: list[str]
    keyframes: tuple[Keyframe, ...]

    @property
    def key(self) -> tuple:
        return (self.skill_id, self.split, self.index)


@dataclass(frozen=True)
class KeyframeSample:
    """One training unit: current observation/state, next keyframe as target."""

    episode: Episode
    step: int                  # index of the current keyframe
    observation: np.ndarray    # front-camera RGB-D (H, W, 4)
    instruction: list[str]
    state_bits: tuple[int, int]
    target: ActionTarget
    skill_id: int
    task_index: int


@dataclass(frozen=True)
class SuiteConfig:
    base_skills: int = 4
    increments: tuple[int, ...] = (1, 1)
    train_episodes: int = 8
    test_episodes: int = 8
    variations: int = 4
    image_hw: int = 32
    grid: int = 20
    sentence_dim: int = 32
    table_seed: int = 411
    routing_threshold: float = 0.8

    @property
    def n_skills(self) -> int:
        return self.base_skills + sum(self.increments)

    @property
    def n_tasks(self) -> int:
        return 1 + len(self.increments)

    def task_skills(self, task_index: int) -> list[int]:
        """Skill ids introduced by task ``task_index`` (1-based)."""
        if not 1 <= task_index <= self.n_tasks:
            raise ValueError(f"task index {task_index} out of range 1..{self.n_tasks}")
        if task_index == 1:
            return list(range(self.base_skills))
        start = self.base_skills + sum(self.increments[:task_index - 2])
        return list(range(start, start + self.increments[task_index - 2]))

    def task_of_skill(self, skill_id: int) -> int:
        for m in range(1, self.n_tasks + 1):
            if skill_id in self.task_skills(m):
                return m
        raise ValueError(f"skill {skill_id} not covered by the task split")


class Suite:
    """A generated skill stream plus its frozen text encoder."""

    def __init__(self, config: SuiteConfig, seed: int, vocab_attempt: int,
                 skills: list[SkillSpec], encoder: FrozenTextEncoder):
        self.config = config
        self.seed = seed
        self.vocab_attempt = vocab_attempt
        self.skills = skills
        self.encoder = encoder

    # -- episodes ----------------------------------------------------------

    def _episode_rng(self, skill_id: int, split: str, index: int) -> np.random.Generator:
        split_code = {"train": 0, "test": 1}[split]
        return np.random.default_rng(np.random.SeedSequence(
            (self.seed, self.vocab_attempt, 1009, skill_id, split_code, index)))

    def episode(self, skill_id: int, split: str, index: int) -> Episode:
        counts = {"train": self.config.train_episodes, "test": self.config.test_episodes}
        if not 0 <= index < counts[split]:
            raise ValueError(f"episode index {index} out of range for split '{split}'")
        spec = self.skills[skill_id]
        rng = self._episode_rng(skill_id, split, index)

        variation = int(rng.integers(len(spec.variations)))
        color_word, _ = spec.variations[variation]
        center = np.array([rng.uniform(0.24, 0.76), rng.uniform(0.24, 0.76),
                           rng.uniform(0.14, 0.30)])
        extent = rng.uniform(0.10, 0.16, size=3)
        box = Box(center=center, extent=extent,
                  color=np.array(COLOR_TABLE[color_word]), class_id=skill_id)
        scene = Scene(bounds_lo=WORKSPACE_LO, bounds_hi=WORKSPACE_HI,
                      boxes=(box,), cameras=(FRONT_CAMERA, *AUX_CAMERAS))

        # scripts anchor at the top-face center: the landmark the camera can
        # actually see, so targets stay inferable from the observation
        anchor = center + np.array([0.0, 0.0, 0.5 * extent[2]])
        cell = (WORKSPACE_HI[0] - WORKSPACE_LO[0]) / self.config.grid
        keyframes = tuple(
            Keyframe(position=anchor + np.asarray(kf.offset_cells) * cell,
                     angles_deg=np.asarray(kf.angles_deg),
                     gripper=kf.gripper, collision=kf.collision)
            for kf in spec.script)
        return Episode(skill_id=skill_id, split=split, index=index,
                       variation=variation, scene=scene,
                       instruction=spec.instruction(variation), keyframes=keyframes)

    def episodes(self, skill_id: int, split: str) -> list[Episode]:
        counts = {"train": self.config.train_episodes, "test": self.config.test_episodes}
        return [self.episode(skill_id, split, i) for i in range(counts[split])]

    def render_front(self, episode: Episode) -> np.ndarray:
        return render_observation(episode.scene, 0, self.config.image_hw)

    def extract_keyframes(self, episode: Episode) -> list[KeyframeSample]:
        """One sample per scripted keyframe except the last, which has no
        successor; targets are the NEXT keyframe's action."""
        obs = self.render_front(episode)
        task_index = self.config.task_of_skill(episode.skill_id)
        samples = []
        for j in range(len(episode.keyframes) - 1):
            cur, nxt = episode.keyframes[j], episode.keyframes[j + 1]
            target = encode_action(nxt.position, nxt.angles_deg, nxt.gripper,
                                   nxt.collision, WORKSPACE_LO, WORKSPACE_HI,
                                   self.config.grid)
            samples.append(KeyframeSample(
                episode=episode, step=j, observation=obs,
                instruction=list(episode.instruction),
                state_bits=(cur.gripper, cur.collision), target=target,
                skill_id=episode.skill_id, task_index=task_index))
        return samples

    # -- manifest ------------------------------------------------------------

    def manifest(self) -> dict:
        return {
            "format": "skillstream-suite-v1",
            "seed": self.seed,
            "vocab_attempt": self.vocab_attempt,
            "config": {
                "base_skills": self.config.base_skills,
                "increments": list(self.config.increments),
                "train_episodes": self.config.train_episodes,
                "test_episodes": self.config.test_episodes,
                "variations": self.config.variations,
                "image_hw": self.config.image_hw,
                "grid": self.config.grid,
                "sentence_dim": self.config.sentence_dim,
                "table_seed": self.config.table_seed,
                "routing_threshold": self.config.routing_threshold,
            },
            "encoder": self.encoder.spec(),
            "skills": [
                {
                    "skill_id": s.skill_id,
                    "verbs": list(s.verbs),
                    "variations": [list(v) for v in s.variations],
                    "script": [
                        {"offset_cells": list(k.offset_cells),
                         "angles_deg": list(k.angles_deg),
                         "gripper": k.gripper, "collision": k.collision}
                        for k in s.script
                    ],
                    "train_episode_seeds": [
                        [self.seed, self.vocab_attempt, 1009, s.skill_id, 0, i]
                        for i in range(self.config.train_episodes)],
                    "test_episode_seeds": [
                        [self.seed, self.vocab_attempt, 1009, s.skill_id, 1, i]
                        for i in range(self.config.test_episodes)],
                }
                for s in self.skills
            ],
        }

    def save_manifest(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_manifest(cls, manifest: dict) -> "Suite":
        cfg = manifest["config"]
        config = SuiteConfig(
            base_skills=cfg["base_skills"], increments=tuple(cfg["increments"]),
            train_episodes=cfg["train_episodes"], test_episodes=cfg["test_episodes"],
            variations=cfg["variations"], image_hw=cfg["image_hw"], grid=cfg["grid"],
            sentence_dim=cfg["sentence_dim"], table_seed=cfg["table_seed"],
            routing_threshold=cfg["routing_threshold"])
        skills = [
            SkillSpec(
                skill_id=s["skill_id"], verbs=tuple(s["verbs"]),
                variations=tuple(tuple(v) for v in s["variations"]),
                script=tuple(KeyframeSpec(tuple(k["offset_cells"]),
                                          tuple(k["angles_deg"]),
                                          k["gripper"], k["collision"])
                             for k in s["script"]))
            for s in manifest["skills"]
        ]
        encoder = FrozenTextEncoder.from_spec(manifest["encoder"])
        return cls(config, manifest["seed"], manifest["vocab_attempt"], skills, encoder)

    @classmethod
    def load_manifest(cls, path) -> "Suite":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_manifest(json.load(fh))


def _sample_skill(rng: np.random.Generator, skill_id: int, verbs: tuple[str, str],
                  n_variations: int) -> SkillSpec:
    colors = list(COLOR_TABLE)
    combos = [(c, o) for c in colors for o in OBJECT_WORDS]
    picks = rng.choice(len(combos), size=n_variations, replace=False)
    variations = tuple(combos[int(i)] for i in picks)

    length = int(rng.integers(3, 6))
    state_order = rng.permutation(len(STATE_COMBOS))
    script = []
    for j in range(length):
        if j == 0:
            offset = (0, 0, 1)  # start hovering above the object
        else:
            offset = (int(rng.integers(-1, 2)), int(rng.integers(-1, 2)),
                      int(rng.integers(0, 2)))
        angles = tuple(float(a) for a in rng.uniform(0.0, 360.0, size=3))
        if j < length - 1:
            grip, col = STATE_COMBOS[int(state_order[j])]
        else:
            grip, col = int(rng.integers(2)), int(rng.integers(2))
        script.append(KeyframeSpec(offset, angles, grip, col))
    return SkillSpec(skill_id=skill_id, verbs=verbs, variations=variations,
                     script=tuple(script))


def _separability(suite: Suite) -> tuple[float, float]:
    """(min within-skill cosine, max cross-skill cosine) across variations."""
    per_skill = []
    for spec in suite.skills:
        embs = [suite.encoder.encode(spec.instruction(v)).sentence
                for v in range(len(spec.variations))]
        per_skill.append(np.stack(embs))
    min_within = 1.0
    for embs in per_skill:
        cos = embs @ embs.T
        n = len(embs)
        if n > 1:
            off = cos[~np.eye(n, dtype=bool)]
            min_within = min(min_within, float(off.min()))
    max_cross = -1.0
    for i in range(len(per_skill)):
        for j in range(i + 1, len(per_skill)):
            cos = per_skill[i] @ per_skill[j].T
            max_cross = max(max_cross, float(cos.max()))
    return min_within, max_cross


def generate_suite(config: SuiteConfig, seed: int) -> Suite:
    """Build a skill stream whose instructions are separable by cosine: every
    within-skill pair scores above the routing threshold, every cross-skill
    pair below.  Retries vocabulary draws, failing after 32 attempts."""
    if config.n_skills < 1:
        raise ValueError("config must name at least one skill")
    if config.train_episodes < 1 or config.test_episodes < 1:
        raise ValueError("config must provide at least one episode per split")
    if config.n_skills > len(VERB_PHRASES):
        raise ValueError(f"at most {len(VERB_PHRASES)} skills supported "
                         f"(distinct verb phrases), got {config.n_skills}")

    for attempt in range(MAX_VOCAB_ATTEMPTS):
        rng = np.random.default_rng(np.random.SeedSequence((seed, attempt, 2003)))
        order = rng.permutation(len(VERB_PHRASES))
        skills = []
        verb_tokens: set[str] = set()
        for skill_id in range(config.n_skills):
            verbs = VERB_PHRASES[int(order[skill_id])]
            verb_tokens.update(verbs)
            skills.append(_sample_skill(rng, skill_id, verbs, config.variations))
        encoder = FrozenTextEncoder(dim=config.sentence_dim,
                                    table_seed=config.table_seed,
                                    verb_tokens=frozenset(verb_tokens))
        suite = Suite(config, seed, attempt, skills, encoder)
        min_within, max_cross = _separability(suite)
        if min_within > config.routing_threshold and max_cross < config.routing_threshold:
            return suite
    raise RuntimeError(f"no separable vocabulary found in {MAX_VOCAB_ATTEMPTS} attempts "
                       f"(last margins: within {min_within:.3f}, cross {max_cross:.3f})")
