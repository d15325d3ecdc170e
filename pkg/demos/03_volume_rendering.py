"""Fit the voxel-conditioned field on a single scene: watch the color
reconstruction loss fall and inspect the quadrature weights."""

import numpy as np

from skillstream.autodiff import Tensor, gradients
from skillstream.field import (FieldConfig, RayBatch, color_loss,
                               init_field_params, quadrature_weights, render,
                               semantic_loss, render_objective,
                               stratified_samples)
from skillstream.optim import Adam
from skillstream.semantics import FrozenSemanticOracle, prompt_tokens
from skillstream.suite import SuiteConfig, generate_suite
from skillstream.policy import PolicyConfig, deep_volume, init_policy_params
from skillstream.raster import render_observation
from skillstream.voxel import voxelize

# the textbook quadrature example: two samples with density ln 2 and unit
# spacing absorb 1/2 and 1/4 of the ray
w = quadrature_weights(Tensor(np.full((1, 2), np.log(2.0))), np.ones((1, 2)))
print("ln-2 example weights:", w.data[0])

suite = generate_suite(SuiteConfig(), seed=0)
episode = suite.episode(0, "train", 0)
hw = suite.config.image_hw

pc = PolicyConfig()
rng = np.random.default_rng(0)
policy_params = init_policy_params(pc, rng)
obs = suite.render_front(episode)
raw = Tensor(voxelize(obs, episode.scene.cameras[0], episode.scene, pc.grid).data)

fc = FieldConfig()
field_params = init_field_params(fc, rng)
oracle = FrozenSemanticOracle()
enc = suite.encoder.encode(episode.instruction)

view = 1
img = render_observation(episode.scene, view, hw)
target = oracle.target(img[:, :, :3], enc.sentence,
                       prompt_tokens(episode.instruction), 2, ("demo", view))
origins, dirs = episode.scene.cameras[view].pixel_rays(hw)

opt = Adam(lr=5e-3)
for step in range(200):
    pix = rng.integers(0, hw * hw, size=32)
    rays = RayBatch(origins=origins[pix], dirs=dirs[pix],
                    pixel_rgb=img.reshape(-1, 4)[pix, :3],
                    semantic_target=target.features.reshape(-1, fc.semantic_dim)[pix],
                    t_near=fc.t_near, t_far=fc.t_far, n_samples=fc.ray_samples)
    t_vals = stratified_samples(rng, 32, fc.ray_samples, fc.t_near, fc.t_far)
    volume = deep_volume(raw, policy_params, pc)
    rgb, sem, _, _ = render(field_params, volume, rays,
                            episode.scene.bounds_lo, episode.scene.bounds_hi,
                            t_values=t_vals)
    c = color_loss(rgb, rays.pixel_rgb, None, np.zeros(32), 1.0)
    s = semantic_loss(sem, rays.semantic_target)
    loss = render_objective(c, s, 0.1)
    trainable = {**field_params, **{f"policy.{k}": v for k, v in policy_params.items()}}
    opt.step(trainable, gradients(loss, trainable))
    if step % 40 == 0 or step == 199:
        print(f"step {step:3d}: color {c.item():.4f} semantic {s.item():.4f}")
print("gradients flow through the shared voxel encoder, so fitting views "
      "also shapes the features the policy consumes")
