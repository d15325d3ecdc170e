import numpy as np
import pytest

from skillstream import autodiff as ad
from skillstream.autodiff import Tensor, check_gradients
from skillstream.policy import (AdapterSet, PolicyConfig, cells_from_tokens,
                                cross_attend, deep_volume, encode_language,
                                encode_patches, forward_policy, init_policy_params,
                                lora_linear, patches_from_volume, stencil_scores)

TINY = PolicyConfig(grid=10, patch=5, feat_channels=4, model_dim=16, latents=3,
                    lora_rank=2, self_blocks=1, sentence_dim=8)


@pytest.fixture()
def setup():
    rng = np.random.default_rng(0)
    params = init_policy_params(TINY, rng)
    adapters = AdapterSet(TINY)
    adapters.allocate(0, rng)
    adapters.allocate(1, rng)
    raw = Tensor(rng.random((10, 10, 10, 7)))
    tokens = rng.standard_normal((4, 8))
    return rng, params, adapters, raw, tokens


def run_forward(params, adapters, raw, tokens, h, use_lora=True, with_volume=True):
    vol = deep_volume(raw, params, TINY)
    p = encode_patches(vol, (1, 0), params, TINY)
    e = encode_language(tokens, params)
    return forward_policy(p, e, h, adapters, params, TINY, use_lora=use_lora,
                          volume=vol if with_volume else None)


def test_config_divisibility_enforced():
    with pytest.raises(ValueError, match="divisible"):
        PolicyConfig(grid=20, patch=6)


def test_token_count():
    assert PolicyConfig(grid=20, patch=5).n_tokens == 65   # 4^3 + 1
    assert TINY.n_tokens == 9                               # 2^3 + 1


def test_zero_grid_zero_init_map_gives_zero_patch_tokens(setup):
    rng, params, adapters, raw, tokens = setup
    params = dict(params)
    params["cell_w"] = Tensor(np.zeros((7, 4)), requires_grad=True)
    params["cell_b"] = Tensor(np.zeros(4), requires_grad=True)
    params["patch_w"] = Tensor(np.zeros((500, 16)), requires_grad=True)
    params["patch_b"] = Tensor(np.zeros(16), requires_grad=True)
    vol = deep_volume(Tensor(np.zeros((10, 10, 10, 7))), params, TINY)
    p = encode_patches(vol, (1, 1), params, TINY)
    assert np.array_equal(p.data[1:], np.zeros((8, 16)))
    # state token may be nonzero
    assert not np.array_equal(p.data[0], np.zeros(16))


def test_equal_patches_get_equal_tokens(setup):
    rng, params, adapters, raw, tokens = setup
    const = Tensor(np.full((10, 10, 10, 7), 0.3))
    vol = deep_volume(const, params, TINY)
    p = encode_patches(vol, (0, 0), params, TINY)
    patches = p.data[1:]
    assert np.allclose(patches, patches[0], atol=1e-12)


def test_patch_reshape_round_trip():
    rng = np.random.default_rng(1)
    vol = Tensor(rng.standard_normal((10, 10, 10, 1)))
    flat = patches_from_volume(vol, 5)
    back = cells_from_tokens(Tensor(flat.data), 10, 5)
    assert np.array_equal(back.data, vol.data.reshape(-1))


def test_lora_zero_up_factor_is_exact_noop(setup):
    rng, params, adapters, raw, tokens = setup
    x = Tensor(rng.standard_normal((6, 16)))
    w = params["cross.wq"]
    base = ad.matmul(x, w)
    with_lora = lora_linear(x, w, 0, adapters, "cross.q")
    assert np.all(with_lora.data == base.data)


def test_lora_zero_input():
    rng = np.random.default_rng(2)
    adapters = AdapterSet(TINY)
    adapters.allocate(0, rng)
    w = Tensor(rng.standard_normal((16, 16)))
    out = lora_linear(Tensor(np.zeros((3, 16))), w, 0, adapters, "self0.k")
    assert np.array_equal(out.data, np.zeros((3, 16)))


def test_lora_correction_rank_bounded(setup):
    rng, params, adapters, raw, tokens = setup
    entry = adapters.skills[0]
    entry["cross.q.up"].data = rng.standard_normal((2, 16))
    product = entry["cross.q.down"].data @ entry["cross.q.up"].data
    s = np.linalg.svd(product, compute_uv=False)
    assert np.sum(s > 1e-10) <= TINY.lora_rank


def test_unallocated_skill_rejected(setup):
    rng, params, adapters, raw, tokens = setup
    with pytest.raises(ValueError, match="routing must precede"):
        run_forward(params, adapters, raw, tokens, h=7)


def test_double_allocation_rejected(setup):
    rng, params, adapters, raw, tokens = setup
    with pytest.raises(ValueError, match="already allocated"):
        adapters.allocate(0, rng)


def test_single_latent_cross_attention_collapses():
    cfg = PolicyConfig(grid=10, patch=5, feat_channels=4, model_dim=16, latents=1,
                       lora_rank=2, self_blocks=1, sentence_dim=8)
    rng = np.random.default_rng(3)
    params = init_policy_params(cfg, rng)
    adapters = AdapterSet(cfg)
    adapters.allocate(0, rng)
    vol = deep_volume(Tensor(rng.random((10, 10, 10, 7))), params, cfg)
    p = encode_patches(vol, (0, 1), params, cfg)
    e = encode_language(rng.standard_normal((3, 8)), params)
    fc = cross_attend(p, e, 0, adapters, params, cfg)
    # one key: softmax weight is 1, every row equals latent @ Wv (+ its lora)
    expected = lora_linear(adapters.skills[0]["latents"], params["cross.wv"],
                           0, adapters, "cross.v").data
    assert np.allclose(fc.data, np.tile(expected, (fc.shape[0], 1)), atol=1e-12)


def test_attention_rows_are_probabilities(setup):
    rng, params, adapters, raw, tokens = setup
    vol = deep_volume(raw, params, TINY)
    p = encode_patches(vol, (0, 0), params, TINY)
    e = encode_language(tokens, params)
    xn = ad.layer_norm(ad.concat([p, e], axis=0), params["cross.ln_g"],
                       params["cross.ln_b"])
    q = lora_linear(xn, params["cross.wq"], 0, adapters, "cross.q")
    k = lora_linear(adapters.skills[0]["latents"], params["cross.wk"], 0,
                    adapters, "cross.k")
    attn = ad.softmax(ad.mul(ad.matmul(q, k.T), 1.0 / np.sqrt(16)))
    assert np.all(attn.data >= 0)
    assert np.allclose(attn.data.sum(axis=1), 1.0, atol=1e-9)


def test_distinct_skills_give_distinct_outputs(setup):
    rng, params, adapters, raw, tokens = setup
    vol = deep_volume(raw, params, TINY)
    p = encode_patches(vol, (0, 0), params, TINY)
    e = encode_language(tokens, params)
    f0 = cross_attend(p, e, 0, adapters, params, TINY)
    f1 = cross_attend(p, e, 1, adapters, params, TINY)
    assert not np.allclose(f0.data, f1.data)
    # and the distinction survives to the heads once they are nonzero
    params["rot_w"] = Tensor(rng.standard_normal((16, 216)) * 0.2,
                             requires_grad=True)
    _, l0 = run_forward(params, adapters, raw, tokens, h=0)
    _, l1 = run_forward(params, adapters, raw, tokens, h=1)
    assert not np.allclose(l0.rotation.data, l1.rotation.data)


def test_lora_identity_full_forward(setup):
    rng, params, adapters, raw, tokens = setup
    # freshly allocated skill: every up-factor is zero, so the lora-augmented
    # forward must equal the lora-free forward exactly, elementwise
    _, with_lora = run_forward(params, adapters, raw, tokens, h=0, use_lora=True)
    _, base_only = run_forward(params, adapters, raw, tokens, h=0, use_lora=False)
    for attr in ("translation", "rotation", "gripper", "collision"):
        assert np.all(getattr(with_lora, attr).data == getattr(base_only, attr).data)


def test_skill_isolation_bitwise(setup):
    rng, params, adapters, raw, tokens = setup
    _, before = run_forward(params, adapters, raw, tokens, h=1)
    # mutate every adapter tensor of skill 0
    for name, t in adapters.skills[0].items():
        t.data = t.data + rng.standard_normal(t.data.shape)
    _, after = run_forward(params, adapters, raw, tokens, h=1)
    for attr in ("translation", "rotation", "gripper", "collision"):
        assert getattr(before, attr).data.tobytes() == getattr(after, attr).data.tobytes()


def test_forward_deterministic(setup):
    rng, params, adapters, raw, tokens = setup
    _, a = run_forward(params, adapters, raw, tokens, h=0)
    _, b = run_forward(params, adapters, raw, tokens, h=0)
    assert a.translation.data.tobytes() == b.translation.data.tobytes()
    assert a.rotation.data.tobytes() == b.rotation.data.tobytes()


def test_logit_shapes(setup):
    rng, params, adapters, raw, tokens = setup
    _, logits = run_forward(params, adapters, raw, tokens, h=0)
    assert logits.translation.shape == (1000,)
    assert logits.rotation.shape == (3, 72)
    assert logits.gripper.shape == (2,)
    assert logits.collision.shape == (2,)


def test_full_stack_gradcheck(setup):
    rng, params, adapters, raw, tokens = setup
    target_cell = 123

    def fn():
        _, logits = run_forward(params, adapters, raw, tokens, h=0)
        loss = ad.nll_1d(logits.translation, target_cell)
        loss = ad.add(loss, ad.nll_1d(ad.take_rows(logits.rotation, [1])
                                      .reshape(72), 7))
        return ad.add(loss, ad.nll_1d(logits.gripper, 1))

    trainable = {**params, **adapters.named_for(0)}
    rep = check_gradients(fn, trainable, max_entries=6,
                          rng=np.random.default_rng(1))
    assert rep.passed, rep.failures[:3]
    assert rep.worst < 1e-3
