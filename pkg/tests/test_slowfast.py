"""SlowFast embedding network: shapes, ratios, information flow, gradients, persistence."""

import numpy as np
import pytest

from lipauth.errors import ConfigError, DimensionError
from lipauth.slowfast import (SlowFastConfig, SlowFastModel, StageConfig, build, embed,
                              embed_many, lateral_fuse, load_model, param_count, save_model)
from lipauth.tensor import Parameter, Tensor, grad_check, ops

from conftest import tiny_model_config


def clip_for(cfg, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (cfg.clip_length, *cfg.input_shape)).astype(np.float32)


def analytic_param_count(slow_channels, beta=1 / 8, k=2, c_in=3, kernel=27, lateral_t=5, embed_dim=64):
    """Closed-form count, stage by stage, for 3x3x3 pathway kernels."""
    total = 0
    fast_in = slow_in = c_in
    for cs in slow_channels:
        cf = max(1, round(beta * cs))
        total += kernel * fast_in * cf + 2 * cf          # fast conv + affine
        total += kernel * slow_in * cs + 2 * cs          # slow conv + affine
        total += lateral_t * cf * k * cf + k * cf        # lateral conv + bias
        fast_in, slow_in = cf, cs + k * cf
    return total + (fast_in + slow_in) * embed_dim + embed_dim


# -- configuration ----------------------------------------------------------------------

def test_default_pathway_lengths():
    model = build(SlowFastConfig(), seed=0)
    cap = {}
    model.forward(clip_for(model.config), capture=cap)
    for i in range(3):
        assert cap[f"fast.stage{i}"].shape[1] == 32
        assert cap[f"slow.stage{i}"].shape[1] == 4


def test_clip_length_must_divide_by_alpha():
    with pytest.raises(ConfigError, match="divisible"):
        build(SlowFastConfig(alpha=4, clip_length=30))


def test_collapsing_stage_is_config_error():
    # same-padding keeps every stage >= 1 pixel for real inputs, so only a
    # degenerate input size can collapse
    deep = SlowFastConfig(stages=[StageConfig(8, spatial_stride=4)] * 4)
    build(deep)
    with pytest.raises(ConfigError):
        build(SlowFastConfig(input_shape=(0, 30, 3)))


def test_beta_validation_and_fraction_string():
    assert SlowFastConfig(beta="1/8").beta == 0.125
    with pytest.raises(ConfigError):
        SlowFastConfig(beta=1.0).validate()


@pytest.mark.parametrize("alpha,T,beta,channels", [
    (8, 32, 1 / 8, (16, 32, 64)),
    (4, 16, 1 / 4, (8, 12)),
    (2, 8, 0.3, (10, 20)),
    (8, 16, 1 / 8, (4, 24)),
])
def test_temporal_and_channel_structure(alpha, T, beta, channels):
    cfg = SlowFastConfig(alpha=alpha, clip_length=T, beta=beta,
                         stages=[StageConfig(c) for c in channels], embed_dim=8)
    model = build(cfg, seed=1)
    cap = {}
    model.forward(clip_for(cfg), capture=cap)
    for i, cs in enumerate(channels):
        fast, slow = cap[f"fast.stage{i}"], cap[f"slow.stage{i}"]
        assert fast.shape[1] == T and slow.shape[1] == T // alpha
        assert slow.shape[-1] == cs
        assert abs(fast.shape[-1] - beta * cs) <= 1


def test_same_seed_bit_identical():
    a, b = build(tiny_model_config(), seed=5), build(tiny_model_config(), seed=5)
    assert all(p.data.tobytes() == q.data.tobytes() for p, q in zip(a.params, b.params))
    c = build(tiny_model_config(), seed=6)
    assert any(p.data.tobytes() != q.data.tobytes() for p, q in zip(a.params, c.params))


def test_parameter_name_partition():
    model = build(SlowFastConfig())
    prefixes = {p.name.split(".")[0] for p in model.params}
    assert prefixes == {"fast", "slow", "lateral", "head"}
    assert len({p.name for p in model.params}) == len(model.params)


def test_param_count():
    cfg = SlowFastConfig(stages=[StageConfig(2)], embed_dim=2)
    tiny = SlowFastModel(cfg, [Parameter("head.weight", np.zeros((2, 2))), Parameter("head.bias", np.zeros(2))])
    assert param_count(tiny) == 6
    default = build(SlowFastConfig(), seed=0)
    assert param_count(default) == analytic_param_count((16, 32, 64)) == 95_754
    assert param_count(build(SlowFastConfig(), seed=9)) == param_count(default)


# -- forward behavior ---------------------------------------------------------------------

def test_embedding_unit_norm_and_deterministic(tiny_model):
    cfg = tiny_model.config
    for seed in range(3):
        e = embed(tiny_model, clip_for(cfg, seed))
        assert e.shape == (cfg.embed_dim,)
        assert abs(np.linalg.norm(e) - 1) < 1e-6
    clip = clip_for(cfg, 7)
    assert embed(tiny_model, clip).tobytes() == embed(tiny_model, clip.copy()).tobytes()


def test_batched_forward_matches_single(tiny_model):
    clips = np.stack([clip_for(tiny_model.config, s) for s in range(3)])
    batch = embed_many(tiny_model, clips, chunk=2)
    for i in range(3):
        np.testing.assert_allclose(batch[i], embed(tiny_model, clips[i]), atol=1e-6)


def test_wrong_clip_shape(tiny_model):
    with pytest.raises(DimensionError):
        tiny_model.forward(np.zeros((16, 18, 30, 3), np.float32))


def test_unidirectional_fusion(tiny_model):
    """Slow parameters (and the lateral transform) never influence the fast pathway."""
    clip = clip_for(tiny_model.config, 3)
    before = {}
    tiny_model.forward(clip, capture=before)
    for p in tiny_model.params:
        if p.name.startswith(("slow.", "lateral.")):
            p.data = np.zeros_like(p.data)
    after = {}
    tiny_model.forward(clip, capture=after)
    for key in before:
        if key.startswith("fast."):
            assert np.array_equal(before[key], after[key]), key
    assert not np.array_equal(before["slow.pool"], after["slow.pool"])


def test_time_reversal_changes_embedding(tiny_model):
    t = np.linspace(0, 1, tiny_model.config.clip_length)[:, None, None, None]
    clip = (0.5 + 0.4 * np.sin(2 * np.pi * (t * 1.5 + np.linspace(0, 1, 30)[None, None, :, None]))
            * np.ones((1, 18, 30, 3))).astype(np.float32)
    a, b = embed(tiny_model, clip), embed(tiny_model, clip[::-1].copy())
    assert float(a @ b) < 1 - 1e-4


# -- lateral fusion ------------------------------------------------------------------------

def test_lateral_fuse_shapes_and_zero_fast():
    rng = np.random.default_rng(0)
    fast = Tensor(np.zeros((32, 5, 8, 2)))
    slow = Tensor(rng.standard_normal((4, 5, 8, 16)))
    w = Tensor(rng.standard_normal((5, 1, 1, 2, 4)))
    out = lateral_fuse(fast, slow, w, Tensor(np.zeros(4)), alpha=8)
    assert out.shape == (4, 5, 8, 20)
    np.testing.assert_array_equal(out.data[..., :16], slow.data)
    assert not out.data[..., 16:].any()
    with pytest.raises(DimensionError, match="T"):
        lateral_fuse(Tensor(np.zeros((30, 5, 8, 2))), slow, w, Tensor(np.zeros(4)), alpha=8)


@pytest.mark.parametrize("seed", range(3))
def test_miniature_network_gradients(seed):
    cfg = SlowFastConfig(alpha=4, clip_length=8, input_shape=(6, 10, 3), embed_dim=4,
                         stages=[StageConfig(4), StageConfig(8)], beta=0.5)
    model = build(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    for p in model.params:  # move affine/bias terms off their neutral init
        if not p.name.endswith("weight"):
            p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    clip = Tensor(rng.uniform(0, 1, (2, 8, 6, 10, 3)))
    w = Tensor(rng.standard_normal((2, 4)))
    report = grad_check(lambda *_: ops.reduce_sum(ops.mul(model.forward(clip), w)), model.params,
                        max_elems=12, seed=seed)
    assert report.passed, report.max_rel_err


# -- persistence ------------------------------------------------------------------------------

def test_save_load_round_trip(tmp_path, tiny_model):
    save_model(tiny_model, tmp_path / "m.lfa")
    back = load_model(tmp_path / "m.lfa")
    assert back.config == tiny_model.config
    assert all(p.name == q.name and p.data.tobytes() == q.data.tobytes()
               for p, q in zip(tiny_model.params, back.params))
    clip = clip_for(tiny_model.config)
    assert embed(back, clip).tobytes() == embed(tiny_model, clip).tobytes()


def test_load_with_mismatched_config(tmp_path, tiny_model):
    save_model(tiny_model, tmp_path / "m.lfa")
    with pytest.raises(ConfigError):
        load_model(tmp_path / "m.lfa", config=SlowFastConfig())
