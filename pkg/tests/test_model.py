"""Network shapes, attention contracts, encoder properties and checkpoints."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sitsscd.errors import ConfigError, DimensionError, FormatError, InputError
from sitsscd.model import (
    ModelConfig,
    TemporalAttentionUNet,
    apply_attention,
    count_parameters,
    default_channels,
    dumps_checkpoint,
    forward,
    init_params,
    load_model,
    loads_checkpoint,
    positional_encode,
    save_checkpoint,
)
from sitsscd.tensor import Tensor, grad_check, mean, ops


def small_config(**kw):
    base = dict(n_classes=3, in_channels=2, levels=3, feature_size=8, key_dim=2, heads=2,
                channels_per_level=[4, 4, 8], norm_groups=2, t_max=24)
    base.update(kw)
    return ModelConfig(**base)


def model64(config, seed=0):
    return TemporalAttentionUNet(config, init_params(config, seed, dtype=np.float64))


# ---------------------------------------------------------------- config

def test_default_widths():
    cfg = ModelConfig()
    assert (cfg.levels, cfg.feature_size, cfg.key_dim) == (4, 512, 4)
    assert cfg.channels == [64, 64, 64, 512]


def test_widths_scale_with_feature_size():
    assert default_channels(4, 256, 16, 4) == [32, 32, 32, 256]


@pytest.mark.parametrize("variant", ["ours", "tae", "ltae"])
@pytest.mark.parametrize("d", [64, 128, 512])
def test_closed_form_count_matches_materialized_parameters(variant, d):
    cfg = ModelConfig(feature_size=d, variant=variant)
    params = init_params(cfg)
    assert count_parameters(cfg) == sum(v.size for v in params.values())


def test_parameter_count_grows_with_feature_size():
    counts = [count_parameters(ModelConfig(feature_size=d)) for d in (64, 128, 256, 512)]
    assert counts == sorted(counts) and len(set(counts)) == 4


@pytest.mark.parametrize("bad", [
    dict(feature_size=30, heads=16),
    dict(levels=1),
    dict(key_dim=0),
    dict(n_classes=1),
    dict(variant="transformer"),
    dict(channels_per_level=[64, 64, 64, 256]),
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        ModelConfig(**bad)


def test_ltae_query_is_a_free_parameter():
    p = init_params(small_config(variant="ltae"))
    assert p["attn.query"].shape == (2, 2)
    assert "attn.query.w" not in p


# ---------------------------------------------------------------- positional encoding

def test_day_zero_encoding():
    pe = positional_encode([0], 8)[0]
    np.testing.assert_array_equal(pe[0::2], 0.0)
    np.testing.assert_array_equal(pe[1::2], 1.0)


def test_first_of_september_offset():
    import datetime as dt

    assert (dt.date(2018, 9, 1) - dt.date(2018, 1, 1)).days == 243
    pe = positional_encode([243], 4)[0]
    # wavelengths 1 and 10000**(2/4) = 100 days
    np.testing.assert_allclose(pe, [np.sin(243), np.cos(243), np.sin(2.43), np.cos(2.43)], atol=1e-12)


@pytest.mark.parametrize("days", [[3, 3], [5, 2], [-1, 4]])
def test_encoding_rejects_bad_days(days):
    with pytest.raises(InputError):
        positional_encode(days, 8)


def test_encoding_is_deterministic():
    np.testing.assert_array_equal(positional_encode([0, 31, 59], 16), positional_encode([0, 31, 59], 16))


# ---------------------------------------------------------------- encoder

def test_encoder_halving_chain():
    cfg = ModelConfig(levels=4, feature_size=16, heads=4, channels_per_level=[4, 8, 8, 16], in_channels=2)
    feats = TemporalAttentionUNet(cfg).encode(Tensor(np.zeros((1, 2, 2, 128, 128), np.float32)))
    assert [f.shape[-1] for f in feats] == [128, 64, 32, 16]
    assert [f.shape[1] for f in feats] == [4, 8, 8, 16]


def test_encoder_rejects_indivisible_extent():
    m = TemporalAttentionUNet(small_config())
    with pytest.raises(InputError):
        m.forward(np.zeros((2, 2, 10, 8), np.float32), [0, 31])


def test_encoder_is_permutation_equivariant(rng):
    m = model64(small_config())
    x = rng.standard_normal((1, 4, 2, 8, 8))
    perm = np.array([2, 0, 3, 1])
    a = m.encode(Tensor(x))
    b = m.encode(Tensor(x[:, perm]))
    for fa, fb in zip(a, b):
        np.testing.assert_array_equal(fa.data[perm], fb.data)


def test_encoder_shares_weights_across_dates(rng):
    m = model64(small_config())
    x = rng.standard_normal((1, 3, 2, 8, 8))
    y = x.copy()
    y[:, 1:] = rng.standard_normal(y[:, 1:].shape)
    for fa, fb in zip(m.encode(Tensor(x)), m.encode(Tensor(y))):
        np.testing.assert_array_equal(fa.data[0], fb.data[0])


# ---------------------------------------------------------------- attention

@pytest.mark.parametrize("variant", ["ours", "tae", "ltae"])
def test_singleton_sequence_gives_unit_attention(variant, rng):
    m = TemporalAttentionUNet(small_config(variant=variant))
    _, maps = m.forward(rng.standard_normal((1, 2, 8, 8)).astype(np.float32), [10], return_attention=True)
    for a in maps:
        np.testing.assert_allclose(a.weights.data, 1.0, atol=1e-7)


@given(st.sampled_from([1, 2, 5]), st.integers(0, 10_000))
def test_attention_rows_are_distributions(t, seed):
    rng = np.random.default_rng(seed)
    m = TemporalAttentionUNet(small_config(seed=seed))
    x = rng.standard_normal((t, 2, 8, 8)).astype(np.float32)
    days = np.cumsum(rng.integers(1, 60, t))
    _, maps = m.forward(x, days, return_attention=True)
    top = maps[-1].weights.data
    assert top.shape == (1, 2, t, t, 2, 2)
    assert (top >= 0).all()
    np.testing.assert_allclose(top.sum(axis=3), 1.0, atol=1e-6)
    for a in maps[:-1]:
        assert (a.weights.data >= -1e-7).all()
        np.testing.assert_allclose(a.weights.data.sum(axis=3), 1.0, atol=1e-5)


def test_shared_query_key_projection_gives_symmetric_scores(rng):
    cfg = small_config(heads=1, key_dim=2, feature_size=8, channels_per_level=[4, 4, 8], norm_groups=2)
    params = init_params(cfg, dtype=np.float64)
    q = np.linalg.qr(rng.standard_normal((8, 8)))[0][:2]
    params["attn.query.w"] = params["attn.key.w"] = q[None]
    params["attn.query.b"] = params["attn.key.b"] = np.zeros((1, 2))
    m = TemporalAttentionUNet(cfg, params)
    f = rng.standard_normal((1, 2, 8, 2, 2))
    x = ops.transpose(ops.reshape(Tensor(f), (1, 2, 1, 8, 2, 2)), (0, 4, 5, 2, 1, 3))
    k = m._project(x, "attn.key").data
    raw = k @ np.swapaxes(k, -1, -2)
    np.testing.assert_allclose(raw, np.swapaxes(raw, -1, -2), atol=1e-12)


def test_collapsing_variants_output_one_map(rng):
    for variant in ("tae", "ltae"):
        m = TemporalAttentionUNet(small_config(variant=variant))
        out = m.forward(rng.standard_normal((6, 2, 8, 8)).astype(np.float32), np.arange(6) * 30)
        assert out.shape == (1, 3, 8, 8)


def test_mono_prediction_runs_each_date_alone(rng):
    m = TemporalAttentionUNet(small_config(variant="ltae"))
    x = rng.standard_normal((4, 2, 8, 8)).astype(np.float32)
    days = np.array([0, 31, 59, 90])
    out = m.predict_series(x, days).data
    assert out.shape == (4, 3, 8, 8)
    alone = m.forward(x[2:3], days[2:3]).data[0]
    np.testing.assert_allclose(out[2], alone, atol=1e-5)


def loop_apply(weights, feats, heads):
    b, h, to, t, hh, ww = weights.shape
    c = feats.shape[1]
    f = feats.reshape(b, t, c, hh, ww)
    out = np.zeros((b, to, c, hh, ww))
    step = c // heads
    for bi in range(b):
        for o in range(to):
            for ch in range(c):
                head = ch // step
                for i in range(hh):
                    for j in range(ww):
                        out[bi, o, ch, i, j] = sum(weights[bi, head, o, s, i, j] * f[bi, s, ch, i, j]
                                                   for s in range(t))
    return out.reshape(b * to, c, hh, ww)


def test_apply_attention_matches_loop_oracle(rng):
    w = rng.random((2, 2, 3, 3, 2, 2))
    w /= w.sum(axis=3, keepdims=True)
    f = rng.standard_normal((6, 4, 2, 2))
    out = apply_attention(Tensor(w), Tensor(f), 2, 2).data
    np.testing.assert_allclose(out, loop_apply(w, f, 2), atol=1e-12)


def test_identity_and_uniform_attention(rng):
    t = 4
    f = rng.standard_normal((t, 4, 3, 3)).astype(np.float32)
    eye = np.broadcast_to(np.eye(t)[None, None, :, :, None, None], (1, 2, t, t, 3, 3)).astype(np.float32)
    np.testing.assert_array_equal(apply_attention(Tensor(eye), Tensor(f), 1, 2).data, f)
    uni = np.full((1, 2, t, t, 3, 3), 1.0 / t)
    out = apply_attention(Tensor(uni), Tensor(f.astype(np.float64)), 1, 2).data
    np.testing.assert_allclose(out, np.broadcast_to(f.mean(axis=0), out.shape), atol=1e-6)


def test_apply_attention_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        apply_attention(Tensor(np.ones((1, 2, 2, 2, 3, 3))), Tensor(np.ones((2, 4, 4, 4))), 1, 2)


def test_constant_attention_propagates_unchanged():
    m = TemporalAttentionUNet(small_config())
    from sitsscd.model import AttentionMaps

    row = np.array([0.2, 0.3, 0.5])
    w = np.broadcast_to(row[None, None, None, :, None, None], (1, 2, 3, 3, 2, 2)).copy()
    maps = m.propagate_attention(AttentionMaps(Tensor(w)))
    assert [a.weights.shape[-1] for a in maps] == [8, 4, 2]
    for a in maps:
        np.testing.assert_allclose(a.weights.data, row[None, None, None, :, None, None] * np.ones(a.weights.shape),
                                   atol=1e-7)


# ---------------------------------------------------------------- decoder / forward

@pytest.mark.parametrize("t", [1, 6, 12, 24])
def test_output_shape(t, rng):
    m = TemporalAttentionUNet(small_config())
    out = m.forward(rng.standard_normal((t, 2, 8, 8)).astype(np.float32), np.arange(t) * 30 + 1)
    assert out.shape == (t, 3, 8, 8)


def test_sequence_longer_than_t_max_rejected(rng):
    m = TemporalAttentionUNet(small_config(t_max=4))
    with pytest.raises(InputError):
        m.forward(np.zeros((5, 2, 8, 8), np.float32), np.arange(5))


def test_head_bias_shifts_logits_per_class(rng):
    cfg = small_config()
    params = init_params(cfg, dtype=np.float64)
    x = rng.standard_normal((3, 2, 8, 8))
    days = [0, 31, 59]
    base = forward(x, days, cfg, params).data
    shifted = dict(params)
    delta = np.array([0.5, -1.0, 2.0])
    shifted["head.b"] = params["head.b"] + delta
    np.testing.assert_allclose(forward(x, days, cfg, shifted).data - base,
                               np.broadcast_to(delta[None, :, None, None], base.shape), atol=1e-12)


def test_forward_is_deterministic(rng):
    m = TemporalAttentionUNet(small_config())
    x = rng.standard_normal((3, 2, 8, 8)).astype(np.float32)
    np.testing.assert_array_equal(m.forward(x, [1, 2, 3]).data, m.forward(x, [1, 2, 3]).data)


@pytest.mark.slow
def test_input_gradient_of_mean_logit(rng):
    cfg = small_config(levels=2, channels_per_level=[4, 8], in_channels=4)
    m = model64(cfg)
    x = rng.standard_normal((2, 4, 16, 16))
    assert grad_check(lambda v: mean(m.forward(v, [0, 45])), x) < 1e-3


# ---------------------------------------------------------------- checkpoint

def test_checkpoint_round_trip(tmp_path):
    cfg = small_config(variant="tae")
    m = TemporalAttentionUNet(cfg)
    save_checkpoint(tmp_path / "m.scdw", cfg, m.params)
    back = load_model(tmp_path / "m.scdw")
    assert back.config.to_dict() == cfg.to_dict()
    for k, v in m.params.items():
        np.testing.assert_array_equal(back.params[k], v)


def test_checkpoint_header_layout():
    cfg = small_config()
    blob = dumps_checkpoint(cfg, init_params(cfg))
    assert blob[:4] == b"SCDW" and blob[4] == 1
    n = int.from_bytes(blob[5:9], "little")
    assert blob[9:9 + n].decode() == cfg.to_json()


def test_truncated_checkpoint_reports_offset():
    cfg = small_config()
    blob = dumps_checkpoint(cfg, init_params(cfg))
    with pytest.raises(FormatError, match="offset"):
        loads_checkpoint(blob[:-3])
    with pytest.raises(FormatError):
        loads_checkpoint(b"XXXX" + blob[4:])
