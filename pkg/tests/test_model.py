import numpy as np
import pytest

import oracles
from conftest import DESK
from transnetr import functional as F
from transnetr.cost import count_parameters
from transnetr.model import (
    ConfigError,
    Decoder,
    ModelConfig,
    ResidualBlock,
    RTBlock,
    build_model,
    encoder_forward,
    extract_feature_heatmaps,
    is_transformer_param,
    patchify,
    unpatchify,
)
from transnetr.nn import Conv2d, ConvBNAct
from transnetr.tensor import Tensor, no_grad


def tiny(variant="full", **kw):
    cfg = dict(encoder_preset="tiny", variant=variant, train_resolution=(64, 64), **DESK)
    cfg.update(kw)
    return ModelConfig(**cfg)


def image(n=2, h=64, w=64, seed=0):
    return Tensor(np.random.default_rng(seed).random((n, 3, h, w)).astype(np.float32))


# ---------------------------------------------------------------- config
@pytest.mark.parametrize(
    "kw,needle",
    [
        (dict(variant="bogus"), "variant"),
        (dict(token_dim=30, attn_heads=4), "divisible by attn_heads"),
        (dict(train_resolution=(64, 48)), "multiples of 32"),
        (dict(patch_size=3), "patch_size 3"),
        (dict(reduction_channels=0), "reduction_channels"),
        (dict(encoder_preset="vgg"), "encoder_preset"),
    ],
)
def test_config_violation_names_constraint(kw, needle):
    with pytest.raises(ConfigError, match=needle):
        tiny(**kw)


def test_ff_hidden_defaults_to_twice_token_dim():
    assert ModelConfig().ff_hidden == 256
    assert tiny().ff_hidden == 2 * DESK["token_dim"]


def test_config_dict_round_trip():
    cfg = tiny(positional_embedding=False)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------- registry
def test_same_seed_gives_identical_registry():
    a, b = build_model(tiny(), 3).state_dict(), build_model(tiny(), 3).state_dict()
    assert list(a) == list(b)
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_different_seed_gives_different_weights():
    a, b = build_model(tiny(), 3).state_dict(), build_model(tiny(), 4).state_dict()
    assert not np.array_equal(a["encoder.conv1.weight"], b["encoder.conv1.weight"])


def test_no_rt_registry_has_no_transformer_names_and_is_subset_of_full():
    full = set(dict(build_model(tiny("full"), 0).named_parameters()))
    plain = set(dict(build_model(tiny("no_rt"), 0).named_parameters()))
    assert not any(is_transformer_param(n) for n in plain)
    assert plain < full
    assert any(is_transformer_param(n) for n in full)


def test_decoder3_has_no_transformer_parameters_under_full():
    names = [n for n, _ in build_model(tiny(), 0).named_parameters() if n.startswith("decoder3.")]
    assert names and not any(is_transformer_param(n) for n in names)


def test_parameter_names_unique():
    names = [n for n, _ in build_model(tiny(), 0).named_parameters()]
    assert len(names) == len(set(names))


def test_initialization_rules():
    m = build_model(tiny(), 0)
    params = dict(m.named_parameters())
    np.testing.assert_array_equal(params["encoder.bn1.weight"].data, 1.0)
    np.testing.assert_array_equal(params["encoder.bn1.bias"].data, 0.0)
    lin = params["decoder1.block.patch_embed.weight"].data
    assert np.abs(lin).max() <= 1 / np.sqrt(lin.shape[1])
    stem = params["encoder.conv1.weight"].data
    assert stem.std() == pytest.approx(np.sqrt(2 / (3 * 49)), rel=0.1)


# ---------------------------------------------------------------- parameter counts
@pytest.mark.parametrize("variant", ["full", "no_rt", "residual_only"])
def test_tiny_parameter_count_matches_closed_form(variant):
    m = build_model(tiny(variant), 0)
    expected = oracles.model_params("tiny", variant, c=DESK["reduction_channels"], d=DESK["token_dim"], res=(64, 64))
    assert count_parameters(m) == expected


def test_default_tiny_count_and_without_positional_embedding():
    m = build_model(ModelConfig(encoder_preset="tiny", train_resolution=(64, 64)), 0)
    assert count_parameters(m) == oracles.model_params("tiny", "full", res=(64, 64))
    m = build_model(ModelConfig(encoder_preset="tiny", train_resolution=(64, 64), positional_embedding=False), 0)
    assert count_parameters(m) == oracles.model_params("tiny", "full", res=(64, 64), pos=False)


def test_single_1x1_conv_with_bias():
    assert count_parameters(Conv2d(64, 64, 1, np.random.default_rng(0), bias=True)) == 4160


def test_resnet50_encoder_count_matches_bottleneck_closed_form():
    m = build_model(ModelConfig(), 0)
    assert count_parameters(m.encoder) == oracles.encoder_params("resnet50")


def test_isolated_block_counts():
    r = np.random.default_rng(0)
    assert count_parameters(ResidualBlock(128, 64, r)) == oracles.residual_block_params(128, 64)
    assert count_parameters(ResidualBlock(64, 64, r)) == oracles.residual_block_params(64, 64)
    cfg = ModelConfig()
    assert count_parameters(RTBlock(128, 64, cfg, (8, 8), r)) == oracles.rt_block_params(64, 4, 128, 256, 2, (8, 8))


def test_full_has_more_parameters_than_no_rt():
    assert count_parameters(build_model(tiny("full"), 0)) > count_parameters(build_model(tiny("no_rt"), 0))


# ---------------------------------------------------------------- encoder
def test_resnet50_encoder_sizes_and_channels():
    m = build_model(ModelConfig(), 0).eval()
    with no_grad():
        feats = encoder_forward(m, Tensor(np.zeros((1, 3, 256, 256), np.float32)))
    assert [f.shape for f in feats] == [(1, 64, 128, 128), (1, 256, 64, 64), (1, 512, 32, 32), (1, 1024, 16, 16)]
    assert m.encoder.channels == oracles.encoder_channels("resnet50")


def test_tiny_encoder_sizes_and_batch():
    m = build_model(tiny(), 0)
    with no_grad():
        feats = encoder_forward(m, image(n=3))
    assert [f.shape[2:] for f in feats] == [(32, 32), (16, 16), (8, 8), (4, 4)]
    assert all(f.shape[0] == 3 for f in feats)
    assert [f.shape[1] for f in feats] == oracles.encoder_channels("tiny")


def test_encoder_rejects_indivisible_size():
    with pytest.raises(ValueError, match="multiples of 32"):
        encoder_forward(build_model(tiny(), 0), image(n=1, h=48, w=64))


# ---------------------------------------------------------------- reduction
def test_reduction_block_shape():
    red = ConvBNAct(1024, 64, 1, np.random.default_rng(0))
    with no_grad():
        assert red(Tensor(np.zeros((1, 1024, 16, 16), np.float32))).shape == (1, 64, 16, 16)


def test_reduction_block_is_pointwise():
    red = ConvBNAct(8, 4, 1, np.random.default_rng(0))
    x = np.zeros((1, 8, 6, 6))
    x[0, 3, 2, 5] = 1.0
    with no_grad():
        y = red.conv(Tensor(x)).data
    nz = np.argwhere(np.abs(y).sum(axis=1)[0] > 0)
    assert nz.tolist() == [[2, 5]]


def test_reduction_block_weight_gets_gradient():
    red = ConvBNAct(8, 4, 1, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).standard_normal((2, 8, 5, 5)))
    # leaky output sum: BN cancels the mean, the slope asymmetry keeps a nonzero gradient
    red(x).sum().backward()
    assert np.abs(red.conv.weight.grad).sum() > 0


# ---------------------------------------------------------------- residual block
def test_residual_block_zero_weights_gives_activated_shortcut():
    blk = ResidualBlock(4, 4, np.random.default_rng(0)).eval()
    for conv in (blk.conv1, blk.conv2):
        conv.weight.data[...] = 0
    x = np.random.default_rng(1).standard_normal((1, 4, 5, 5))
    with no_grad():
        out = blk(Tensor(x)).data
    np.testing.assert_allclose(out, np.where(x >= 0, x, 0.01 * x), atol=1e-12)


def test_residual_block_identity_shortcut_when_channels_match():
    blk = ResidualBlock(6, 6, np.random.default_rng(0))
    assert blk.shortcut is None
    with no_grad():
        assert blk(Tensor(np.zeros((1, 6, 4, 4)))).shape == (1, 6, 4, 4)
    assert ResidualBlock(6, 3, np.random.default_rng(0)).shortcut is not None


@pytest.mark.parametrize("training", [True, False])
def test_residual_block_matches_recomposition(training):
    r = np.random.default_rng(2)
    blk = ResidualBlock(6, 4, r).train(training)
    # non-trivial BN parameters and running statistics
    for bn in (blk.bn1, blk.bn2, blk.shortcut.bn):
        bn.weight.data[...] = r.uniform(0.5, 1.5, bn.weight.shape)
        bn.bias.data[...] = r.standard_normal(bn.bias.shape)
        bn.running_mean[...] = r.standard_normal(bn.running_mean.shape)
        bn.running_var[...] = r.uniform(0.5, 2, bn.running_var.shape)
    x = r.standard_normal((2, 6, 5, 5)).astype(np.float32)

    def bn(mod, y):
        if training:
            mu, var = y.mean(axis=(0, 2, 3), keepdims=True), y.var(axis=(0, 2, 3), keepdims=True)
        else:
            mu, var = mod.running_mean.reshape(1, -1, 1, 1), mod.running_var.reshape(1, -1, 1, 1)
        return (y - mu) / np.sqrt(var + mod.eps) * mod.weight.data.reshape(1, -1, 1, 1) + mod.bias.data.reshape(1, -1, 1, 1)

    def lrelu(y):
        return np.where(y >= 0, y, 0.01 * y)

    conv = oracles.naive_conv2d
    y = lrelu(bn(blk.bn1, conv(x, blk.conv1.weight.data, None, 1, 1)))
    y = bn(blk.bn2, conv(y, blk.conv2.weight.data, None, 1, 1))
    s = bn(blk.shortcut.bn, conv(x, blk.shortcut.conv.weight.data, None, 1, 0))
    expected = lrelu(y + s)
    with no_grad():
        got = blk(Tensor(x)).data
    np.testing.assert_allclose(got, expected, atol=1e-4)


# ---------------------------------------------------------------- RT block
def test_patchify_round_trip_and_order():
    x = np.arange(2 * 3 * 8 * 8, dtype=np.float64).reshape(2, 3, 8, 8)
    t = patchify(Tensor(x), 4)
    assert t.shape == (2, 4, 48)
    np.testing.assert_array_equal(t.data[0, 1], x[0, :, 0:4, 4:8].ravel())
    np.testing.assert_array_equal(unpatchify(t, 3, 8, 8, 4).data, x)


def test_rt_block_token_count_and_output_size():
    cfg = ModelConfig(**DESK)
    blk = RTBlock(128, 64, cfg, (8, 8), np.random.default_rng(0))
    seen = {}
    orig = blk.patch_embed.forward

    def spy(t):
        seen["shape"] = t.shape
        return orig(t)

    blk.patch_embed.forward = spy
    with no_grad():
        out = blk(Tensor(np.random.default_rng(1).standard_normal((1, 128, 32, 32)).astype(np.float32)))
    assert seen["shape"] == (1, 64, 64 * 16)
    assert out.shape == (1, 64, 32, 32)


def test_rt_block_rejects_indivisible_input():
    blk = RTBlock(8, 4, ModelConfig(**DESK), (2, 2), np.random.default_rng(0))
    with pytest.raises(ValueError, match="patch_size 4"):
        blk(Tensor(np.zeros((1, 8, 10, 8))))


def _permute_patches(x, p, perm):
    n, c, h, w = x.shape
    t = x.reshape(n, c, h // p, p, w // p, p).transpose(0, 2, 4, 1, 3, 5).reshape(n, -1, c, p, p)
    t = t[:, perm]
    return t.reshape(n, h // p, w // p, c, p, p).transpose(0, 3, 1, 4, 2, 5).reshape(n, c, h, w)


@pytest.mark.parametrize("pos", [True, False])
def test_rt_block_patch_permutation(pos):
    cfg = ModelConfig(positional_embedding=pos, reduction_channels=8, token_dim=32)
    blk = RTBlock(16, 8, cfg, (4, 4), np.random.default_rng(0)).eval()
    r = np.random.default_rng(5)
    x = r.standard_normal((1, 16, 16, 16))
    perm = r.permutation(16)
    with no_grad():
        y = blk.pre_residual(Tensor(x)).data
        y_perm = blk.pre_residual(Tensor(_permute_patches(x, 4, perm))).data
    moved = _permute_patches(y, 4, perm)
    if pos:
        assert np.abs(y_perm - moved).max() > 1e-3
    else:
        np.testing.assert_allclose(y_perm, moved, atol=1e-10)


def test_zero_transformer_hook_reduces_to_projected_skip():
    cfg = ModelConfig(**DESK)
    blk = RTBlock(16, 8, cfg, (2, 2), np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((2, 16, 8, 8))
    blk.zero_transformer = True
    with no_grad():
        got = blk.pre_residual(Tensor(x)).data
        proj = blk.conv_out(Tensor(np.zeros((2, 8, 8, 8)))).data
    z = proj + x
    np.testing.assert_allclose(got, np.where(z >= 0, z, 0.01 * z), atol=1e-12)
    # tokens path really used when the hook is off
    blk.zero_transformer = False
    with no_grad():
        assert not np.allclose(blk.pre_residual(Tensor(x)).data, got)


def test_positional_embedding_regrids_for_new_resolution():
    m = build_model(tiny(), 0).eval()
    with no_grad():
        out = m(image(n=1, h=96, w=128))
    assert out.shape == (1, 1, 96, 128)


# ---------------------------------------------------------------- decoder
def test_decoder_concatenates_before_block():
    seen = {}

    class Probe(ResidualBlock):
        def forward(self, x):
            seen["shape"] = x.shape
            return super().forward(x)

    dec = Decoder(Probe(128, 64, np.random.default_rng(0)))
    with no_grad():
        out = dec(Tensor(np.zeros((1, 64, 16, 16))), Tensor(np.zeros((1, 64, 32, 32))))
    assert seen["shape"] == (1, 128, 32, 32)
    assert out.shape == (1, 64, 32, 32)


def test_decoder_rejects_spatial_mismatch():
    dec = Decoder(ResidualBlock(8, 4, np.random.default_rng(0)))
    with pytest.raises(ValueError, match="mismatch"):
        dec(Tensor(np.zeros((1, 4, 4, 4))), Tensor(np.zeros((1, 4, 10, 8))))


# ---------------------------------------------------------------- forward
@pytest.mark.parametrize("variant", ["full", "no_rt", "residual_only"])
def test_forward_shape_range_and_decoder_sizes(variant):
    m = build_model(tiny(variant), 0)
    out, feats = m(image(), return_features=True)
    assert out.shape == (2, 1, 64, 64)
    assert np.all((out.data > 0) & (out.data < 1))
    assert feats["decoder1"].shape[2:] == (8, 8)
    assert feats["decoder2"].shape[2:] == (16, 16)
    assert feats["decoder3"].shape[2:] == (32, 32)


@pytest.mark.parametrize("size", [(32, 32), (64, 96), (96, 64)])
def test_shape_closure_over_valid_sizes(size):
    with no_grad():
        assert build_model(tiny(), 0).eval()(image(1, *size)).shape == (1, 1) + size


def test_forward_is_bitwise_deterministic():
    a = build_model(tiny(), 11)(image()).data
    b = build_model(tiny(), 11)(image()).data
    assert np.array_equal(a, b)


@pytest.mark.parametrize("variant", ["full", "no_rt", "residual_only"])
def test_every_parameter_receives_gradient(variant):
    m = build_model(tiny(variant), 0)
    m(image()).mean().backward()
    missing = [n for n, p in m.named_parameters() if p.grad is None]
    assert not missing
    assert np.abs(m.encoder.conv1.weight.grad).sum() > 0


def test_eval_forward_does_not_mutate_state():
    m = build_model(tiny(), 0)
    m(image())  # populate running stats away from their initial values
    m.eval()
    before = {k: v.copy() for k, v in m.state_dict().items()}
    with no_grad():
        a = m(image(seed=3)).data
        b = m(image(seed=3)).data
    assert np.array_equal(a, b)
    after = m.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_train_forward_updates_running_stats():
    m = build_model(tiny(), 0)
    before = m.encoder.bn1.running_mean.copy()
    m(image())
    assert not np.array_equal(before, m.encoder.bn1.running_mean)


def test_invalid_size_message_states_requirement():
    m = build_model(tiny(), 0)
    with pytest.raises(ValueError, match=r"70x64.*multiples of 32"):
        m(Tensor(np.zeros((1, 3, 70, 64), np.float32)))
    with pytest.raises(ValueError, match="N×3×H×W"):
        m(Tensor(np.zeros((1, 1, 64, 64), np.float32)))


def test_size_multiple_accounts_for_patch_grid():
    cfg = ModelConfig(encoder_preset="tiny", patch_size=8, train_resolution=(64, 64), **DESK)
    assert cfg.size_multiple == 64
    with pytest.raises(ValueError, match="multiples of 64"):
        build_model(cfg, 0)(image(1, 96, 64))


# ---------------------------------------------------------------- heatmaps
def test_heatmaps_cover_stages_in_unit_range():
    m = build_model(tiny(), 0)
    maps = extract_feature_heatmaps(m, image())
    assert [n for n, _ in maps] == ["reduce1", "reduce2", "reduce3", "reduce4", "decoder1", "decoder2", "decoder3"]
    for _, hm in maps:
        assert hm.shape == (2, 64, 64)
        assert hm.min() >= 0 and hm.max() <= 1
    assert m.training


def test_heatmaps_with_zero_head_still_valid():
    m = build_model(tiny(), 0)
    m.head.weight.data[...] = 0
    m.head.bias.data[...] = 0
    maps = dict(extract_feature_heatmaps(m, image()))
    assert all(np.isfinite(h).all() and h.max() > 0 for h in maps.values())


def test_heatmap_matches_recomputed_channel_mean():
    m = build_model(tiny(), 0).eval()
    x = image()
    maps = dict(extract_feature_heatmaps(m, x))
    with no_grad():
        _, feats = m(x, return_features=True)
    act = np.abs(feats["decoder2"].data.astype(np.float64)).mean(axis=1)
    for i in range(2):
        a = act[i]
        scaled = (a - a.min()) / (a.max() - a.min())
        ref = oracles.half_pixel_bilinear(scaled, 64, 64)
        np.testing.assert_allclose(maps["decoder2"][i], ref, atol=1e-5)
