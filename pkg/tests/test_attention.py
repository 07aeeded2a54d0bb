import numpy as np
import pytest

from lite_nvist.attention import (AdaLNMLP, AdaLNParams, MultiHeadAttention, PatchEmbed, SelfAttentionSublayer,
                                  TransformerBlock, adaptive_layer_norm, patchify, sincos_2d, unpatchify)
from lite_nvist.autodiff import Tensor
from lite_nvist.camera import COND_DIM, encode_conditioning
from lite_nvist.common import ConfigError, DimensionError
from lite_nvist.layers import LayerNorm, Linear, ShapeOnly, layer_norm, shape_only


# =============================================================================
# Patches and positions
# =============================================================================

def test_patchify_is_row_major_and_invertible(rng):
    image = rng.uniform(size=(8, 12, 3))
    patches, grid = patchify(image, 4)
    assert grid == (2, 3)
    assert patches.shape == (6, 48)
    np.testing.assert_array_equal(patches[1].reshape(4, 4, 3), image[0:4, 4:8])
    np.testing.assert_array_equal(unpatchify(patches, 4, grid), image)


def test_patch_size_must_divide_image():
    with pytest.raises(ConfigError):
        patchify(np.zeros((10, 8, 3)), 4)


def test_patch_embed_produces_one_token_per_patch(float64, rng):
    tokens, grid = PatchEmbed(4, 16, rng)(rng.uniform(size=(8, 8, 3)))
    assert grid == (2, 2)
    assert tokens.shape == (4, 16)


def test_sincos_positions_are_distinct_and_bounded():
    pos = sincos_2d(16, (3, 4))
    assert pos.shape == (12, 16)
    assert np.all(np.abs(pos) <= 1.0)
    assert len({tuple(np.round(row, 8)) for row in pos}) == 12
    with pytest.raises(ConfigError):
        sincos_2d(6, (2, 2))


# =============================================================================
# Normalization
# =============================================================================

def test_layer_norm_zero_mean_unit_variance(float64, rng):
    y = layer_norm(Tensor(rng.normal(3.0, 5.0, size=(4, 32)))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-3)


def test_adaptive_layer_norm_applies_scale_and_shift(float64, rng):
    x = Tensor(rng.normal(size=(5, 8)))
    p = AdaLNParams(alpha=Tensor(np.full(8, 2.0)), delta=Tensor(np.full(8, -1.0)), gamma=Tensor(np.zeros(8)))
    np.testing.assert_allclose(adaptive_layer_norm(x, p).data, 2.0 * layer_norm(x).data - 1.0)
    with pytest.raises(DimensionError):
        adaptive_layer_norm(Tensor(rng.normal(size=(5, 4))), p)


def test_adaln_mlp_starts_at_identity_modulation(float64, rng):
    mlp = AdaLNMLP(embed_dim=8, sites=3, hidden=4, rng=rng)
    params = mlp(encode_conditioning(0.9, 2.0))
    assert len(params) == 3
    for p in params:
        np.testing.assert_array_equal(p.alpha.data, np.ones(8))
        np.testing.assert_array_equal(p.delta.data, np.zeros(8))
        np.testing.assert_array_equal(p.gamma.data, np.zeros(8))


def test_zero_gated_adaptive_block_is_identity(float64, rng):
    block = TransformerBlock(8, 2, rng, cross=True, adaptive=True)
    params = AdaLNMLP(8, 2, 4, rng)(encode_conditioning(1.0, 1.5))
    x = Tensor(rng.normal(size=(6, 8)))
    ctx = Tensor(rng.normal(size=(3, 8)))
    np.testing.assert_array_equal(block(x, ctx, params).data, x.data)
    sub = SelfAttentionSublayer(8, 2, rng)
    np.testing.assert_array_equal(sub(x, params[0]).data, x.data)


# =============================================================================
# Attention
# =============================================================================

def test_cross_attention_shapes_and_normalized_weights(float64, rng):
    attn = MultiHeadAttention(8, 2, rng)
    out, weights = attn(Tensor(rng.normal(size=(5, 8))), Tensor(rng.normal(size=(7, 8))), return_weights=True)
    assert out.shape == (5, 8)
    assert weights.shape == (2, 5, 7)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0)


def test_heads_must_divide_width(rng):
    with pytest.raises(ConfigError):
        MultiHeadAttention(10, 4, rng)


def test_cross_block_needs_context(float64, rng):
    block = TransformerBlock(8, 2, rng, cross=True)
    with pytest.raises(DimensionError):
        block(Tensor(rng.normal(size=(3, 8))))


def test_plain_block_gradients_reach_every_parameter(float64, rng):
    block = TransformerBlock(8, 2, rng, cross=True)
    x = Tensor(rng.normal(size=(4, 8)))
    ctx = Tensor(rng.normal(size=(3, 8)))
    block.zero_grad()
    (block(x, ctx) * x).sum().backward()
    for name, p in block.named_parameters():
        if name == "attn.k.bias":
            # softmax is shift invariant along the key axis
            continue
        assert np.any(p.grad != 0), name


# =============================================================================
# Modules
# =============================================================================

def test_state_dict_round_trip_and_shape_check(float64, rng):
    a = Linear(3, 4, rng)
    b = Linear(3, 4, np.random.default_rng(99))
    b.load_state_dict({f"lin/{k}": v for k, v in a.state_dict().items()}, prefix="lin/")
    np.testing.assert_array_equal(a.weight.data, b.weight.data)
    with pytest.raises(DimensionError):
        b.load_state_dict({"weight": np.zeros((4, 3)), "bias": np.zeros(4)})
    with pytest.raises(DimensionError):
        b.load_state_dict({"weight": np.zeros((3, 4))})


def test_shape_only_counts_without_allocating(rng):
    with shape_only():
        lin = Linear(3, 4, rng)
        norm = LayerNorm(4, rng)
    assert isinstance(lin.weight, ShapeOnly)
    assert lin.num_parameters() == 16
    assert norm.num_parameters() == 8


def test_cond_dim_matches_encoding():
    assert COND_DIM == len(encode_conditioning(1.0, 1.0))
