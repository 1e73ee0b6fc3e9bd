"""Tests for window/head data movement and the full-domain transformer block"""

import numpy as np
import pytest

from wfen.config import WFENConfig
from wfen.errors import ConfigError, ShapeError
from wfen.fdt import (
    FDTBlock,
    GlobalSelfAttention,
    GSAConfig,
    RegionalSelfAttention,
    RSAConfig,
    build_stage,
    cyclic_shift,
    fdt_forward,
    gsa_forward,
    rsa_forward,
    shuffle_heads,
    window_merge,
    window_partition,
)
from wfen.gradcheck import grad_check
from wfen.model import WFENModel
from wfen.nn import init_parameters, param_count, zero_branch
from wfen.tensor import Tensor, backward


def _x(rng, shape):
    return Tensor(rng.standard_normal(shape))


# =============================================================================
# Data movement
# =============================================================================


class TestWindows:
    def test_partition_round_trip(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        windows = window_partition(x, 2)
        assert windows.shape == (4, 1, 2, 2)
        np.testing.assert_array_equal(windows.data[1, 0], [[2.0, 3.0], [6.0, 7.0]])
        np.testing.assert_array_equal(window_merge(windows, 4, 4).data, x.data)

    def test_window_count(self, rng):
        windows = window_partition(_x(rng, (2, 3, 16, 16)), 8)
        assert windows.shape == (2 * 4, 3, 8, 8)

    def test_single_window(self, rng):
        x = _x(rng, (1, 3, 8, 8))
        np.testing.assert_array_equal(window_partition(x, 8).data, x.data)

    def test_window_must_tile(self, rng):
        with pytest.raises(ShapeError):
            window_partition(_x(rng, (1, 1, 6, 6)), 4)

    def test_shift_zero_is_identity(self, rng):
        x = _x(rng, (1, 2, 4, 4))
        assert cyclic_shift(x, 0) is x

    def test_shift_round_trip(self, rng):
        x = _x(rng, (1, 2, 8, 8))
        np.testing.assert_array_equal(cyclic_shift(cyclic_shift(x, 3), -3).data, x.data)

    def test_shift_rotates_ramp(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        shifted = cyclic_shift(x, 2).data[0, 0]
        np.testing.assert_array_equal(shifted, np.roll(np.arange(16.0).reshape(4, 4), 2, (0, 1)))

    def test_shuffle_single_head(self, rng):
        x = _x(rng, (1, 4, 2, 2))
        np.testing.assert_array_equal(shuffle_heads(x, 1).data, x.data)

    def test_shuffle_order(self):
        x = Tensor(np.arange(4.0).reshape(1, 4, 1, 1))
        np.testing.assert_array_equal(shuffle_heads(x, 2).data.reshape(-1), [0, 2, 1, 3])

    def test_shuffle_transpose_round_trip(self, rng):
        x = _x(rng, (1, 6, 2, 2))
        np.testing.assert_array_equal(shuffle_heads(shuffle_heads(x, 2), 3).data, x.data)

    def test_shuffle_divisibility(self, rng):
        with pytest.raises(ShapeError):
            shuffle_heads(_x(rng, (1, 6, 2, 2)), 4)


# =============================================================================
# Attention sublayers
# =============================================================================


class TestRegionalAttention:
    def test_zero_projection_is_identity(self, rng):
        layer = RegionalSelfAttention(8, RSAConfig(8, shifted=True))
        init_parameters(layer, seed=0)
        zero_branch(layer, ["project"])
        x = _x(rng, (1, 8, 16, 16))
        np.testing.assert_array_equal(rsa_forward(x, layer).data, x.data)

    def test_shape_and_map_extent(self, rng):
        layer = RegionalSelfAttention(8, RSAConfig(8))
        init_parameters(layer, seed=0)
        x = _x(rng, (1, 8, 16, 16))
        assert layer(x).shape == x.shape
        _, attn = layer.attend(x)
        assert attn.shape == (4, 8, 8)

    def test_map_extent_independent_of_window(self, rng):
        layer = RegionalSelfAttention(8, RSAConfig(4))
        init_parameters(layer, seed=0)
        _, attn = layer.attend(_x(rng, (1, 8, 16, 16)))
        assert attn.shape == (16, 8, 8)

    def test_window_clipped_to_feature(self, rng):
        layer = RegionalSelfAttention(4, RSAConfig(8, shifted=True))
        init_parameters(layer, seed=0)
        _, attn = layer.attend(_x(rng, (1, 4, 4, 4)))
        assert attn.shape == (1, 4, 4)

    def test_shift_changes_output(self, rng):
        plain = RegionalSelfAttention(4, RSAConfig(4))
        shifted = RegionalSelfAttention(4, RSAConfig(4, shifted=True))
        init_parameters(plain, seed=0)
        init_parameters(shifted, seed=0)
        x = _x(rng, (1, 4, 8, 8))
        assert not np.allclose(plain(x).data, shifted(x).data)


class TestGlobalAttention:
    def test_zero_projection_is_identity(self, rng):
        layer = GlobalSelfAttention(GSAConfig(8, 2))
        init_parameters(layer, seed=0)
        zero_branch(layer, ["project"])
        x = _x(rng, (1, 8, 8, 8))
        np.testing.assert_array_equal(gsa_forward(x, layer).data, x.data)

    def test_head_map_extent(self, rng):
        layer = GlobalSelfAttention(GSAConfig(8, 2))
        init_parameters(layer, seed=0)
        _, attn = layer.attend(_x(rng, (1, 8, 8, 8)))
        assert attn.shape == (2, 4, 4)

    def test_heads_must_divide(self):
        with pytest.raises(ConfigError):
            GSAConfig(6, 4)


class TestAttentionScores:
    @staticmethod
    def _qk(layer, x):
        qkv = layer.qkv_dw(layer.qkv(layer.norm(x))).data
        B, C, H, W = x.shape
        return qkv[:, :C].reshape(B, C, H * W), qkv[:, C : 2 * C].reshape(B, C, H * W)

    def test_default_scores_are_token_means(self, f64, rng):
        layer = GlobalSelfAttention(GSAConfig(4, 1))
        init_parameters(layer, seed=0)
        x = _x(rng, (1, 4, 6, 6))
        q, k = self._qk(layer, x)
        _, attn = layer.attend(x)
        expected = np.maximum(q @ k.transpose(0, 2, 1) / 36, 0) / (1.0 + 1e-6)
        np.testing.assert_allclose(attn.data, expected, rtol=1e-10, atol=1e-12)

    def test_qk_norm_scores_are_cosines(self, f64, rng):
        layer = GlobalSelfAttention(GSAConfig(4, 1, qk_norm=True))
        init_parameters(layer, seed=0)
        x = _x(rng, (1, 4, 6, 6))
        q, k = self._qk(layer, x)
        q = q / np.linalg.norm(q, axis=-1, keepdims=True)
        k = k / np.linalg.norm(k, axis=-1, keepdims=True)
        _, attn = layer.attend(x)
        expected = np.maximum(q @ k.transpose(0, 2, 1), 0) / (1.0 + 1e-6)
        np.testing.assert_allclose(attn.data, expected, rtol=1e-8, atol=1e-12)
        assert attn.data.max() <= 1.0

    def test_setting_changes_output(self, rng):
        x = _x(rng, (1, 4, 8, 8))
        outputs = []
        for qk_norm in (False, True):
            layer = RegionalSelfAttention(4, RSAConfig(4, qk_norm=qk_norm))
            init_parameters(layer, seed=0)
            outputs.append(layer(x).data)
        assert not np.allclose(outputs[0], outputs[1])

    @pytest.mark.parametrize("qk_norm", [False, True])
    def test_gradient_check_in_both_settings(self, f64, rng, qk_norm):
        layer = RegionalSelfAttention(4, RSAConfig(4, shifted=True, qk_norm=qk_norm))
        store = init_parameters(layer, seed=0)
        x = Tensor(rng.standard_normal((1, 4, 8, 8)), requires_grad=True)
        weights = Tensor(rng.standard_normal((1, 4, 8, 8)))
        params = dict(store)
        params["x"] = x
        error = grad_check(
            lambda: (layer(x) * weights).mean(),
            params,
            max_coords_per_param=16,
            atol=1e-8,
            skip_kinks=True,
        )
        assert error < 1e-5

    def test_model_flag_reaches_every_attention(self):
        model = WFENModel(WFENConfig(tiny=True, qk_norm=True))
        layers = [
            model.encoder[0].blocks[0].rsa,
            model.encoder[0].down.low.gsa,
            model.bottleneck[1].gsa,
            model.decoder[2].blocks[0].rsa,
        ]
        assert all(layer.cfg.qk_norm for layer in layers)
        assert not WFENModel(WFENConfig(tiny=True)).bottleneck[0].rsa.cfg.qk_norm


# =============================================================================
# FDT block
# =============================================================================


BRANCHES = ["rsa.project", "ffn1.project", "gsa.project", "ffn2.project"]


class TestFDTBlock:
    def test_zero_branches_are_identity(self, rng):
        block = FDTBlock(8, 4, 2, shifted=True)
        init_parameters(block, seed=0)
        zero_branch(block, BRANCHES)
        x = _x(rng, (1, 8, 8, 8))
        np.testing.assert_array_equal(fdt_forward(x, block).data, x.data)

    @pytest.mark.parametrize("channels,size", [(40, 128), (80, 64), (160, 32), (160, 16)])
    def test_shape_at_default_stage_sizes(self, rng, channels, size):
        heads = {40: 1, 80: 2, 160: 4}[channels]
        block = FDTBlock(channels, 8, heads)
        init_parameters(block, seed=0)
        x = _x(rng, (1, channels, size, size))
        assert block(x).shape == x.shape

    def test_sublayer_order(self):
        assert FDTBlock(4, 4, 2)._order == ["rsa", "ffn1", "gsa", "ffn2"]
        assert FDTBlock(4, 4, 2, mode="regional")._order == ["rsa", "ffn1", "rsa_alt", "ffn2"]
        assert FDTBlock(4, 4, 2, mode="global")._order == ["gsa_pre", "ffn1", "gsa", "ffn2"]

    def test_modes_have_comparable_size(self):
        counts = {
            mode: param_count(FDTBlock(8, 4, 2, mode=mode).parameters())
            for mode in ("full", "regional", "global")
        }
        assert len(set(counts.values())) == 1

    def test_regional_mode_uses_both_phases(self):
        block = FDTBlock(4, 4, 2, mode="regional")
        assert not block.rsa.cfg.shifted
        assert block.rsa_alt.cfg.shifted

    def test_shift_toggle_disables_all_shifts(self):
        block = FDTBlock(4, 4, 2, shifted=True, mode="regional", shift_windows=False)
        assert not block.rsa.cfg.shifted and not block.rsa_alt.cfg.shifted

    def test_stage_alternates_shift(self):
        stage = build_stage(4, 3, 4, 2)
        assert [b.rsa.cfg.shifted for b in stage] == [False, True, False]

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            FDTBlock(4, 4, 2, mode="local")

    def test_gradient_check(self, f64, rng):
        block = FDTBlock(4, 4, 2, shifted=True)
        store = init_parameters(block, seed=0)
        x = Tensor(rng.standard_normal((1, 4, 8, 8)), requires_grad=True)
        weights = Tensor(rng.standard_normal((1, 4, 8, 8)))

        def loss():
            return (block(x) * weights).mean()

        params = dict(store)
        params["x"] = x
        error = grad_check(loss, params, max_coords_per_param=8, atol=1e-8, skip_kinks=True)
        assert error < 1e-5

    def test_gradients_reach_every_parameter(self, rng):
        block = FDTBlock(4, 4, 2, shifted=True)
        store = init_parameters(block, seed=0)
        x = Tensor(rng.standard_normal((1, 4, 8, 8)))
        grads = backward((block(x) * block(x)).mean(), store)
        assert set(grads) == set(store)
        assert np.any(grads["gsa.qkv.weight"].data != 0)
