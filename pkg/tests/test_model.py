"""Tests for the wavelet modules and the full network"""

import numpy as np
import pytest

from wfen.config import WFENConfig
from wfen.errors import ConfigError, ShapeError
from wfen.model import (
    COMPONENTS,
    WaveletFeatureDownsample,
    WaveletFeatureUpgrade,
    WFENModel,
    build_model,
    parameter_report,
    wfd_forward,
    wfu_forward,
)
from wfen.nn import init_parameters, zero_branch
from wfen.tensor import Tensor, no_grad

FDT_BRANCHES = ["low.rsa.project", "low.ffn1.project", "low.gsa.project", "low.ffn2.project"]


def _input(rng, size=16):
    return Tensor(rng.uniform(0.0, 1.0, size=(1, 3, size, size)))


class TestWaveletFeatureDownsample:
    def test_output_shape(self, rng, tiny_config):
        wfd = WaveletFeatureDownsample(4, 8, 4, 2, tiny_config)
        init_parameters(wfd, seed=0)
        out = wfd_forward(Tensor(rng.standard_normal((2, 4, 8, 8))), wfd)
        assert out.shape == (2, 8, 4, 4)

    def test_constant_feature_reaches_fusion_as_low_band(self, tiny_config):
        wfd = WaveletFeatureDownsample(4, 8, 4, 2, tiny_config)
        init_parameters(wfd, seed=0)
        zero_branch(wfd, FDT_BRANCHES + ["high.conv1", "high.conv2", "high.skip"])
        f = Tensor(np.full((1, 4, 8, 8), 0.5))
        fused_input = wfd.pre_fusion(f).data
        np.testing.assert_array_equal(fused_input[:, :4], np.full((1, 4, 4, 4), 2.0))
        np.testing.assert_array_equal(fused_input[:, 4:], 0.0)

    def test_odd_extent_rejected(self, rng, tiny_config):
        wfd = WaveletFeatureDownsample(4, 8, 4, 2, tiny_config)
        init_parameters(wfd, seed=0)
        with pytest.raises(ShapeError):
            wfd(Tensor(rng.standard_normal((1, 4, 7, 8))))


class TestWaveletFeatureUpgrade:
    def test_output_shape(self, rng):
        wfu = WaveletFeatureUpgrade(4)
        init_parameters(wfu, seed=0)
        f_enc = Tensor(rng.standard_normal((1, 4, 8, 8)))
        f_dec = Tensor(rng.standard_normal((1, 4, 4, 4)))
        assert wfu_forward(f_enc, f_dec, wfu).shape == (1, 4, 8, 8)

    def test_constant_encoder_feature_passes_through(self, rng):
        wfu = WaveletFeatureUpgrade(4)
        init_parameters(wfu, seed=0)
        weight = np.zeros((4, 8, 1, 1), dtype=np.float32)
        weight[np.arange(4), np.arange(4)] = 1.0
        wfu.low.weight.data = weight
        f_enc = Tensor(np.full((1, 4, 8, 8), 0.5))
        f_dec = Tensor(rng.standard_normal((1, 4, 4, 4)))
        np.testing.assert_array_equal(wfu(f_enc, f_dec).data, f_enc.data)

    @pytest.mark.parametrize("dec_shape", [(1, 4, 8, 8), (1, 2, 4, 4)])
    def test_mismatched_decoder_feature(self, rng, dec_shape):
        wfu = WaveletFeatureUpgrade(4)
        init_parameters(wfu, seed=0)
        f_enc = Tensor(rng.standard_normal((1, 4, 8, 8)))
        with pytest.raises(ShapeError):
            wfu(f_enc, Tensor(rng.standard_normal(dec_shape)))


class TestWFENModel:
    def test_output_matches_input_shape(self, rng, tiny_config):
        model, _ = build_model(tiny_config, seed=0)
        with no_grad():
            assert model(_input(rng)).shape == (1, 3, 16, 16)

    def test_zero_head_returns_input(self, rng, tiny_config):
        model, _ = build_model(tiny_config, seed=0)
        zero_branch(model, ["fuse_out"])
        x = _input(rng)
        with no_grad():
            np.testing.assert_array_equal(model(x).data, x.data)

    def test_same_seed_same_output(self, rng, tiny_config):
        x = _input(rng)
        outputs = []
        for _ in range(2):
            model, _ = build_model(tiny_config, seed=5)
            with no_grad():
                outputs.append(model(x).data)
        np.testing.assert_array_equal(outputs[0], outputs[1])

    def test_different_seeds_differ(self, rng, tiny_config):
        x = _input(rng)
        with no_grad():
            a = build_model(tiny_config, seed=0)[0](x).data
            b = build_model(tiny_config, seed=1)[0](x).data
        assert not np.allclose(a, b)

    @pytest.mark.parametrize(
        "overrides",
        [
            {"downsample": "stride"},
            {"downsample": "avgpool"},
            {"downsample": "bicubic"},
            {"upsample": "nearest"},
            {"attention_mode": "regional"},
            {"attention_mode": "global"},
            {"shift_windows": False, "shuffle_heads": False},
        ],
    )
    def test_variants_build_and_run(self, rng, overrides):
        config = WFENConfig(tiny=True, **overrides)
        model, _ = build_model(config, seed=0)
        with no_grad():
            assert model(_input(rng)).shape == (1, 3, 16, 16)

    def test_invalid_input_lists_every_violation(self, tiny_config):
        model = WFENModel(tiny_config)
        with pytest.raises(ConfigError) as excinfo:
            model.validate_input((1, 4, 12, 12))
        assert len(excinfo.value.violations) == 2

    def test_non_batched_input_rejected(self, tiny_config):
        with pytest.raises(ConfigError):
            WFENModel(tiny_config).validate_input((3, 16, 16))

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError) as excinfo:
            WFENModel(WFENConfig(heads=[3, 2, 4, 4]))
        assert "heads[0]" in excinfo.value.violations[0]

    def test_parameter_report(self, tiny_config):
        model, store = build_model(tiny_config, seed=0)
        report = parameter_report(model)
        assert list(report) == list(COMPONENTS) + ["total"]
        assert report["total"] == store.param_count()
        assert all(report[name] > 0 for name in COMPONENTS)

    def test_wavelet_modules_change_parameter_count(self):
        wavelet = WFENModel(WFENConfig(tiny=True)).parameters().param_count()
        strided = WFENModel(WFENConfig(tiny=True, downsample="stride")).parameters().param_count()
        assert wavelet != strided

    def test_default_config_parameter_names_are_unique(self):
        names = [name for name, _, _ in WFENModel(WFENConfig()).named_parameters()]
        assert len(names) == len(set(names))
