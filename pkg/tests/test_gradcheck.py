"""Tests for finite-difference gradient verification"""

import numpy as np
import pytest

from wfen.config import WFENConfig
from wfen.errors import ConfigError, NumericalError
from wfen.gradcheck import LAYER_CASES, grad_check, grad_check_detailed, gradcheck_suite
from wfen.model import WFENModel
from wfen.nn import init_parameters
from wfen.tensor import Tensor, absolute, relu


class TestGradCheck:
    def test_square_at_three(self, f64):
        x = Tensor([3.0], requires_grad=True)
        assert grad_check(lambda: (x * x).sum(), {"x": x}, step_eps=1e-5) < 1e-6

    def test_constant_function(self, f64):
        x = Tensor([1.0, 2.0], requires_grad=True)
        assert grad_check(lambda: Tensor([2.0]).sum(), {"x": x}) == 0.0

    def test_relu_kink_is_reported_when_not_skipped(self, f64):
        x = Tensor([0.0], requires_grad=True)
        assert grad_check(lambda: relu(x).sum(), {"x": x}) == pytest.approx(1.0)

    def test_relu_kink_is_skipped(self, f64):
        x = Tensor([0.0, 1.0], requires_grad=True)
        result = grad_check_detailed(lambda: relu(x).sum(), {"x": x}, skip_kinks=True)
        assert result.skipped == 1
        assert result.coords == 1
        assert result.max_rel_error < 1e-8

    def test_abs_kink_is_skipped(self, f64):
        x = Tensor([1e-9, -2.0], requires_grad=True)
        result = grad_check_detailed(lambda: absolute(x).sum(), {"x": x}, skip_kinks=True)
        assert (result.skipped, result.coords) == (1, 1)

    def test_smooth_function_near_zero_is_not_skipped(self, f64):
        x = Tensor([1e-3, 0.0], requires_grad=True)
        result = grad_check_detailed(
            lambda: (x * x * x).sum(), {"x": x}, step_eps=1e-7, atol=1e-12, skip_kinks=True
        )
        assert result.skipped == 0
        assert result.coords == 2
        assert result.max_rel_error < 1e-6

    def test_kink_away_from_step_is_checked(self, f64):
        x = Tensor([1e-3, -1e-3], requires_grad=True)
        result = grad_check_detailed(lambda: relu(x).sum(), {"x": x}, skip_kinks=True)
        assert (result.skipped, result.coords) == (0, 2)
        assert result.max_rel_error < 1e-8

    def test_sampling_limits_coordinates(self, f64, rng):
        x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        result = grad_check_detailed(lambda: (x * x).sum(), {"x": x}, max_coords_per_param=3)
        assert result.coords == 3

    def test_perturbation_restores_values(self, f64, rng):
        values = rng.standard_normal((3, 3))
        x = Tensor(values.copy(), requires_grad=True)
        grad_check(lambda: (x * x).mean(), {"x": x})
        np.testing.assert_array_equal(x.data, values)

    def test_32_bit_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        with pytest.raises(NumericalError):
            grad_check(lambda: (x * x).sum(), {"x": x})


class TestSuite:
    def test_every_layer_within_tolerance(self):
        rows = gradcheck_suite("layers")
        assert [row.layer for row in rows] == list(LAYER_CASES)
        for row in rows:
            assert row.coords > 0, row.layer
            assert row.max_rel_error < 1e-5, row.layer

    def test_single_scope(self):
        rows = gradcheck_suite("dwt", seed=3)
        assert len(rows) == 1 and rows[0].layer == "dwt"

    def test_unknown_scope(self):
        with pytest.raises(ConfigError):
            gradcheck_suite("transformer")

    def test_suite_leaves_32_bit_default(self):
        gradcheck_suite("idwt")
        assert Tensor([1.0]).dtype == np.float32

    def test_smooth_layers_skip_nothing(self):
        smooth = ("conv", "conv_strided", "layer_norm", "dwt", "idwt", "bicubic")
        for name in smooth:
            (row,) = gradcheck_suite(name)
            assert row.skipped == 0, name

    def test_wavelet_chain_row(self):
        (row,) = gradcheck_suite("wavelet_chain")
        assert row.coords > 0
        assert row.max_rel_error < 1e-5

    def test_qk_norm_rows_present(self):
        assert {"rsa_qk_norm", "gsa_qk_norm", "wavelet_chain"} <= set(LAYER_CASES)

    @pytest.mark.slow
    def test_full_model_within_tolerance(self):
        (row,) = gradcheck_suite("model")
        assert row.max_rel_error < 1e-4
        store = init_parameters(WFENModel(WFENConfig(tiny=True)), seed=0)
        expected = 4 + sum(min(t.data.size, 4) for t in store.values())
        assert row.coords + row.skipped == expected
