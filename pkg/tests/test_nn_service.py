"""
Tests for architecture descriptors and the network engine
"""
import math

import numpy as np
import pytest
import torch

from app.core.exceptions import (
    ArchitectureError,
    LabelRangeError,
    NonFiniteGradientError,
    ParameterLengthError,
    ShapeMismatchError,
)
from app.models.architecture import ArchDescriptor, Conv3x3, Dense, MaxPool2x2, Output, kws_vgg
from app.services.nn_service import NNService

FD_ARCH = "in:16x16x1;c3x2-c3x2-c3x2-p2-c3x3-c3x3-p2-fc8-out3"


def count_params_by_hand(height, width, convs_and_pools, dense, classes):
    """Layer-by-layer oracle: conv 9*in*out+out, dense in*out+out"""
    total, channels = 0, 1
    for layer in convs_and_pools:
        if layer == "pool":
            height, width = height // 2, width // 2
        else:
            total += 9 * channels * layer + layer
            channels = layer
    fan_in = height * width * channels
    for neurons in dense + [classes]:
        total += fan_in * neurons + neurons
        fan_in = neurons
    return total


def loss_at(model, x, label, vector):
    NNService.params_load(model, vector)
    loss, _ = NNService.softmax_cross_entropy(NNService.forward(model, x), label)
    return loss


class TestArchDescriptor:

    def test_kws_layer_sequence(self):
        arch = kws_vgg(10)
        kinds = [type(layer) for layer in arch.layers]
        assert kinds == [Conv3x3] * 7 + [MaxPool2x2] + [Conv3x3] * 3 + [MaxPool2x2, Dense, Output]
        assert [layer.filters for layer in arch.layers if isinstance(layer, Conv3x3)] == [8, 8, 16, 16, 32, 32, 32, 64, 64, 64]
        assert arch.input_shape == (128, 128, 1)
        assert arch.num_classes == 10

    def test_kws_param_count_matches_oracle(self):
        expected = count_params_by_hand(
            128, 128, [8, 8, 16, 16, 32, 32, 32, "pool", 64, 64, 64, "pool"], [1000], 10
        )
        assert kws_vgg(10).param_count() == expected

    def test_descriptor_roundtrip(self):
        text = "in:128x128x1;c3x8-c3x8-c3x16-c3x16-c3x32-c3x32-c3x32-p2-c3x64-c3x64-c3x64-p2-fc1000-out12"
        assert ArchDescriptor.parse(text).to_string() == text

    def test_pool_underflow(self):
        with pytest.raises(ArchitectureError, match="underflows"):
            ArchDescriptor.parse("in:2x2x1;p2-p2-out2")

    def test_missing_output(self):
        with pytest.raises(ArchitectureError):
            ArchDescriptor.parse("in:4x4x1;c3x2-fc4")

    def test_output_not_last(self):
        with pytest.raises(ArchitectureError):
            ArchDescriptor.parse("in:4x4x1;out2-fc4")

    def test_conv_after_dense(self):
        with pytest.raises(ArchitectureError, match="follows a dense"):
            ArchDescriptor.parse("in:4x4x1;fc4-c3x2-out2")

    def test_unknown_token(self):
        with pytest.raises(ArchitectureError, match="unknown layer token"):
            ArchDescriptor.parse("in:4x4x1;c5x2-out2")

    def test_layer_shapes(self):
        shapes = ArchDescriptor.parse("in:16x8x1;c3x4-p2-c3x6-p2-fc5-out3").layer_shapes()
        assert shapes == [(16, 8, 4), (8, 4, 4), (8, 4, 6), (4, 2, 6), (5,), (3,)]


class TestBuildAndForward:

    def test_built_count_equals_descriptor(self):
        arch = kws_vgg(10, height=32, width=32)
        assert NNService.build_model(arch, seed=0).n_params == arch.param_count()

    def test_same_seed_bit_identical(self, small_arch):
        a = NNService.params_snapshot(NNService.build_model(small_arch, seed=7))
        b = NNService.params_snapshot(NNService.build_model(small_arch, seed=7))
        c = NNService.params_snapshot(NNService.build_model(small_arch, seed=8))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_adam_state_starts_zeroed(self, tiny_arch):
        model = NNService.build_model(tiny_arch, seed=0)
        assert model.step_count == 0
        assert np.all(model.adam_m == 0) and np.all(model.adam_v == 0)
        assert model.adam_m.shape == (model.n_params,)

    def test_zero_params_zero_logits(self, small_arch, rng):
        model = NNService.restore_model(small_arch, np.zeros(small_arch.param_count()))
        logits = NNService.forward(model, rng.random((16, 16)))
        assert np.array_equal(logits, np.zeros(4))

    def test_forward_deterministic(self, small_arch, rng):
        model = NNService.build_model(small_arch, seed=3)
        x = rng.random((16, 16))
        assert np.array_equal(NNService.forward(model, x), NNService.forward(model, x))

    def test_dense_toy_matches_hand_arithmetic(self):
        arch = ArchDescriptor.parse("in:1x2x1;fc1-out2")
        # fc1: W=[[1, -2]], b=[0.5]; out2: W=[[3], [-1]], b=[0.1, 0.2]
        model = NNService.restore_model(arch, np.array([1.0, -2.0, 0.5, 3.0, -1.0, 0.1, 0.2]))
        x = np.array([[2.0, 0.25]])
        hidden = max(0.0, 1.0 * 2.0 - 2.0 * 0.25 + 0.5)
        np.testing.assert_allclose(NNService.forward(model, x), [3.0 * hidden + 0.1, -hidden + 0.2], rtol=0, atol=1e-15)

    def test_shape_mismatch_names_both_shapes(self, tiny_arch):
        model = NNService.build_model(tiny_arch, seed=0)
        with pytest.raises(ShapeMismatchError, match=r"\(8, 8, 1\).*\(9, 8, 1\)"):
            NNService.forward(model, np.zeros((9, 8)))

    def test_predict_proba_rows_sum_to_one(self, small_arch, rng):
        model = NNService.build_model(small_arch, seed=0)
        probs = NNService.predict_proba(model, rng.random((5, 16, 16)), batch_size=2)
        assert probs.shape == (5, 4)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


class TestSoftmaxCrossEntropy:

    def test_uniform_logits(self):
        loss, _ = NNService.softmax_cross_entropy(np.zeros(7), 3)
        assert loss == pytest.approx(math.log(7), abs=1e-12)

    def test_saturated_true_class(self):
        loss, _ = NNService.softmax_cross_entropy(np.array([0.0, 1000.0, 0.0]), 1)
        assert loss < 1e-9

    def test_gradient_finite_differences(self, rng):
        for _ in range(5):
            logits = rng.normal(size=6) * 3
            label = int(rng.integers(0, 6))
            _, grad = NNService.softmax_cross_entropy(logits, label)
            numeric = np.zeros(6)
            for j in range(6):
                step = np.zeros(6)
                step[j] = 1e-6
                numeric[j] = (NNService.softmax_cross_entropy(logits + step, label)[0]
                              - NNService.softmax_cross_entropy(logits - step, label)[0]) / 2e-6
            np.testing.assert_allclose(grad, numeric, rtol=1e-6, atol=1e-9)
            assert abs(grad.sum()) < 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(LabelRangeError):
            NNService.softmax_cross_entropy(np.zeros(3), 3)


class TestBackward:

    def test_zero_grad_logits(self, small_arch, rng):
        model = NNService.build_model(small_arch, seed=0)
        grad = NNService.backward(model, rng.random((16, 16)), np.zeros(4))
        assert grad.shape == (model.n_params,)
        assert np.all(grad == 0)

    def test_dense_toy_outer_products(self):
        arch = ArchDescriptor.parse("in:1x3x1;out2")
        model = NNService.restore_model(arch, np.arange(8, dtype=np.float64) / 10)
        x = np.array([[1.0, -2.0, 0.5]])
        g = np.array([0.3, -0.7])
        grad = NNService.backward(model, x, g)
        np.testing.assert_allclose(grad[:6], np.outer(g, x[0]).reshape(-1), atol=1e-15)
        np.testing.assert_allclose(grad[6:], g, atol=1e-15)

    def test_grad_logits_length_checked(self, tiny_arch):
        with pytest.raises(ShapeMismatchError):
            NNService.backward(NNService.build_model(tiny_arch, seed=0), np.zeros((8, 8)), np.zeros(3))

    def test_every_parameter_matches_finite_differences(self, rng):
        """Conv, pool, dense and output layers on a 16x16 input"""
        arch = ArchDescriptor.parse(FD_ARCH)
        model = NNService.build_model(arch, seed=11)
        x = rng.random((16, 16))
        label = 1
        theta = NNService.params_snapshot(model)

        _, grad_logits = NNService.softmax_cross_entropy(NNService.forward(model, x), label)
        analytic = NNService.backward(model, x, grad_logits)

        h = 1e-5
        numeric = np.zeros_like(theta)
        for j in range(theta.size):
            plus, minus = theta.copy(), theta.copy()
            plus[j] += h
            minus[j] -= h
            numeric[j] = (loss_at(model, x, label, plus) - loss_at(model, x, label, minus)) / (2 * h)
        NNService.params_load(model, theta)

        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)


class TestAdam:

    def test_zero_grad_keeps_params(self, tiny_arch):
        model = NNService.build_model(tiny_arch, seed=0)
        before = NNService.params_snapshot(model)
        NNService.adam_step(model, np.zeros(model.n_params), 0.001)
        assert np.array_equal(NNService.params_snapshot(model), before)
        assert model.step_count == 1

    def test_first_step_hand_value(self):
        model = NNService.restore_model("in:1x1x1;out2", np.zeros(4))
        NNService.adam_step(model, np.ones(4), 0.001)
        np.testing.assert_allclose(NNService.params_snapshot(model), -0.001 / (1 + 1e-8), rtol=1e-12)
        np.testing.assert_allclose(model.adam_m, 0.1, rtol=1e-12)
        np.testing.assert_allclose(model.adam_v, 0.001, rtol=1e-12)

    def test_identical_runs_bit_identical(self, tiny_arch, rng):
        grads = [rng.normal(size=tiny_arch.param_count()) for _ in range(5)]
        results = []
        for _ in range(2):
            model = NNService.build_model(tiny_arch, seed=2)
            for g in grads:
                NNService.adam_step(model, g, 0.01)
            results.append(NNService.params_snapshot(model))
        assert np.array_equal(*results)

    def test_non_finite_grad(self, tiny_arch):
        model = NNService.build_model(tiny_arch, seed=0)
        grad = np.zeros(model.n_params)
        grad[3] = np.nan
        with pytest.raises(NonFiniteGradientError):
            NNService.adam_step(model, grad, 0.001)

    def test_wrong_length(self, tiny_arch):
        model = NNService.build_model(tiny_arch, seed=0)
        with pytest.raises(ParameterLengthError):
            NNService.adam_step(model, np.zeros(model.n_params + 1), 0.001)


class TestParamsView:

    def test_roundtrip(self, small_arch, rng):
        model = NNService.build_model(small_arch, seed=0)
        vector = rng.normal(size=model.n_params)
        NNService.params_load(model, vector)
        assert np.array_equal(NNService.params_snapshot(model), vector)

    def test_load_copies(self, tiny_arch):
        model = NNService.build_model(tiny_arch, seed=0)
        vector = np.zeros(model.n_params)
        NNService.params_load(model, vector)
        vector[:] = 5.0
        assert np.all(NNService.params_snapshot(model) == 0)

    def test_wrong_length(self, tiny_arch):
        with pytest.raises(ParameterLengthError):
            NNService.params_load(NNService.build_model(tiny_arch, seed=0), np.zeros(3))

    def test_snapshot_unaffected_by_step(self, tiny_arch):
        model = NNService.build_model(tiny_arch, seed=0)
        snapshot = NNService.params_snapshot(model)
        kept = snapshot.copy()
        NNService.adam_step(model, np.ones(model.n_params), 0.1)
        assert np.array_equal(snapshot, kept)
        assert not np.array_equal(NNService.params_snapshot(model), kept)

    def test_parameters_are_float64(self, tiny_arch):
        model = NNService.build_model(tiny_arch, seed=0)
        assert all(p.dtype == torch.float64 for p in model.parameters)
