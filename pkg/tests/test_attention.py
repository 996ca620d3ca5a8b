import numpy as np
import pytest

from fantf.attention import (MASK_VALUE, AttentionConfig, FuzzyAttentionLayer, apply_causal_mask, attend,
                             causal_mask, fuzzy_scores, project_qkv)
from fantf.errors import ContractError, DimensionError
from fantf.fuzziness import FuzzinessMode, FuzzTag
from fantf.gradcheck import grad_check_many
from fantf.rng import RngState
from fantf.selftest import reference_attention
from fantf.tensor import Tensor, mul, softmax_lastdim, tensor_sum


def make_layer(rng, d=4, heads=2, delta=0.1, causal=False, dropout=0.0, tag=FuzzTag.LEARNABLE_DELTA_GAUSSIAN):
    cfg = AttentionConfig(d, heads, dropout, causal, FuzzinessMode(tag, delta=delta))
    return FuzzyAttentionLayer.init(cfg, rng)


class TestConfig:
    def test_heads_must_divide_model_width(self):
        with pytest.raises(ContractError):
            AttentionConfig(6, 4)

    def test_dropout_below_one(self):
        with pytest.raises(ContractError):
            AttentionConfig(4, 2, dropout_p=1.0)

    def test_delta_listed_once(self):
        names = [n for n, _ in make_layer(RngState(0), heads=4).named_parameters()]
        assert names.count("delta") == 1

    def test_weight_shapes_checked(self):
        cfg = AttentionConfig(4, 2)
        good = Tensor(np.zeros((4, 4)))
        with pytest.raises(DimensionError):
            FuzzyAttentionLayer(cfg, good, good, good, Tensor(np.zeros((4, 3))))


class TestProjection:
    def test_identity_projection_single_head(self):
        layer = make_layer(RngState(1), heads=1)
        layer.w_q = Tensor(np.eye(4))
        s = RngState(2).normal((2, 3, 4))
        q, _, _ = project_qkv(layer, s)
        np.testing.assert_array_equal(q.data[:, 0], s)

    def test_zero_input(self):
        q, k, v = project_qkv(make_layer(RngState(3)), np.zeros((2, 3, 4)))
        assert all(np.all(t.data == 0) for t in (q, k, v))

    def test_head_slices_reassemble(self):
        layer = make_layer(RngState(4), d=6, heads=2)
        s = RngState(5).normal((2, 3, 6))
        q, _, _ = project_qkv(layer, s)
        rebuilt = np.concatenate([q.data[:, 0], q.data[:, 1]], axis=-1)
        np.testing.assert_allclose(rebuilt, s @ layer.w_q.data, atol=1e-14)


class TestScores:
    def test_zero_delta_is_vanilla(self):
        rng = RngState(6)
        q, k = Tensor(rng.normal((1, 2, 3, 4))), Tensor(rng.normal((1, 2, 3, 4)))
        out = fuzzy_scores(q, k, Tensor([0.0]), FuzzinessMode(delta=0.0), RngState(1), True)
        np.testing.assert_array_equal(out.data, q.data @ np.swapaxes(k.data, -1, -2) / 2.0)

    def test_unit_vector_score(self):
        q = Tensor(np.ones((1, 1, 1, 1)))
        out = fuzzy_scores(q, q, Tensor([0.0]), FuzzinessMode(FuzzTag.NONE))
        assert out.data.item() == 1.0

    def test_seeded_noise_repeats(self):
        rng = RngState(7)
        q, k = Tensor(rng.normal((1, 1, 3, 2))), Tensor(rng.normal((1, 1, 3, 2)))
        a = fuzzy_scores(q, k, Tensor([0.5]), FuzzinessMode(), RngState(8), True).data
        b = fuzzy_scores(q, k, Tensor([0.5]), FuzzinessMode(), RngState(8), True).data
        assert np.array_equal(a, b)
        assert not np.array_equal(a, fuzzy_scores(q, k, Tensor([0.5]), FuzzinessMode()).data)


class TestCausalMask:
    def test_single_token_unchanged(self):
        s = Tensor([[[[3.0]]]])
        assert np.array_equal(apply_causal_mask(s).data, s.data)

    def test_two_tokens(self):
        out = apply_causal_mask(Tensor(np.ones((1, 1, 2, 2)))).data[0, 0]
        assert out.tolist() == [[1.0, MASK_VALUE], [1.0, 1.0]]
        assert causal_mask(2).tolist() == [[False, True], [False, False]]

    def test_first_row_attends_to_itself(self):
        w = softmax_lastdim(apply_causal_mask(Tensor(RngState(9).normal((1, 1, 2, 2))))).data
        assert w[0, 0, 0].tolist() == [1.0, 0.0]


class TestAttend:
    def test_single_head_vanilla_oracle(self):
        rng = RngState(10)
        layer = make_layer(rng, d=4, heads=1, delta=0.0)
        x = rng.normal((3, 5, 4))
        got = attend(layer, x).output.data
        want = reference_attention(x, layer.w_q.data, layer.w_k.data, layer.w_v.data, layer.w_o.data, 1)
        np.testing.assert_allclose(got, want, atol=1e-10, rtol=0)

    def test_causal_vanilla_oracle(self):
        rng = RngState(11)
        layer = make_layer(rng, d=6, heads=3, delta=0.0, causal=True)
        x = rng.normal((2, 4, 6))
        want = reference_attention(x, layer.w_q.data, layer.w_k.data, layer.w_v.data, layer.w_o.data, 3, causal=True)
        np.testing.assert_allclose(attend(layer, x).output.data, want, atol=1e-10, rtol=0)

    def test_constant_values(self):
        layer = make_layer(RngState(12), delta=1.0)
        layer.w_v = Tensor(np.zeros((4, 4)))
        layer.w_o = Tensor(np.eye(4))
        out = attend(layer, RngState(13).normal((2, 3, 4)), RngState(0), training=True).output.data
        assert np.all(out == 0)

    def test_single_token_is_value_path(self):
        layer = make_layer(RngState(14), delta=2.0)
        x = RngState(15).normal((2, 1, 4))
        out = attend(layer, x, RngState(1), training=True).output.data
        np.testing.assert_allclose(out, x @ layer.w_v.data @ layer.w_o.data, atol=1e-14)

    def test_rows_stochastic_with_noise(self):
        layer = make_layer(RngState(16), delta=3.0)
        w = attend(layer, RngState(17).normal((2, 5, 4)), RngState(2), training=True).weights.data
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)

    def test_dropout_only_in_training(self):
        layer = make_layer(RngState(18), delta=0.0, dropout=0.5)
        x = RngState(19).normal((2, 4, 4))
        ref = reference_attention(x, layer.w_q.data, layer.w_k.data, layer.w_v.data, layer.w_o.data, 2)
        np.testing.assert_allclose(attend(layer, x, RngState(3), training=False).output.data, ref, atol=1e-12)
        assert not np.allclose(attend(layer, x, RngState(3), training=True).output.data, ref)

    def test_delta_gradient_with_frozen_noise(self):
        layer = make_layer(RngState(20), delta=0.4)
        x = RngState(21).normal((2, 3, 4)) * 2
        w = RngState(22).normal((2, 3, 4))
        f = lambda: tensor_sum(mul(attend(layer, x, RngState(5), training=True).output, w))
        assert grad_check_many(f, [layer.delta, layer.w_q, layer.w_k, layer.w_v, layer.w_o]) < 1e-4

    def test_learnable_sigmoid_mode_has_thetas(self):
        layer = make_layer(RngState(23), tag=FuzzTag.LEARNABLE_SIGMOID)
        names = [n for n, _ in layer.named_parameters()]
        assert "theta1" in names and "theta2" in names
        x = RngState(24).normal((1, 3, 4))
        f = lambda: tensor_sum(attend(layer, x).output)
        assert grad_check_many(f, [layer.theta1, layer.theta2]) < 1e-4

    @pytest.mark.parametrize("tag", [FuzzTag.GAUSSIAN_MEMBERSHIP, FuzzTag.SCALED_SIGMOID, FuzzTag.UNIFORM])
    def test_membership_modes_run(self, tag):
        layer = make_layer(RngState(25), tag=tag)
        out = attend(layer, RngState(26).normal((2, 3, 4)), RngState(1), training=True)
        assert out.output.shape == (2, 3, 4)
        np.testing.assert_allclose(out.weights.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_bad_input_shape(self):
        with pytest.raises(DimensionError):
            attend(make_layer(RngState(27)), np.zeros((2, 3, 5)))
