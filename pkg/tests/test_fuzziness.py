import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fantf.errors import ParameterError
from fantf.fuzziness import (FuzzinessMode, FuzzTag, fuzz_term, gaussian_membership, learnable_sigmoid_membership,
                             scaled_noise, scaled_sigmoid_membership, uniform_pdf)
from fantf.gradcheck import grad_check_many
from fantf.rng import RngState
from fantf.tensor import Tensor, backward, mul, tensor_sum


class TestGaussianMembership:
    def test_peak(self):
        assert gaussian_membership(1.5, 1.5, 0.7) == 1.0

    def test_one_sigma(self):
        assert gaussian_membership(2.0 + 0.5, 2.0, 0.5) == pytest.approx(math.exp(-0.5), abs=1e-15)

    @given(st.floats(-10, 10), st.floats(0, 10), st.floats(0.1, 5))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_and_bounded(self, c, d, sigma):
        left, right = gaussian_membership(c - d, c, sigma), gaussian_membership(c + d, c, sigma)
        assert left == pytest.approx(right, rel=1e-12, abs=1e-300)
        assert 0.0 <= right <= 1.0

    def test_tensor_input(self):
        out = gaussian_membership(Tensor([0.0, 1.0]), 0.0, 1.0)
        np.testing.assert_allclose(out.data, [1.0, math.exp(-0.5)])


class TestLearnableSigmoid:
    def test_centre(self):
        assert learnable_sigmoid_membership(0.7, 0.7, 2.0) == 0.5

    def test_saturates(self):
        assert learnable_sigmoid_membership(1e6, 0.0, 1.0) == pytest.approx(1.0)

    def test_theta_gradients_match_finite_differences(self):
        t1, t2 = Tensor([0.3], requires_grad=True), Tensor([1.7], requires_grad=True)
        x = RngState(1).normal((5,))
        f = lambda: tensor_sum(mul(learnable_sigmoid_membership(Tensor(x), t1, t2), np.arange(5.0)))
        assert grad_check_many(f, [t1, t2]) < 1e-6

    @given(st.floats(-50, 50))
    @settings(max_examples=30, deadline=None)
    def test_bounded(self, x):
        assert 0.0 <= learnable_sigmoid_membership(x, 1.0, -0.5) <= 1.0


class TestScaledSigmoid:
    @given(st.floats(-100, 100), st.floats(0, 1), st.floats(0.1, 10))
    @settings(max_examples=50, deadline=None)
    def test_bounded(self, x, scale_, slope):
        assert 0.0 <= scaled_sigmoid_membership(x, scale_, slope) <= 1.0

    def test_scale_outside_unit_interval_rejected(self):
        with pytest.raises(ParameterError):
            FuzzinessMode(FuzzTag.SCALED_SIGMOID, scale=1.5)


class TestUniform:
    def test_density(self):
        assert uniform_pdf(1.0, 0.0, 2.0) == 0.5

    def test_outside_support(self):
        assert uniform_pdf(2.0 + 1e-9, 0.0, 2.0) == 0.0

    def test_integrates_to_one(self):
        xs = np.linspace(0.0, 2.0, 10_000)
        assert abs(np.trapezoid(uniform_pdf(xs, 0.0, 2.0), xs) - 1.0) < 1e-6


@pytest.mark.parametrize("kwargs", [
    dict(tag=FuzzTag.LEARNABLE_DELTA_GAUSSIAN, sigma=0.0),
    dict(tag=FuzzTag.GAUSSIAN_MEMBERSHIP, sigma=-1.0),
    dict(tag=FuzzTag.UNIFORM, a=1.0, b=1.0),
    dict(tag=FuzzTag.LEARNABLE_SIGMOID, theta2=0.0),
])
def test_invalid_modes_rejected(kwargs):
    with pytest.raises(ParameterError):
        FuzzinessMode(**kwargs)


class TestFuzzTerm:
    def test_none_is_zero(self):
        out = fuzz_term(FuzzinessMode(FuzzTag.NONE), (2, 3), RngState(0), True)
        assert np.all(out.data == 0)

    def test_zero_delta_is_zero(self):
        out = fuzz_term(FuzzinessMode(delta=0.0), (4, 4), RngState(0), True)
        assert np.all(out.data == 0)

    def test_inference_has_no_noise(self):
        out = fuzz_term(FuzzinessMode(delta=0.5), (4, 4), RngState(0), False)
        assert np.all(out.data == 0)

    def test_training_noise_is_scaled_gaussian(self):
        out = fuzz_term(FuzzinessMode(delta=0.5, sigma=2.0), (200, 200), RngState(3), True).data
        assert abs(out.std() - 1.0) < 0.02

    def test_seeded_noise_reproducible(self):
        a = fuzz_term(FuzzinessMode(), (3, 3), RngState(9), True).data
        b = fuzz_term(FuzzinessMode(), (3, 3), RngState(9), True).data
        assert np.array_equal(a, b)

    def test_training_noise_needs_rng(self):
        with pytest.raises(ParameterError):
            fuzz_term(FuzzinessMode(), (2, 2), None, True)

    def test_membership_modes_need_scores(self):
        with pytest.raises(ParameterError):
            fuzz_term(FuzzinessMode(FuzzTag.GAUSSIAN_MEMBERSHIP), (2, 2), None, True)

    def test_delta_gradient_is_noise_sum(self):
        delta = Tensor([0.2], requires_grad=True)
        noise = RngState(4).normal((3, 3))
        upstream = RngState(5).normal((3, 3))
        backward(tensor_sum(mul(scaled_noise(delta, noise), upstream)))
        assert delta.grad[0] == pytest.approx(float(np.sum(noise * upstream)), rel=1e-12)
