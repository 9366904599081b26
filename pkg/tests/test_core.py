"""Activations, weight flattening, the weight map and its Jacobian."""

import numpy as np
import pytest

from relugeo.core import (Activation, KinkError, NetworkSpec, ShapeError, Weights, activate,
                          activate_deriv, forward, jacobian, weight_map, weight_norm)
from relugeo.datasets import PAPER_S, PAPER_T
from relugeo.erm import nonclosed_theta


class TestActivations:
    """Pointwise activations and their derivatives."""

    def test_relu_values(self):
        x = np.array([-2.0, 0.0, 3.0])
        np.testing.assert_array_equal(activate("relu", x), [0.0, 0.0, 3.0])

    def test_relu_derivative_zero_at_kink(self):
        np.testing.assert_array_equal(activate_deriv("relu", np.array([-1.0, 0.0, 1.0])),
                                      [0.0, 0.0, 1.0])

    def test_sigmoid_tanh_identity(self):
        x = np.linspace(-30, 30, 101)
        np.testing.assert_allclose(activate("sigmoid", x), 0.5 * (1 + np.tanh(x / 2)),
                                   rtol=1e-12, atol=1e-15)

    def test_sigmoid_no_overflow(self):
        with np.errstate(over="raise"):
            y = activate("sigmoid", np.array([-1000.0, 1000.0]))
        np.testing.assert_allclose(y, [0.0, 1.0])

    @pytest.mark.parametrize("kind", ["tanh", "sigmoid"])
    def test_smooth_derivative_matches_difference(self, kind):
        x = np.linspace(-4, 4, 41)
        h = 1e-6
        fd = (activate(kind, x + h) - activate(kind, x - h)) / (2 * h)
        np.testing.assert_allclose(activate_deriv(kind, x), fd, rtol=1e-7, atol=1e-10)

    def test_parse(self):
        assert Activation.parse("TANH") is Activation.TANH
        assert [a.code for a in Activation] == [0, 1, 2]
        with pytest.raises(ValueError):
            Activation.parse("gelu")


class TestSpecAndWeights:
    """Widths, parameter counts and the flat weight layout."""

    def test_param_count(self):
        assert NetworkSpec((2, 2, 2)).param_count == 12
        assert NetworkSpec((3, 16, 16, 2)).param_count == 64 + 272 + 34

    def test_invalid_widths(self):
        with pytest.raises(ValueError):
            NetworkSpec((2,))
        with pytest.raises(ValueError):
            NetworkSpec((2, 0, 1))

    def test_flat_round_trip(self, rng):
        spec = NetworkSpec((3, 4, 2))
        theta = rng.normal(size=spec.param_count)
        w = Weights.from_flat(spec, theta)
        w.check(spec)
        np.testing.assert_array_equal(w.flatten(), theta)
        np.testing.assert_allclose(w.norm(), np.linalg.norm(theta))

    def test_layout_is_row_major_then_bias(self):
        spec = NetworkSpec((2, 2, 1))
        w = Weights.from_flat(spec, np.arange(9.0))
        np.testing.assert_array_equal(w.layers[0][0], [[0, 1], [2, 3]])
        np.testing.assert_array_equal(w.layers[0][1], [4, 5])
        np.testing.assert_array_equal(w.layers[1][0], [[6, 7]])
        np.testing.assert_array_equal(w.layers[1][1], [8])

    def test_wrong_length_raises(self):
        with pytest.raises(ShapeError):
            Weights.from_flat(NetworkSpec((2, 2, 2)), np.zeros(11))

    def test_wrong_sample_width_raises(self):
        with pytest.raises(ShapeError):
            weight_map(NetworkSpec((2, 2, 2)), np.zeros(12), np.zeros((4, 3)))


class TestWeightMap:
    """Forward pass on the diverging two-layer example."""

    spec = NetworkSpec((2, 2, 2))

    def test_forward_single_samples(self):
        theta = nonclosed_theta(1)
        np.testing.assert_allclose(np.ravel(forward(self.spec, theta, [1.0, 0.0])), [-2.0, 1.0])
        np.testing.assert_allclose(np.ravel(forward(self.spec, theta, [1.0, 1.0])), [0.0, 1.0])

    def test_weight_map_rows(self):
        Y = weight_map(self.spec, nonclosed_theta(1), PAPER_S)
        expected = [[2, 0], [1, 0], [0, 0], [-2, 1], [-4, 2], [0, 1]]
        np.testing.assert_allclose(Y, expected, atol=1e-14)
        np.testing.assert_allclose(np.linalg.norm(Y - PAPER_T), np.sqrt(5.0))

    def test_norm(self):
        np.testing.assert_allclose(weight_norm(nonclosed_theta(1)), np.sqrt(17.0))

    def test_weights_object_and_flat_agree(self, rng):
        theta = rng.normal(size=12)
        np.testing.assert_array_equal(
            weight_map(self.spec, Weights.from_flat(self.spec, theta), PAPER_S),
            weight_map(self.spec, theta, PAPER_S))

    def test_linear_network(self, rng):
        spec = NetworkSpec((3, 2), "relu")
        theta = rng.normal(size=spec.param_count)
        S = rng.normal(size=(5, 3))
        A, b = theta[:6].reshape(2, 3), theta[6:]
        np.testing.assert_allclose(weight_map(spec, theta, S), S @ A.T + b)

    def test_positive_homogeneity_of_hidden_layer(self, rng):
        """Scaling a hidden unit's input weights by c > 0 and its output weights by 1/c."""
        spec = NetworkSpec((2, 3, 1))
        w = Weights.from_flat(spec, rng.normal(size=spec.param_count))
        (A1, b1), (A2, b2) = w.layers
        c = np.array([2.0, 0.5, 7.0])
        w2 = Weights(((A1 * c[:, None], b1 * c), (A2 / c, b2)))
        S = rng.normal(size=(8, 2))
        np.testing.assert_allclose(weight_map(spec, w2, S), weight_map(spec, w, S), rtol=1e-12)


class TestJacobian:
    """Analytic derivative of the vectorized weight map."""

    @pytest.mark.parametrize("kind", ["relu", "tanh", "sigmoid"])
    def test_matches_finite_difference(self, kind, rng):
        spec = NetworkSpec((2, 3, 3, 2), kind)
        S = rng.normal(size=(7, 2))
        theta = rng.normal(size=spec.param_count)
        J = jacobian(spec, theta, S)
        F = jacobian(spec, theta, S, mode="finite_difference")
        assert J.shape == (14, spec.param_count)
        np.testing.assert_allclose(J, F, rtol=1e-5, atol=1e-6)

    def test_kink_raises_with_location(self):
        spec = NetworkSpec((1, 1, 1))
        theta = np.array([1.0, 0.0, 1.0, 0.0])
        with pytest.raises(KinkError) as err:
            jacobian(spec, theta, np.array([[0.0], [1.0]]))
        assert err.value.locations == [(1, 0, 0)]

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            jacobian(NetworkSpec((1, 1)), np.zeros(2), np.zeros((1, 1)), mode="complex")
