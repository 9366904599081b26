"""One-wide smooth chains on three samples."""

import numpy as np
import pytest

from relugeo.core import NetworkSpec, weight_map
from relugeo.datasets import TANH_S, TANH_T
from relugeo.erm import AttainmentClass
from relugeo.smooth import (chain_witness, default_chain_config, epsilon_grid,
                            epsilon_grid_analysis, isotonic_bound, suspected_fraction,
                            tanh_example_analysis)


class TestIsotonicBound:
    """Squared distance to the monotone vectors."""

    def test_peak(self):
        d, y = isotonic_bound([0.0, 2.0, 1.0])
        np.testing.assert_allclose(d, 0.5)
        np.testing.assert_allclose(y, [0.0, 1.5, 1.5])

    def test_descending_pair(self):
        d, y = isotonic_bound([1.0, 0.0])
        assert d == 0.0
        np.testing.assert_allclose(y, [1.0, 0.0])

    def test_idempotent(self, rng):
        for _ in range(20):
            _, y = isotonic_bound(rng.normal(size=5))
            d2, y2 = isotonic_bound(y)
            assert d2 <= 1e-24
            np.testing.assert_allclose(y2, y)

    def test_brute_force_three_points(self, rng):
        """Projection onto either monotone cone, checked against a fine search."""
        t = rng.normal(size=3)
        d, _ = isotonic_bound(t)
        g = np.linspace(-4, 4, 161)
        Y = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
        mono = np.all(np.diff(Y, axis=1) >= 0, axis=1) | np.all(np.diff(Y, axis=1) <= 0, axis=1)
        best = np.min(np.sum((Y[mono] - t) ** 2, axis=1))
        assert d <= best + 1e-12
        assert best - d < 0.01

    def test_empty(self):
        with pytest.raises(ValueError):
            isotonic_bound([])


class TestChainWitness:
    """Exact preimages of constant and strictly monotone targets."""

    @pytest.mark.parametrize("activation", ["tanh", "sigmoid"])
    @pytest.mark.parametrize("t", [[0.0, 1.0, 2.0], [3.0, 0.0, -0.1], [0.0, 1e-3, 5.0],
                                   [5.0, 5.0, 5.0], [-1.0, 2.0, 2.0001]])
    def test_reproduces_target(self, activation, t):
        theta = chain_witness(t, activation)
        y = weight_map(NetworkSpec((1, 1, 1), activation), theta, TANH_S).ravel()
        np.testing.assert_allclose(y, t, rtol=1e-9, atol=1e-9)

    @pytest.mark.parametrize("t", [[0.0, 2.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    def test_outside_image(self, t):
        assert chain_witness(t) is None


class TestChainAnalysis:
    """Fits against the monotone bound."""

    def test_center_not_attained(self):
        r = tanh_example_analysis(TANH_T)
        np.testing.assert_allclose(r.bound, 0.5)
        assert -1e-6 <= r.excess <= 1e-3
        assert r.best_norm >= 100.0
        assert r.witness is None
        assert r.classification is AttainmentClass.SUSPECTED_NON_ATTAINED

    def test_member_attained(self):
        r = tanh_example_analysis([0.0, 1.0, 2.0])
        assert r.best_loss <= 1e-10
        assert r.classification is AttainmentClass.LIKELY_ATTAINED

    def test_sigmoid_extension(self):
        r = tanh_example_analysis(TANH_T, activation="sigmoid")
        assert r.extension
        assert r.best_loss >= r.bound - 1e-9

    def test_relu_rejected(self):
        with pytest.raises(ValueError):
            tanh_example_analysis(TANH_T, activation="relu")

    def test_to_dict(self):
        r = tanh_example_analysis([5.0, 5.0, 5.0], default_chain_config(restarts=1, max_iters=200))
        d = r.to_dict()
        assert d["witness"] == [0.0, 0.0, 0.0, 5.0]
        assert d["activation"] == "tanh"


class TestEpsilonGrid:
    """Closed box grid around a target."""

    def test_size_and_bounds(self):
        P = epsilon_grid(TANH_T, 0.05, 5)
        assert P.shape == (125, 3)
        np.testing.assert_allclose(np.max(np.abs(P - TANH_T), axis=0), 0.05)

    def test_degenerate(self):
        np.testing.assert_array_equal(epsilon_grid(TANH_T, 0.0, 5), TANH_T[None, :])
        np.testing.assert_array_equal(epsilon_grid(TANH_T, 0.1, 1), TANH_T[None, :])

    def test_invalid(self):
        with pytest.raises(ValueError):
            epsilon_grid(TANH_T, -0.1, 3)
        with pytest.raises(ValueError):
            epsilon_grid(TANH_T, 0.1, 0)

    def test_order_independent(self, monkeypatch):
        cfg = default_chain_config(restarts=2, max_iters=500)
        monkeypatch.setenv("RELUGEO_THREADS", "1")
        serial = epsilon_grid_analysis(TANH_T, 0.05, 2, cfg)
        monkeypatch.setenv("RELUGEO_THREADS", "4")
        threaded = epsilon_grid_analysis(TANH_T, 0.05, 2, cfg)
        for a, b in zip(serial, threaded):
            np.testing.assert_array_equal(a.t, b.t)
            assert a.best_loss == b.best_loss
        single = tanh_example_analysis(serial[5].t, cfg)
        assert single.best_loss == serial[5].best_loss

    def test_suspected_fraction(self):
        assert suspected_fraction([]) == 0.0
