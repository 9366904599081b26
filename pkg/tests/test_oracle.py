"""Dense-grid reference search."""

import numpy as np

from relugeo.geometry import Verdict, membership_2layer_q1
from relugeo.oracle import grid_features, grid_residual

S = np.array([0.0, 1.0, 2.0])


class TestGridOracle:
    """Grid features and best residuals."""

    def test_features_unit_and_centred(self):
        U = grid_features(S, step=0.5)
        np.testing.assert_allclose(np.linalg.norm(U, axis=1), 1.0)
        np.testing.assert_allclose(U.sum(axis=1), 0.0, atol=1e-10)

    def test_zero_width(self):
        np.testing.assert_allclose(grid_residual(grid_features(S), [0.0, 2.0, 1.0], 0), np.sqrt(2.0))

    def test_peak(self):
        U = grid_features(S)
        np.testing.assert_allclose(grid_residual(U, [0.0, 2.0, 1.0], 1), np.sqrt(0.5), atol=1e-6)
        assert grid_residual(U, [0.0, 2.0, 1.0], 2) < 1e-9

    def test_agrees_with_exact(self):
        U = grid_features(S)
        for t in ([0.0, 1.0, 3.0], [1.0, 0.0, 1.0], [2.0, -1.0, 0.0]):
            exact = membership_2layer_q1(S[:, None], np.array(t), 1).verdict
            r = grid_residual(U, t, 1)
            assert (r < 1e-3) == (exact is Verdict.MEMBER)
