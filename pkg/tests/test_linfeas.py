"""Dense feasibility, least squares and numerical rank."""

import numpy as np
import pytest

from relugeo.datasets import PAPER_S
from relugeo.linfeas import LinearSystem, Status, least_squares, numerical_rank, solve_feasibility


class TestFeasibility:
    """Two-phase simplex on small systems."""

    def test_interval_feasible(self):
        res = solve_feasibility(LinearSystem(1, G=[[1.0], [-1.0]], h=[1.0, 0.0]))
        assert res.status is Status.FEASIBLE
        assert 0.0 <= res.witness[0] <= 1.0
        assert res.violation <= 1e-9

    def test_contradictory_bounds_infeasible(self):
        res = solve_feasibility(LinearSystem(1, G=[[1.0], [-1.0]], h=[-1.0, -1.0]))
        assert res.status is Status.INFEASIBLE
        assert res.witness is None

    def test_full_face_system(self):
        """s_i a + b >= 1 for all samples of (0, 1, 2)."""
        s = np.array([0.0, 1.0, 2.0])
        G = -np.column_stack([s, np.ones(3)])
        res = solve_feasibility(LinearSystem(2, G=G, h=-np.ones(3)))
        assert res.feasible
        assert np.all(np.column_stack([s, np.ones(3)]) @ res.witness >= 1 - 1e-9)

    def test_equalities_and_free_signs(self):
        sys = LinearSystem(2, E=[[1.0, 1.0]], f=[-3.0], G=[[1.0, 0.0]], h=[-5.0])
        res = solve_feasibility(sys)
        assert res.feasible
        np.testing.assert_allclose(res.witness.sum(), -3.0, atol=1e-9)
        assert res.witness[0] <= -5.0 + 1e-9

    def test_inconsistent_equalities(self):
        sys = LinearSystem(1, E=[[1.0], [1.0]], f=[0.0, 1.0])
        assert solve_feasibility(sys).status is Status.INFEASIBLE

    def test_empty_system(self):
        res = solve_feasibility(LinearSystem(3))
        np.testing.assert_array_equal(res.witness, np.zeros(3))

    def test_random_feasible_systems(self, rng):
        for _ in range(50):
            v, m = rng.integers(1, 5), rng.integers(1, 8)
            x0 = rng.normal(size=v)
            G = rng.normal(size=(m, v))
            h = G @ x0 + rng.uniform(0, 1, size=m)
            res = solve_feasibility(LinearSystem(v, G=G, h=h))
            assert res.feasible
            assert np.all(G @ res.witness <= h + 1e-9)

    def test_validation(self):
        with pytest.raises(ValueError):
            LinearSystem(2, G=[[1.0]], h=[0.0])
        with pytest.raises(ValueError):
            LinearSystem(1, G=[[np.nan]], h=[0.0])
        with pytest.raises(ValueError):
            solve_feasibility(LinearSystem(1), tol=0.0)


class TestLeastSquares:
    """Minimum-norm least squares."""

    def test_identity(self, rng):
        b = rng.normal(size=4)
        np.testing.assert_allclose(least_squares(np.eye(4), b), b)

    def test_mean(self):
        np.testing.assert_allclose(least_squares([[1.0], [1.0]], [0.0, 2.0]), [1.0])

    def test_minimum_norm_on_rank_deficient(self):
        np.testing.assert_allclose(least_squares([[1.0, 1.0]], [2.0]), [1.0, 1.0])


class TestNumericalRank:
    """Singular values above a relative threshold."""

    def test_identity(self):
        assert numerical_rank(np.eye(3)) == 3

    def test_augmented_sample(self):
        assert numerical_rank(np.hstack([PAPER_S, np.ones((6, 1))])) == 3

    def test_outer_product(self, rng):
        assert numerical_rank(np.outer(rng.normal(size=5), rng.normal(size=4))) == 1

    def test_zero_matrix(self):
        assert numerical_rank(np.zeros((3, 3))) == 0

    def test_bad_tolerance(self):
        with pytest.raises(ValueError):
            numerical_rank(np.eye(2), rel_tol=0.0)
