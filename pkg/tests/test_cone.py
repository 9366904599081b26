"""The ReLU cone of a sample: dimension, membership and faces."""

import itertools

import numpy as np
import pytest

from relugeo.cone import (EnumerationCapError, NotRealizableError, cone_dim, cone_membership,
                          enumerate_faces, face_dim, pattern_witness, threshold_shift)
from relugeo.datasets import PAPER_S

S012 = np.array([[0.0], [1.0], [2.0]])


def brute_force_supports(S, grid=np.linspace(-3, 3, 121)):
    """Supports of relu(S a + b) over a dense grid of (a, b)."""
    S = np.asarray(S, dtype=float)
    found = set()
    for vals in itertools.product(grid, repeat=S.shape[1] + 1):
        a, b = np.array(vals[:-1]), vals[-1]
        found.add(frozenset(np.flatnonzero(S @ a + b > 1e-12).tolist()))
    return found


class TestConeDim:
    """Dimension equals the rank of the augmented sample."""

    def test_examples(self):
        assert cone_dim(PAPER_S) == 3
        assert cone_dim(np.zeros((4, 2))) == 1
        assert cone_dim(S012) == 2


class TestConeMembership:
    """Closed pointed cone: membership and witnesses."""

    def test_ones(self):
        res = cone_membership(PAPER_S, np.ones(6))
        assert res.member
        np.testing.assert_allclose(PAPER_S @ res.a + res.b, np.ones(6), atol=1e-9)

    def test_zero(self):
        assert cone_membership(PAPER_S, np.zeros(6)).member

    def test_negative_coordinate(self):
        assert not cone_membership(S012, [1.0, -0.5, 0.0]).member

    def test_non_member_shape(self):
        """On (0, 1, 2) a support {1, 3} without 2 is impossible."""
        assert not cone_membership(S012, [1.0, 0.0, 1.0]).member
        assert not cone_membership(S012, [0.0, 1.0, 0.0]).member

    def test_round_trip(self, rng):
        for _ in range(100):
            n, p = rng.integers(1, 8), rng.integers(1, 4)
            S = rng.normal(size=(n, p))
            x = np.maximum(S @ rng.normal(size=p) + rng.normal(), 0.0)
            res = cone_membership(S, x)
            assert res.member
            assert res.residual <= 2e-9
            np.testing.assert_allclose(np.maximum(S @ res.a + res.b, 0.0), x, atol=2e-9)

    def test_scaling_closed(self, rng):
        S = rng.normal(size=(6, 2))
        x = np.maximum(S @ rng.normal(size=2) + 0.3, 0.0)
        for c in (0.0, 1e-3, 7.0):
            assert cone_membership(S, c * x).member

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cone_membership(S012, np.ones(4))


class TestFaces:
    """Realizable support patterns."""

    def test_three_points(self):
        faces = enumerate_faces(S012)
        expected = {frozenset(), frozenset({0}), frozenset({0, 1}), frozenset({0, 1, 2}),
                    frozenset({2}), frozenset({1, 2})}
        assert set(faces.index_sets) == expected
        assert len(faces) == 6
        assert set(faces.index_sets) == brute_force_supports(S012)

    def test_face_witnesses_strict(self):
        M = np.hstack([S012, np.ones((3, 1))])
        for face in enumerate_faces(S012).faces:
            z = M @ np.append(face.a, face.b)
            inside = np.zeros(3, dtype=bool)
            inside[list(face.index_set)] = True
            assert np.all(z[inside] > 0) and np.all(z[~inside] <= 0)

    def test_single_sample(self):
        assert set(enumerate_faces([[0.7]]).index_sets) == {frozenset(), frozenset({0})}

    def test_generic_full_rank_all_subsets(self, rng):
        S = rng.normal(size=(4, 4))
        assert len(enumerate_faces(S)) == 16

    def test_matches_brute_force_two_dims(self, rng):
        S = rng.normal(size=(5, 1))
        assert set(enumerate_faces(S).index_sets) == brute_force_supports(S, np.linspace(-6, 6, 241))

    def test_duplicate_rows_move_together(self):
        S = np.array([[0.0], [1.0], [1.0]])
        for I in enumerate_faces(S).index_sets:
            assert (1 in I) == (2 in I)

    def test_cap(self):
        with pytest.raises(EnumerationCapError):
            enumerate_faces(np.arange(20.0)[:, None], cap=16)

    def test_pattern_witness(self):
        assert pattern_witness(S012, [1]) is None
        a, b = pattern_witness(S012, [1, 2])
        z = S012[:, 0] * a[0] + b
        assert z[0] <= 0 < min(z[1], z[2])


class TestFaceDim:
    """Dimension of the span of a face."""

    def test_full_face(self, rng):
        S = rng.normal(size=(6, 2))
        assert face_dim(S, range(6)) == cone_dim(S) == 3

    def test_empty_face(self):
        assert face_dim(S012, []) == 0

    def test_endpoint_ray(self):
        assert face_dim(S012, [2]) == 1

    def test_unrealizable(self):
        with pytest.raises(NotRealizableError):
            face_dim(S012, [0, 2])


class TestThresholdShift:
    """Shift that keeps the k largest entries."""

    def test_top_one(self):
        lam = threshold_shift([1.0, 2.0, 3.0], 1)
        assert 2.0 < lam < 3.0
        np.testing.assert_array_equal(np.flatnonzero(np.maximum(np.array([1, 2, 3]) - lam, 0)), [2])

    def test_all(self):
        assert threshold_shift([1.0, 2.0, 3.0], 3) < 1.0

    def test_random_supports(self, rng):
        x = rng.normal(size=7)
        for k in range(1, 8):
            support = np.flatnonzero(x - threshold_shift(x, k) > 0)
            np.testing.assert_array_equal(np.sort(support), np.sort(np.argsort(x)[-k:]))

    def test_errors(self):
        with pytest.raises(ValueError):
            threshold_shift([1.0, 1.0], 1)
        with pytest.raises(ValueError):
            threshold_shift([1.0, 2.0], 0)
