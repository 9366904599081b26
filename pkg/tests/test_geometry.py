"""Image of two-layer ReLU networks: membership, distance and dimension."""

import numpy as np
import pytest

from relugeo.cone import EnumerationCapError
from relugeo.core import NetworkSpec, weight_map
from relugeo.datasets import PAPER_S, PAPER_T
from relugeo.erm import FitConfig
from relugeo.geometry import (Verdict, deep_chain_membership, deep_chain_orientation,
                              dim_upper_bound, fit_distance_2layer_q1, generate_monotone_sample,
                              generic_dim_2layer, generic_dim_is_heuristic,
                              membership_2layer_general, membership_2layer_q1,
                              numerical_image_dim)

S012 = np.array([[0.0], [1.0], [2.0]])


def _reconstruct(S, cert, d):
    spec = NetworkSpec((np.asarray(S).shape[1], d, 1))
    return weight_map(spec, cert.theta, S).ravel()


class TestMembershipQ1:
    """Exact pattern search for one output."""

    def test_constant(self, rng):
        S = rng.normal(size=(5, 2))
        cert = membership_2layer_q1(S, 5.0 * np.ones(5), 1)
        assert cert.verdict is Verdict.MEMBER
        np.testing.assert_allclose(cert.lam, 5.0)

    def test_peak_needs_two_units(self):
        t = np.array([0.0, 2.0, 1.0])
        assert membership_2layer_q1(S012, t, 1).verdict is Verdict.NON_MEMBER
        cert = membership_2layer_q1(S012, t, 2)
        assert cert.verdict is Verdict.MEMBER
        np.testing.assert_allclose(_reconstruct(S012, cert, 2), t, atol=1e-8)

    def test_witness_reconstructs(self, rng):
        for _ in range(20):
            n, p, d = rng.integers(2, 7), rng.integers(1, 3), rng.integers(1, 3)
            spec = NetworkSpec((p, d, 1))
            S = rng.normal(size=(n, p))
            t = weight_map(spec, rng.normal(size=spec.param_count), S).ravel()
            cert = membership_2layer_q1(S, t, d)
            assert cert.verdict is Verdict.MEMBER
            np.testing.assert_allclose(_reconstruct(S, cert, d), t, atol=1e-7)

    def test_bias_shift_and_scaling_invariance(self):
        for t in ([0.0, 2.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 3.0]):
            t = np.array(t)
            base = membership_2layer_q1(S012, t, 1).verdict
            assert membership_2layer_q1(S012, t + 3.7, 1).verdict is base
            if base is Verdict.MEMBER:
                for c in (-2.0, 0.0, 0.5):
                    assert membership_2layer_q1(S012, c * t, 1).verdict is Verdict.MEMBER

    def test_width_monotone(self, rng):
        S = rng.normal(size=(5, 1))
        for _ in range(10):
            t = rng.normal(size=5)
            if membership_2layer_q1(S, t, 1).member:
                assert membership_2layer_q1(S, t, 2).member

    def test_row_permutation(self, rng):
        S = rng.normal(size=(5, 1))
        for _ in range(10):
            t = rng.integers(-2, 3, size=5).astype(float)
            perm = rng.permutation(5)
            assert (membership_2layer_q1(S, t, 1).verdict
                    is membership_2layer_q1(S[perm], t[perm], 1).verdict)

    def test_cap(self):
        with pytest.raises(EnumerationCapError):
            membership_2layer_q1(np.arange(20.0)[:, None], np.zeros(20), 1, cap=16)


class TestDistanceQ1:
    """Attained distance to the one-output image."""

    def test_peak_single_unit(self):
        res = fit_distance_2layer_q1(S012, [0.0, 2.0, 1.0], 1)
        np.testing.assert_allclose(res.distance ** 2, 0.5, atol=1e-9)
        np.testing.assert_allclose(res.nearest, [0.0, 1.5, 1.5], atol=1e-5)

    def test_zero_target(self, rng):
        res = fit_distance_2layer_q1(rng.normal(size=(4, 2)), np.zeros(4), 2)
        assert res.distance <= 1e-9

    def test_member_target(self, rng):
        spec = NetworkSpec((1, 2, 1))
        S = rng.normal(size=(6, 1))
        t = weight_map(spec, rng.normal(size=spec.param_count), S).ravel()
        assert fit_distance_2layer_q1(S, t, 2).distance ** 2 <= 1e-6

    def test_nearest_is_member(self, rng):
        for _ in range(10):
            S = rng.normal(size=(5, 1))
            t = rng.normal(size=5)
            res = fit_distance_2layer_q1(S, t, 1)
            assert membership_2layer_q1(S, res.nearest, 1).member
            np.testing.assert_allclose(np.linalg.norm(res.nearest - t), res.distance, rtol=1e-6)


class TestMembershipGeneral:
    """Numeric membership for several outputs."""

    def test_identical_rows(self):
        T = np.tile([1.0, -2.0], (6, 1))
        cert = membership_2layer_general(PAPER_S, T, 2, FitConfig(restarts=2, max_iters=200))
        assert cert.verdict is Verdict.MEMBER_NUMERIC

    def test_realizable(self, rng):
        spec = NetworkSpec((2, 2, 2))
        S = rng.normal(size=(6, 2))
        T = weight_map(spec, rng.normal(size=spec.param_count), S)
        cert = membership_2layer_general(S, T, 2)
        assert cert.verdict is Verdict.MEMBER_NUMERIC
        assert cert.residual <= 1e-6

    def test_counterexample_never_non_member(self):
        cert = membership_2layer_general(PAPER_S, PAPER_T, 2)
        assert cert.verdict is Verdict.INCONCLUSIVE
        assert np.linalg.norm(cert.theta) <= 1e3 * (1 + 1e-9)


class TestDimension:
    """Upper bounds, generic formulas and Jacobian ranks."""

    def test_upper_bounds(self):
        assert dim_upper_bound(PAPER_S, 2, 1) == 7
        assert dim_upper_bound(PAPER_S, 2, 2) == 12
        assert dim_upper_bound(np.zeros((4, 2)), 1, 1) == 2

    def test_generic_formula(self):
        assert generic_dim_2layer(2, 2, 1, 10) == 7
        assert generic_dim_2layer(1, 2, 2, 50) == 10
        assert generic_dim_2layer(1, 1, 1, 6) == 3
        assert generic_dim_2layer(2, 2, 1, 6) is None
        assert generic_dim_is_heuristic(2) and not generic_dim_is_heuristic(1)

    def test_monotone_sample_rank(self):
        S = generate_monotone_sample(7, 1, seed=3)
        rep = numerical_image_dim(NetworkSpec((1, 2, 1)), S, trials=20, seed=0)
        assert rep.numerical_rank_max == 5
        assert rep.generic_formula == 5

    def test_zero_sample(self):
        rep = numerical_image_dim(NetworkSpec((2, 2, 1)), np.zeros((5, 2)), trials=10)
        assert rep.numerical_rank_max == 1

    def test_rank_below_bound(self, rng):
        for i in range(20):
            n, p = rng.integers(2, 9), rng.integers(1, 4)
            S = rng.normal(size=(n, p))
            if i % 2:
                S[:, -1] = S[:, 0]
            rep = numerical_image_dim(NetworkSpec((p, 2, 1)), S, trials=5, seed=i)
            assert rep.numerical_rank_max <= dim_upper_bound(S, 2, 1)

    def test_report_fields(self):
        rep = numerical_image_dim(NetworkSpec((1, 1, 1)), generate_monotone_sample(6), trials=4, seed=7)
        assert rep.trials == 4 and rep.seed == 7
        assert sum(rep.histogram.values()) + rep.skipped == 4


class TestMonotoneSample:
    """Strictly increasing random columns."""

    def test_columns_increase(self):
        for seed in range(100):
            S = generate_monotone_sample(5, 2, seed)
            assert np.all(np.diff(S, axis=0) > 0)

    def test_deterministic(self):
        np.testing.assert_array_equal(generate_monotone_sample(4, 3, 9),
                                      generate_monotone_sample(4, 3, 9))

    def test_rejects_short(self):
        with pytest.raises(ValueError):
            generate_monotone_sample(1)


class TestDeepChain:
    """Clipped affine images for one-wide deep chains."""

    s = np.array([1.0, 2.0, 3.0, 4.0])

    def test_clipped_identity(self):
        assert deep_chain_orientation(self.s, [2.0, 2.0, 3.0, 3.0]) == "ascending"

    def test_identity(self):
        assert deep_chain_membership(self.s, self.s)

    def test_nonmonotone(self):
        assert not deep_chain_membership(self.s, [0.0, 2.0, 1.0, 3.0])

    def test_descending(self):
        assert deep_chain_orientation(self.s, [5.0, 5.0, 1.0, -3.0]) == "descending"

    def test_non_affine_middle(self):
        assert not deep_chain_membership(self.s, [0.0, 1.0, 3.0, 6.0])

    def test_constant(self):
        assert deep_chain_membership(self.s, [2.0, 2.0, 2.0, 2.0])

    def test_unsorted_sample(self):
        with pytest.raises(ValueError):
            deep_chain_membership([2.0, 1.0], [0.0, 0.0])
