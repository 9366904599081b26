"""Compiled kernels agree with the numpy fallback."""

import os
import subprocess
import sys

import numpy as np
import pytest

from relugeo import _backend, _kernels_py
from relugeo.datasets import PAPER_S, PAPER_T
from relugeo.oracle import grid_features

compiled = pytest.importorskip("relugeo._kernels")

WIDTHS = np.array([2, 3, 2], dtype=np.intp)


@pytest.fixture
def case(rng):
    theta = rng.normal(size=(2 * 3 + 3) + (3 * 2 + 2))
    return theta, np.ascontiguousarray(PAPER_S), np.ascontiguousarray(PAPER_T)


class TestKernelEquivalence:
    """Same outputs from both backends."""

    @pytest.mark.parametrize("code", [0, 1, 2])
    def test_forward(self, case, code):
        theta, S, _ = case
        np.testing.assert_allclose(compiled.forward(theta, WIDTHS, code, S),
                                   _kernels_py.forward(theta, WIDTHS, code, S), rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("code", [0, 1, 2])
    def test_residual_jacobian(self, case, code):
        theta, S, T = case
        a = compiled.residual_jacobian(theta, WIDTHS, code, S, T, None, False)
        b = _kernels_py.residual_jacobian(theta, WIDTHS, code, S, T, None, False)
        for x, y in zip(a[:2], b[:2]):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-13)

    @pytest.mark.parametrize("code", [0, 1])
    def test_loss_grad(self, case, code):
        theta, S, T = case
        la, ga = compiled.loss_grad(theta, WIDTHS, code, S, T)
        lb, gb = _kernels_py.loss_grad(theta, WIDTHS, code, S, T)
        np.testing.assert_allclose(la, lb, rtol=1e-12)
        np.testing.assert_allclose(ga, gb, rtol=1e-10, atol=1e-12)

    def test_rprop(self, case):
        theta, S, T = case
        args = (WIDTHS, 1, S, T, 200, 1e-2, 1e-12, 50.0, 1.2, 0.5, 1)
        a = compiled.rprop(theta.copy(), *args)
        b = _kernels_py.rprop(theta.copy(), *args)
        np.testing.assert_allclose(a[0], b[0], rtol=1e-8, atol=1e-10)

    def test_pair_min_residual(self):
        U = grid_features(np.array([0.0, 1.0, 2.0, 3.0]), step=0.25)
        P = np.array([1.0, -2.0, 1.5, -0.5])
        P -= P.mean()
        np.testing.assert_allclose(compiled.pair_min_residual(U, P, 0.0)[0],
                                   _kernels_py.pair_min_residual(U, P, 0.0)[0], rtol=1e-10, atol=1e-14)


class TestSelection:
    """The environment switch forces the fallback."""

    def test_default_is_compiled(self):
        if os.environ.get("RELUGEO_PURE_PYTHON"):
            pytest.skip("fallback forced for this session")
        assert _backend.name == "cython"

    def test_pure_python_switch(self):
        env = dict(os.environ, RELUGEO_PURE_PYTHON="1")
        out = subprocess.run([sys.executable, "-c", "from relugeo import _backend; print(_backend.name)"],
                             env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "python"

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv("RELUGEO_THREADS", "3")
        assert _backend.max_workers() == 3
        monkeypatch.setenv("RELUGEO_THREADS", "junk")
        assert _backend.max_workers() >= 1
