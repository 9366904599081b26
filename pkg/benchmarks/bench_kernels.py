"""Compare the compiled kernels with the numpy fallback.

Run from the repository root after installing the package::

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on the same inputs under both backends; the script reports
the best wall time of ``--repeat`` runs, the speedup and the largest
difference between the two outputs.
"""

import argparse
import time

import numpy as np

from relugeo import _kernels_py
from relugeo.datasets import PAPER_S, PAPER_T
from relugeo.oracle import grid_features

try:
    from relugeo import _kernels as _compiled
except ImportError:
    _compiled = None


def _best_time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        return np.inf
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))


def cases():
    rng = np.random.default_rng(0)
    widths = np.array([2, 2, 2], dtype=np.intp)
    theta = rng.normal(size=12)
    S, T = np.ascontiguousarray(PAPER_S), np.ascontiguousarray(PAPER_T)
    big_w = np.array([3, 16, 16, 2], dtype=np.intp)
    big_theta = rng.normal(size=3 * 16 + 16 + 16 * 16 + 16 + 16 * 2 + 2)
    big_S = rng.normal(size=(200, 3))
    big_T = rng.normal(size=(200, 2))
    U = grid_features(np.array([0.0, 1.0, 2.0, 3.0]), step=0.1)
    P = np.array([1.0, -2.0, 1.5, -0.5])
    P -= P.mean()
    return [
        ("forward 2-2-2, n=6", lambda k: k.forward(theta, widths, 0, S)),
        ("forward 3-16-16-2, n=200", lambda k: k.forward(big_theta, big_w, 1, big_S)),
        ("residual_jacobian 3-16-16-2", lambda k: k.residual_jacobian(
            big_theta, big_w, 1, big_S, big_T, None, False)[:2]),
        ("loss_grad 3-16-16-2", lambda k: k.loss_grad(big_theta, big_w, 1, big_S, big_T)),
        ("rprop 2000 iters, 2-2-2", lambda k: k.rprop(
            theta, widths, 0, S, T, 2000, 1e-2, 1e-12, 50.0, 1.2, 0.5, 1)),
        (f"pair_min_residual, {U.shape[0]} features", lambda k: k.pair_min_residual(U, P, 0.0)[0]),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _compiled is None:
        print("compiled kernels are not built; only the fallback is available")
    print(f"{'kernel':<36} {'python [s]':>11} {'cython [s]':>11} {'speedup':>8} {'max diff':>10}")
    for name, run in cases():
        t_py, out_py = _best_time(lambda: run(_kernels_py), args.repeat)
        if _compiled is None:
            print(f"{name:<36} {t_py:>11.4g} {'-':>11} {'-':>8} {'-':>10}")
            continue
        t_c, out_c = _best_time(lambda: run(_compiled), args.repeat)
        print(f"{name:<36} {t_py:>11.4g} {t_c:>11.4g} {t_py / t_c:>8.1f} "
              f"{_max_diff(out_py, out_c):>10.2g}")


if __name__ == "__main__":
    main()
