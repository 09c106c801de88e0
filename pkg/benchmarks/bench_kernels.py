"""Compare the numba-compiled kernels against the plain-python path.

Run twice to see both backends:

    python benchmarks/bench_kernels.py
    SEMSLAM_NO_NUMBA=1 python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from semslam import kernels
from semslam.kernels import _impl


def _time(fn, *args, repeat=5):
    fn(*args)  # warm-up (triggers compilation on the numba path)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<24}{'size':<14}{'active (ms)':>12}{'python (ms)':>12}{'speedup':>9}")
    for n, m in ((10, 30), (25, 75), (50, 150)):
        cost = rng.uniform(0.0, 100.0, size=(n, m))
        fast = _time(kernels.lap_solve, cost)
        slow = _time(_impl.lap_solve, cost)
        r1 = kernels.lap_solve(cost)
        r2 = _impl.lap_solve(cost)
        assert np.array_equal(r1[0], r2[0]) and abs(r1[3] - r2[3]) < 1e-9
        print(f"{'lap_solve':<24}{f'{n}x{m}':<14}{fast * 1e3:>12.3f}{slow * 1e3:>12.3f}{slow / fast:>9.1f}")
    for k, n in ((100, 100), (10000, 10000)):
        w = rng.dirichlet(np.ones(k))
        fast = _time(kernels.systematic_resample, w, n, 0.5)
        slow = _time(_impl.systematic_resample, w, n, 0.5)
        assert np.array_equal(kernels.systematic_resample(w, n, 0.5), _impl.systematic_resample(w, n, 0.5))
        print(f"{'systematic_resample':<24}{f'k={k}':<14}{fast * 1e3:>12.3f}{slow * 1e3:>12.3f}{slow / fast:>9.1f}")
    for n in (1000, 100000):
        diffs = rng.standard_normal((n, 3))
        prec = np.linalg.inv(np.diag([0.5, 1.0, 2.0]))
        fast = _time(kernels.mahalanobis_sq, diffs, prec)
        slow = _time(_impl.mahalanobis_sq, diffs, prec)
        assert np.allclose(kernels.mahalanobis_sq(diffs, prec), _impl.mahalanobis_sq(diffs, prec))
        print(f"{'mahalanobis_sq':<24}{f'n={n}':<14}{fast * 1e3:>12.3f}{slow * 1e3:>12.3f}{slow / fast:>9.1f}")


if __name__ == "__main__":
    main()
