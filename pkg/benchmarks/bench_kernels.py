"""Benchmark the numba study kernels against the pure-numpy fallback.

The random-instance study integrates batches of damped sphere-chart
trajectories with fixed-step RK4; that loop is the package's hot kernel and
carries a numba @njit implementation with a numpy fallback selected by
QRHD_DISABLE_NUMBA=1.  This script times both paths on the same workload.

Run:  python benchmarks/bench_kernels.py
"""

import os
import time

import numpy as np

from qrhd import RandomInstance
from qrhd import _kernels


def workload(dim, instances, gamma, t_end, dt, seed=42):
    children = np.random.SeedSequence(seed).spawn(instances)
    draws = [RandomInstance.draw(dim, np.random.default_rng(s)) for s in children]
    A = np.stack([d.matrix for d in draws])
    pos0 = np.stack([d.initial_position for d in draws])
    vel0 = np.zeros_like(pos0)
    n_steps = int(np.ceil(t_end / dt))
    return pos0, vel0, A, n_steps


def run_path(disable_numba, args, dt):
    if disable_numba:
        os.environ["QRHD_DISABLE_NUMBA"] = "1"
    else:
        os.environ.pop("QRHD_DISABLE_NUMBA", None)
    pos0, vel0, A, n_steps = args
    t0 = time.time()
    _kernels.integrate_sphere_batch(pos0, vel0, A, 1.0, 1.0, 1.0, 1.0, dt,
                                    n_steps, stride=10)
    return time.time() - t0


def main():
    print(f"{'case':28s} {'numba':>10s} {'numpy':>10s} {'speedup':>8s}")
    cases = [
        ("N=5, 20 inst, t_end=10", 5, 20, 10.0),
        ("N=5, 100 inst, t_end=10", 5, 100, 10.0),
        ("N=9, 100 inst, t_end=10", 9, 100, 10.0),
    ]
    dt = 1e-3
    # trigger compilation outside the timings
    warm = workload(5, 2, 1.0, 0.05, dt)
    run_path(False, warm, dt)
    for label, dim, inst, t_end in cases:
        args = workload(dim, inst, 1.0, t_end, dt)
        t_numba = run_path(False, args, dt)
        t_numpy = run_path(True, args, dt)
        os.environ.pop("QRHD_DISABLE_NUMBA", None)
        print(f"{label:28s} {t_numba:9.2f}s {t_numpy:9.2f}s {t_numpy / t_numba:7.1f}x")


if __name__ == "__main__":
    main()
