"""Time the numba and numpy implementations of the hot kernels side by side.

    python benchmarks/bench_kernels.py [--repeat 5] [--quick]

The numba column is missing when numba is unavailable or disabled with
TACS_DISABLE_NUMBA / NUMBA_DISABLE_JIT.  The first numba call (compilation,
or loading from cache) is excluded from the timings.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from tacs import _accel


def cases(quick: bool):
    g = np.random.default_rng(7)
    L = 10
    shots = 100 if quick else 500
    codes_a = g.integers(0, 6, (shots, L)).astype(np.int64)
    codes_b = g.integers(0, 6, (shots, L)).astype(np.int64)
    block = g.integers(0, 6, (1000 if quick else 10_000, 5)).astype(np.int64)

    dim = 1 << L
    psi = g.normal(size=dim) + 1j * g.normal(size=dim)
    psi /= np.linalg.norm(psi)
    states = np.tile(psi, (256, 1))
    bases = g.integers(0, 3, (256, L)).astype(np.int64)
    u = g.random(256)

    steps_n = 2000 if quick else 20_000
    n = np.repeat(np.arange(1.0, 6.0), 3)
    inv_N = np.tile([1e-2, 1e-3, 1e-4], 5)
    y = 2.0 ** -n + 0.01 * g.normal(size=n.size) * inv_N
    x0 = np.log([1.0, 0.69, 1.0, 1.1, 1.0, 1.5])
    lo, hi = np.full(6, -12.0), np.full(6, 3.0)
    steps = 0.01 * g.normal(size=(steps_n, 6))
    log_u = np.log(g.random(steps_n))

    return {
        "pauli_expval": (psi, 0b1010, 0b0110),
        "sample_indices": (states, bases, u),
        "site_trace_sums": (codes_a, codes_b),
        "pair_class_hist": (codes_a, codes_b),
        "exp_pair_sum": (codes_a, codes_b, 0.1),
        "purity_pair_sum": (block,),
        "metropolis": (x0, n, inv_N, y, lo, hi, steps, log_u, False),
    }


def best_time(fn, args, repeat: int) -> float:
    fn(*args)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--quick", action="store_true", help="smaller inputs")
    args = parser.parse_args(argv)
    print(f"active backend: {_accel.BACKEND}")
    print(f"{'kernel':<18}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, fn_args in cases(args.quick).items():
        np_fn, nb_fn = _accel.IMPLEMENTATIONS[name]
        t_np = best_time(np_fn, fn_args, args.repeat)
        if _accel.USE_NUMBA and nb_fn is not None:
            t_nb = best_time(nb_fn, fn_args, args.repeat)
            print(f"{name:<18}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>9.1f}x")
        else:
            print(f"{name:<18}{1e3 * t_np:>12.3f}{'n/a':>12}{'':>10}")


if __name__ == "__main__":
    main()
