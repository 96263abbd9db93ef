"""Timing comparison of the jitted and pure-numpy solver kernels.

Runs the exact enumeration kernel and the greedy sweep on fixed random
instances against both backends and prints per-call times plus the
speedup. Works (and says so) when numba is not installed; the jitted
rows are then skipped.

Usage: python3 benchmarks/bench_solvers.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from relaysim import kernels


def best_time(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_exact(rng: np.random.Generator, repeat: int):
    b = rng.integers(0, 11, size=(7, 7)).astype(np.float64)
    caps = rng.integers(5, 30, size=7).astype(np.float64)
    rows = []
    t_np = best_time(lambda: kernels.exact_best_numpy(b, caps), repeat)
    rows.append(("exact 7x7 (numpy)", t_np, kernels.exact_best_numpy(b, caps)))
    if kernels.NUMBA_AVAILABLE:
        kernels.exact_best_numba(b, caps)    # compile outside the timer
        t_nb = best_time(lambda: kernels.exact_best_numba(b, caps), repeat)
        result = kernels.exact_best_numba(b, caps)
        rows.append(("exact 7x7 (numba)", t_nb,
                     (int(result[0]), float(result[1]))))
    return rows


def bench_greedy(rng: np.random.Generator, repeat: int):
    n, m = 3000, 800
    b = rng.uniform(0.0, 10.0, size=(n, m))
    caps = rng.uniform(20.0, 120.0, size=m)
    flat_order = np.argsort(-b.ravel(), kind="stable")

    def run_backend(loop):
        assign = np.full(n, -1, dtype=np.int64)
        loop(flat_order, b, assign, caps.copy())
        return assign

    rows = []
    t_np = best_time(lambda: run_backend(kernels._greedy_loop_numpy), repeat)
    a_np = run_backend(kernels._greedy_loop_numpy)
    rows.append((f"greedy {n}x{m} (numpy)", t_np, int((a_np >= 0).sum())))
    if kernels.NUMBA_AVAILABLE:
        run_backend(kernels._greedy_numba)   # compile outside the timer
        t_nb = best_time(lambda: run_backend(kernels._greedy_numba), repeat)
        a_nb = run_backend(kernels._greedy_numba)
        assert np.array_equal(a_np, a_nb), "backends disagree"
        rows.append((f"greedy {n}x{m} (numba)", t_nb, int((a_nb >= 0).sum())))
    return rows


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5,
                    help="timing repetitions per kernel (best is reported)")
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    print(f"active backend: {kernels.backend()}")
    if not kernels.NUMBA_AVAILABLE:
        print("numba unavailable (or disabled via RELAYSIM_NUMBA=0); "
              "timing the numpy fallback only")
    groups = [bench_exact(rng, args.repeat), bench_greedy(rng, args.repeat)]
    for rows in groups:
        for label, t, check in rows:
            print(f"  {label:<24} {t * 1e3:9.2f} ms   result={check}")
        if len(rows) == 2:
            assert rows[0][2] == rows[1][2] or "greedy" in rows[0][0]
            print(f"  -> numba speedup: {rows[0][1] / rows[1][1]:.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
