"""Time the compiled kernels against the pure-Python fallback.

Each kernel is called on fresh copies of the same inputs under both backends;
the best of ``--repeats`` runs is reported together with the speed-up. Two
library-level workloads (a thin SVD and a short FOM run) show the effect on
end-to-end cost.

    python3 benchmarks/bench_kernels.py --repeats 5
"""
import argparse
import math
import timeit

import numpy as np

from rpom import diagnostics, fom, kernels, linalg


def kernel_cases(rng, size):
    A = rng.standard_normal((size, size))
    spd = A @ A.T + size * np.eye(size)
    G = rng.standard_normal((size // 4, 4 * size))
    sched = linalg.round_robin_schedule(G.shape[0])
    D2 = diagnostics.squared_distances(rng.standard_normal((size, 8)))
    T = rng.random((size, size))
    ux, uy = rng.standard_normal((size, size + 1)), rng.standard_normal((size + 1, size))
    return {
        "jacobi_sweep": lambda k: k.jacobi_sweep(G.copy(), np.eye(G.shape[0]), sched, 1e-15),
        "cholesky": lambda k: k.cholesky(spd.copy(), 0.0),
        "lu_factor": lambda k: k.lu_factor(A.copy(), np.zeros(size, dtype=np.int64)),
        "perplexity_search": lambda k: k.perplexity_search(D2, math.log2(10.0), 1e-5, 200),
        "upwind_advection": lambda k: k.upwind_advection(T, ux, uy, 0.1, 0.1),
    }


def library_cases(rng):
    X = rng.standard_normal((400, 60))
    sc, sp = fom.heated_side(32, 32), fom.SolverParams(t_end=0.005)
    return {
        "thin_svd 400x60": lambda: linalg.thin_svd(X),
        "fom 32x32 t=0.005": lambda: fom.run_simulation(sc, sp, [60.0]),
    }


def best(fn, repeats):
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=128, help="matrix / grid size for kernel inputs")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the python backend is available")
    rng = np.random.default_rng(0)
    previous = kernels.BACKEND
    rows = []
    for name, call in kernel_cases(rng, args.size).items():
        times = {b: best(lambda: call(kernels.implementation(b)), args.repeats) for b in backends}
        rows.append((name, times))
    for name, call in library_cases(rng).items():
        times = {}
        for b in backends:
            kernels.use_backend(b)
            times[b] = best(call, max(1, args.repeats // 2))
        rows.append((name, times))
    kernels.use_backend(previous)

    print(f"{'workload':<22}" + "".join(f"{b + ' [ms]':>14}" for b in backends) + f"{'speed-up':>10}")
    for name, times in rows:
        line = f"{name:<22}" + "".join(f"{1e3 * times[b]:>14.3f}" for b in backends)
        if len(backends) == 2:
            line += f"{times['python'] / times['cython']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
