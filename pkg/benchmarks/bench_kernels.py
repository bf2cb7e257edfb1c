"""Compare the numba kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--n 100000]

Prints the best wall time per kernel and backend plus the speed-up, and
checks that both backends agree on every input they are timed on.
"""
import argparse
import timeit

import numpy as np
import scipy.sparse as sp

from graphon_sde import _kernels


def cases(n, seed=0):
    rs = np.random.default_rng(seed)
    keys = np.arange(n, dtype=np.uint64)
    ctr = np.full(n, 7, dtype=np.uint64)
    A = sp.random(n // 10, n // 10, density=50 / (n // 10), random_state=seed, format="csr")
    F = rs.normal(size=(n // 10, 3))
    x = rs.normal(size=(n, 1))
    b = rs.normal(size=(n, 1))
    s = rs.normal(size=(n, 1, 1))
    dw = rs.normal(size=(n, 1))
    P = max(n // 200, 1)
    a, c = rs.normal(size=(P, 201, 1)), rs.normal(size=(P, 201, 1))
    return {
        "hash_uniform": (3, 1, keys, ctr),
        "keyed_normal": (3, 1, keys, ctr),
        "csr_feature_sums": (A.indptr, A.indices, A.data, F),
        "euler_step": (x, b, s, dw, 0.01),
        "sup_gap": (a, c, 2.0),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--n", type=int, default=100_000)
    args = p.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':<18}{'numpy ms':>10}{'numba ms':>10}{'speed-up':>10}")
    for name, argv_ in cases(args.n).items():
        f_np, f_nb = _kernels.NUMPY_KERNELS[name], _kernels.NUMBA_KERNELS[name]
        r_np, r_nb = f_np(*argv_), f_nb(*argv_)  # also compiles
        np.testing.assert_allclose(r_np, r_nb, rtol=1e-12, atol=1e-14)
        t_np = min(timeit.repeat(lambda: f_np(*argv_), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: f_nb(*argv_), number=1, repeat=args.repeat))
        print(f"{name:<18}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>10.1f}x")


if __name__ == "__main__":
    main()
