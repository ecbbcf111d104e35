"""Numba vs numpy timings for the hot kernels.

    python3 benchmarks/bench_kernels.py [--sizes 1000,10000] [--repeat 3]

Each kernel is run once untimed (JIT compile / cache load), then timed as
the best of ``--repeat`` runs. Outputs of the two variants are compared
before timing.
"""
import argparse
import time

import numpy as np

from comtransfer import kernels
from comtransfer._accel import HAVE_NUMBA
from comtransfer.sbm import sbm_generate


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, rng):
    blocks = max(2, n // 100)
    sizes = [n // blocks] * blocks
    # fixed average degree ~ 6 keeps 5-hop balls from covering the graph
    p_in = 5.0 / sizes[0]
    p_out = 1.0 / n
    g, _ = sbm_generate(sizes, p_in, p_out, feature_dim=16, seed=int(rng.integers(1 << 30)))
    indptr, indices = g.indptr, g.indices
    weights = np.ones(indices.size)
    labels = np.arange(g.n_nodes)
    x = rng.normal(size=(g.n_nodes, 32))
    cent = x[rng.choice(g.n_nodes, 16, replace=False)]
    return {
        "select_hops": (
            lambda: kernels._select_hops_nb(indptr, indices, 5),
            lambda: kernels._select_hops_np(indptr, indices, 5),
        ),
        "louvain_move": (
            lambda: kernels._louvain_move_nb(indptr, indices, weights, labels, 1e-12, 1000),
            lambda: kernels._louvain_move_np(indptr, indices, weights, labels, 1e-12, 1000),
        ),
        "assign_nearest": (
            lambda: kernels._assign_nb(x, cent),
            lambda: kernels._assign_np(x, cent),
        ),
    }


def same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(u, v) for u, v in zip(a, b))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="1000,10000")
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'n':>8}{'numba s':>12}{'numpy s':>12}{'speedup':>10}  agree")
    for n in (int(s) for s in args.sizes.split(",")):
        for name, (fast, slow) in cases(n, rng).items():
            agree = same(fast(), slow())
            t_nb = best_of(fast, args.repeat)
            t_np = best_of(slow, args.repeat)
            print(f"{name:<16}{n:>8}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>9.1f}x  {agree}")


if __name__ == "__main__":
    main()
