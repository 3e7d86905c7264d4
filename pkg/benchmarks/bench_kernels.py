"""Time the numba kernels against their numpy / pure-Python twins.

    python3 benchmarks/bench_kernels.py [--nodes 20000] [--degree 8] [--repeats 5]

Both variants are imported from the same module regardless of the
DNSASSOC_DISABLE_NUMBA flag, so one run compares them side by side.
The first numba call is made before timing so compilation is excluded.
"""
import argparse
import statistics
import time

import numpy as np

from dnsassoc import _kernels
from dnsassoc.bpinfer import BpGraph, homophily


def random_graph(n, degree, rng):
    m = n * degree // 2
    u = rng.integers(0, n, m)
    v = rng.integers(0, n, m)
    keep = u != v
    u, v = u[keep], v[keep]
    w = rng.uniform(0.5, 0.95, u.size)
    return u.astype(np.int64), v.astype(np.int64), w


def csr(n, u, v, w):
    from scipy.sparse import coo_matrix

    a = coo_matrix((np.r_[w, w], (np.r_[u, v], np.r_[v, u])), shape=(n, n)).tocsr()
    a.sum_duplicates()
    return a.indptr.astype(np.int64), a.indices.astype(np.int64), a.data.astype(np.float64)


def timed(fn, repeats):
    out = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=20000)
    ap.add_argument("--degree", type=int, default=8)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--sources", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(7)
    n = args.nodes
    u, v, w = random_graph(n, args.degree, rng)
    prior = np.tile([0.5, 0.5], (n, 1))
    prior[rng.choice(n, n // 20, replace=False)] = (0.01, 0.99)
    g = BpGraph(list(range(n)), prior, u, v, np.broadcast_to(homophily(0.05), (u.size, 2, 2)))
    src, dst, rev, psi = g.directed()
    logp = np.log(g.prior)
    msg = np.full((src.size, 2), 0.5)
    ip, ix, iw = csr(n, u, v, w)
    sources = rng.choice(n, args.sources, replace=False)

    # compile outside the timed region
    _kernels._bp_sweep_numba(src, dst, rev, logp, psi, msg)
    _kernels._maxprod_sssp_numba(ip, ix, iw, np.int64(0), 1e-6)

    rows = [
        ("bp_sweep", "numba", timed(lambda: _kernels._bp_sweep_numba(src, dst, rev, logp, psi, msg), args.repeats)),
        ("bp_sweep", "numpy", timed(lambda: _kernels._bp_sweep_numpy(src, dst, rev, logp, psi, msg), args.repeats)),
        ("maxprod_sssp", "numba", timed(lambda: [_kernels._maxprod_sssp_numba(ip, ix, iw, np.int64(s), 1e-6)
                                                  for s in sources], args.repeats)),
        ("maxprod_sssp", "python", timed(lambda: [_kernels._maxprod_sssp_python(ip, ix, iw, np.int64(s), 1e-6)
                                                   for s in sources], args.repeats)),
    ]
    a, da = _kernels._bp_sweep_numba(src, dst, rev, logp, psi, msg)
    b, db = _kernels._bp_sweep_numpy(src, dst, rev, logp, psi, msg)
    same = np.abs(a - b).max() < 1e-12 and np.array_equal(
        _kernels._maxprod_sssp_numba(ip, ix, iw, np.int64(sources[0]), 1e-6),
        _kernels._maxprod_sssp_python(ip, ix, iw, np.int64(sources[0]), 1e-6))

    print(f"graph: {n} nodes, {u.size} edges; repeats={args.repeats}; outputs agree: {same}")
    print(f"{'kernel':<14}{'backend':<8}{'median_s':>12}")
    for k, b_, t in rows:
        print(f"{k:<14}{b_:<8}{t:>12.5f}")
    for k in ("bp_sweep", "maxprod_sssp"):
        ts = [t for kk, _, t in rows if kk == k]
        print(f"{k}: numba speedup x{ts[1] / ts[0]:.1f}")


if __name__ == "__main__":
    main()
