"""Time the compiled kernels against their numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--nodes N]
Compiled rows are skipped when numba is unavailable.
"""

import argparse
import timeit

import numpy as np

from qcausal import _kernels
from qcausal.graphs import random_dag


def _workloads(rng, n_nodes):
    g = random_dag(rng, n_nodes, 0.35)
    adj = np.ascontiguousarray(g.adjacency(), dtype=np.bool_)
    n = adj.shape[0]
    masks = []
    for _ in range(64):
        labels = rng.integers(0, 4, size=n)  # 0 rest, 1 Y, 2 Z, 3 W
        labels[0], labels[1] = 1, 2
        masks.append(tuple(labels == k for k in (1, 2, 3)))
    tables = [t / t.sum() for t in rng.random(size=(64, 4, 4, 8))]
    return adj, masks, tables


def bench(label, fn, repeat):
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    print(f"{label:<28s} {best * 1e3:10.3f} ms")
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--nodes", type=int, default=12)
    ap.add_argument("--seed", type=lambda s: int(s, 0), default=0x5EED)
    a = ap.parse_args()
    adj, masks, tables = _workloads(np.random.default_rng(a.seed), a.nodes)
    print(f"backend: {_kernels.BACKEND}; {a.nodes}-node DAG, 64 queries, 64 tables; best of {a.repeat}")

    variants = {"numpy": (_kernels.dsep_numpy, _kernels.singleton_table_numpy, _kernels.cmi_numpy)}
    if _kernels.HAVE_NUMBA:
        variants["numba"] = (_kernels.dsep_compiled, _kernels.singleton_table_compiled, _kernels.cmi_compiled)
        # compile before timing
        _kernels.dsep_compiled(adj, *masks[0])
        _kernels.singleton_table_compiled(adj)
        _kernels.cmi_compiled(tables[0])

    for name, (dsep, table, cmi) in variants.items():
        bench(f"{name} d-separation x64", lambda: [dsep(adj, *m) for m in masks], a.repeat)
        bench(f"{name} singleton table", lambda: table(adj), a.repeat)
        bench(f"{name} CMI x64", lambda: [cmi(t) for t in tables], a.repeat)

    if _kernels.HAVE_NUMBA:
        agree = all(_kernels.dsep_numpy(adj, *m) == bool(_kernels.dsep_compiled(adj, *m)) for m in masks)
        same = np.array_equal(_kernels.singleton_table_numpy(adj), _kernels.singleton_table_compiled(adj))
        close = max(abs(_kernels.cmi_numpy(t) - _kernels.cmi_compiled(t)) for t in tables)
        print(f"agreement: d-separation {agree}, singleton table {same}, CMI max diff {close:.1e}")


if __name__ == "__main__":
    main()
