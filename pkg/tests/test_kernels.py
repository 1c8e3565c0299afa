import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from oracles import classical_cmi, dsep_by_paths
from qcausal import _kernels
from qcausal.graphs import random_dag

seeds = st.integers(0, 2**31 - 1)


def _masks(rng, n):
    labels = rng.integers(0, 4, size=n)
    return [labels == k for k in range(3)]


@given(seeds)
def test_compiled_and_numpy_dsep_agree_with_path_oracle(seed):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, int(rng.integers(2, 9)))
    adj = g.adjacency()
    names = list(g.nodes)
    loop = _kernels._dsep_loop
    for _ in range(6):
        ys, zs, ws = _masks(rng, len(names))
        if not ys.any() or not zs.any():
            continue
        pick = lambda m: {names[i] for i in np.flatnonzero(m)}  # noqa: E731
        want = dsep_by_paths(names, g.edges, pick(ys), pick(zs), pick(ws))
        assert _kernels.dsep_numpy(adj, ys, zs, ws) == want
        assert bool(loop(adj, ys, zs, ws)) == want
        assert _kernels.d_separated_mask(adj, ys, zs, ws) == want


@given(seeds)
def test_singleton_tables_agree(seed):
    rng = np.random.default_rng(seed)
    adj = random_dag(rng, int(rng.integers(2, 7))).adjacency()
    a = _kernels.singleton_table_numpy(adj)
    b = np.asarray(_kernels._singleton_table_loop(adj))
    assert np.array_equal(a, b)
    assert np.array_equal(_kernels.singleton_table(adj), a)


@given(seeds)
def test_cmi_kernels_agree_with_oracle(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(x) for x in rng.integers(1, 4, size=3))
    p = rng.dirichlet(np.ones(int(np.prod(shape)))).reshape(shape)
    p[p < 0.02] = 0.0
    p /= p.sum()
    want = classical_cmi(p)
    assert abs(_kernels.cmi_numpy(p) - want) < 1e-12
    assert abs(_kernels._cmi_loop(p) - want) < 1e-12
    assert abs(_kernels.cmi_table(p) - want) < 1e-12


def test_backend_flag_is_reported():
    assert _kernels.BACKEND in ("numba", "numpy")
    assert _kernels.BACKEND == ("numba" if _kernels.HAVE_NUMBA else "numpy")


def test_compiled_kernels_present_when_numba_available():
    if _kernels.HAVE_NUMBA:
        assert _kernels.dsep_compiled is not None
    else:
        assert _kernels.dsep_compiled is None
