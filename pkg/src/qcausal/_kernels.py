"""Hot loops with a numba build and a pure-numpy fallback.

The numba build is used when numba imports and ``QCAUSAL_DISABLE_NUMBA`` is unset
or ``0``. Each kernel has two genuinely different implementations: the compiled one
walks the graph (active-trail search), the numpy one reasons on a moralized
ancestral graph with boolean matrix closures. Tests run both and compare.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("QCAUSAL_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:  # pragma: no cover - exercised depending on environment
    if _DISABLED:
        raise ImportError("numba disabled by QCAUSAL_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# d-separation: active-trail search (compiled)

def _reachable_loop(adj, source, observed):
    """Nodes joined to ``source`` by an active trail given ``observed``.

    ``adj[i, j]`` is true for an edge i -> j. Classic two-phase search: first the
    ancestors of the observed set, then a walk over (node, direction) states where
    direction 0 means we arrived from a child and 1 from a parent.
    """
    n = adj.shape[0]
    anc = observed.copy()
    stack = np.empty(2 * n + 2, dtype=np.int64)
    top = 0
    for i in range(n):
        if observed[i]:
            stack[top] = i
            top += 1
    while top > 0:
        top -= 1
        v = stack[top]
        for p in range(n):
            if adj[p, v] and not anc[p]:
                anc[p] = True
                stack[top] = p
                top += 1

    visited = np.zeros((n, 2), dtype=np.bool_)
    reach = np.zeros(n, dtype=np.bool_)
    # a state can be queued once per incoming edge before it is first visited
    cap = 2 * n * n + n + 2
    queue = np.empty(cap, dtype=np.int64)
    qdir = np.empty(cap, dtype=np.int64)
    top = 0
    for i in range(n):
        if source[i]:
            queue[top] = i
            qdir[top] = 0
            top += 1
    while top > 0:
        top -= 1
        v = queue[top]
        d = qdir[top]
        if visited[v, d]:
            continue
        visited[v, d] = True
        if not observed[v]:
            reach[v] = True
        if d == 0 and not observed[v]:
            for p in range(n):
                if adj[p, v] and not visited[p, 0]:
                    queue[top] = p
                    qdir[top] = 0
                    top += 1
            for c in range(n):
                if adj[v, c] and not visited[c, 1]:
                    queue[top] = c
                    qdir[top] = 1
                    top += 1
        elif d == 1:
            if not observed[v]:
                for c in range(n):
                    if adj[v, c] and not visited[c, 1]:
                        queue[top] = c
                        qdir[top] = 1
                        top += 1
            if anc[v]:
                for p in range(n):
                    if adj[p, v] and not visited[p, 0]:
                        queue[top] = p
                        qdir[top] = 0
                        top += 1
    return reach


def _dsep_loop(adj, ys, zs, ws):
    reach = _reachable_loop(adj, ys, ws)
    for i in range(adj.shape[0]):
        if reach[i] and zs[i]:
            return False
    return True


def _singleton_table_loop(adj):
    """``out[y, z, w]``: whether {y} and {z} are d-separated by {w}; ``w == n`` means the empty set."""
    n = adj.shape[0]
    out = np.zeros((n, n, n + 1), dtype=np.bool_)
    ys = np.zeros(n, dtype=np.bool_)
    ws = np.zeros(n, dtype=np.bool_)
    for w in range(n + 1):
        for i in range(n):
            ws[i] = False
        if w < n:
            ws[w] = True
        for y in range(n):
            if y == w:
                continue
            for i in range(n):
                ys[i] = False
            ys[y] = True
            reach = _reachable_loop(adj, ys, ws)
            for z in range(n):
                if z != y and z != w:
                    out[y, z, w] = not reach[z]
    return out


# ---------------------------------------------------------------------------
# d-separation: moralized ancestral graph (numpy)

def _closure(m: np.ndarray) -> np.ndarray:
    """Reflexive-transitive closure of a boolean relation by repeated squaring."""
    n = m.shape[0]
    r = m | np.eye(n, dtype=bool)
    while True:
        nxt = (r.astype(np.int64) @ r.astype(np.int64)) > 0
        if np.array_equal(nxt, r):
            return r
        r = nxt


def _dsep_moral(adj: np.ndarray, ys: np.ndarray, zs: np.ndarray, ws: np.ndarray) -> bool:
    if not ys.any() or not zs.any():
        return True
    reach = _closure(adj)
    focus = ys | zs | ws
    anc = reach[:, focus].any(axis=1)
    sub = adj & anc[:, None] & anc[None, :]
    a = sub.astype(np.int64)
    moral = (a + a.T + (a @ a.T)) > 0
    np.fill_diagonal(moral, False)
    alive = anc & ~ws
    moral &= alive[:, None] & alive[None, :]
    conn = _closure(moral)
    return not bool(conn[np.ix_(ys, zs)].any())


def _singleton_table_moral(adj: np.ndarray) -> np.ndarray:
    n = adj.shape[0]
    out = np.zeros((n, n, n + 1), dtype=bool)
    eye = np.eye(n, dtype=bool)
    empty = np.zeros(n, dtype=bool)
    for w in range(n + 1):
        ws = eye[w] if w < n else empty
        for y in range(n):
            for z in range(n):
                if len({y, z, w}) == 3 or (w == n and y != z):
                    out[y, z, w] = _dsep_moral(adj, eye[y], eye[z], ws)
    return out


# ---------------------------------------------------------------------------
# conditional mutual information of a three-way table

def _cmi_loop(table):
    ny, nz, nw = table.shape
    total = 0.0
    for w in range(nw):
        pw = 0.0
        for y in range(ny):
            for z in range(nz):
                pw += table[y, z, w]
        if pw <= 0.0:
            continue
        for y in range(ny):
            pyw = 0.0
            for z in range(nz):
                pyw += table[y, z, w]
            if pyw <= 0.0:
                continue
            for z in range(nz):
                p = table[y, z, w]
                if p <= 0.0:
                    continue
                pzw = 0.0
                for yy in range(ny):
                    pzw += table[yy, z, w]
                total += p * np.log2(p * pw / (pyw * pzw))
    return total


def _cmi_numpy(table: np.ndarray) -> float:
    pw = table.sum(axis=(0, 1), keepdims=True)
    pyw = table.sum(axis=1, keepdims=True)
    pzw = table.sum(axis=0, keepdims=True)
    mask = table > 0
    ratio = np.ones_like(table)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio[mask] = (table * pw / (pyw * pzw))[mask]
    return float((table[mask] * np.log2(ratio[mask])).sum())


if HAVE_NUMBA:
    # rebinding the module name lets the compiled callers resolve the compiled walk
    _reachable_loop = njit(cache=True)(_reachable_loop)
    dsep_compiled = njit(cache=True)(_dsep_loop)
    singleton_table_compiled = njit(cache=True)(_singleton_table_loop)
    cmi_compiled = njit(cache=True)(_cmi_loop)
else:  # pragma: no cover
    dsep_compiled = None
    singleton_table_compiled = None
    cmi_compiled = None


def d_separated_mask(adj: np.ndarray, ys: np.ndarray, zs: np.ndarray, ws: np.ndarray) -> bool:
    """Dispatch to the active backend. Arguments are boolean arrays over node indices."""
    adj = np.ascontiguousarray(adj, dtype=np.bool_)
    args = tuple(np.ascontiguousarray(v, dtype=np.bool_) for v in (ys, zs, ws))
    if HAVE_NUMBA:
        return bool(dsep_compiled(adj, *args))
    return _dsep_moral(adj, *args)


def singleton_table(adj: np.ndarray) -> np.ndarray:
    adj = np.ascontiguousarray(adj, dtype=np.bool_)
    if HAVE_NUMBA:
        return singleton_table_compiled(adj)
    return _singleton_table_moral(adj)


def cmi_table(table: np.ndarray) -> float:
    """Conditional mutual information in bits of a ``(Y, Z, W)`` probability table."""
    t = np.ascontiguousarray(table, dtype=np.float64)
    if HAVE_NUMBA:
        return float(cmi_compiled(t))
    return _cmi_numpy(t)


# fallbacks exposed for benchmarks and cross-checks
dsep_numpy = _dsep_moral
singleton_table_numpy = _singleton_table_moral
cmi_numpy = _cmi_numpy
