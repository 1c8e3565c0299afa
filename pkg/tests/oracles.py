"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import itertools

import numpy as np


def simple_paths(nodes, edges, start, goal):
    """All simple undirected paths from ``start`` to ``goal`` as node lists."""
    nbrs = {n: set() for n in nodes}
    for a, b in edges:
        nbrs[a].add(b)
        nbrs[b].add(a)
    stack = [[start]]
    while stack:
        path = stack.pop()
        last = path[-1]
        if last == goal:
            yield path
            continue
        for n in nbrs[last]:
            if n not in path:
                stack.append(path + [n])


def descendants(nodes, edges, x):
    kids = {n: [] for n in nodes}
    for a, b in edges:
        kids[a].append(b)
    seen, todo = set(), [x]
    while todo:
        for c in kids[todo.pop()]:
            if c not in seen:
                seen.add(c)
                todo.append(c)
    return seen


def path_blocked(path, edges, nodes, W):
    eset = set(edges)
    for prev, mid, nxt in zip(path, path[1:], path[2:]):
        collider = (prev, mid) in eset and (nxt, mid) in eset
        if collider:
            if mid not in W and not (descendants(nodes, edges, mid) & set(W)):
                return True
        elif mid in W:
            return True
    return False


def dsep_by_paths(nodes, edges, Y, Z, W):
    """Blocking checked clause by clause on every simple undirected path."""
    for y in Y:
        for z in Z:
            for p in simple_paths(nodes, edges, y, z):
                if not path_blocked(p, edges, nodes, set(W)):
                    return False
    return True


def classical_cmi(p: np.ndarray) -> float:
    """``I(Y:Z|W)`` in bits for a table indexed ``[y, z, w]``."""
    pw = p.sum(axis=(0, 1))
    pyw = p.sum(axis=1)
    pzw = p.sum(axis=0)
    total = 0.0
    for y, z, w in itertools.product(*map(range, p.shape)):
        v = p[y, z, w]
        if v > 0:
            total += v * np.log2(v * pw[w] / (pyw[y, w] * pzw[z, w]))
    return float(total)


def star_limit(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    """Lie-Trotter sequence ``(A^{1/n} B^{1/n})^n`` for PSD inputs."""

    def root(m):
        w, u = np.linalg.eigh(m)
        w = np.clip(w, 0.0, None)
        return (u * w ** (1.0 / n)) @ u.conj().T

    step = root(a) @ root(b)
    return np.linalg.matrix_power(step, n)


def random_psd(rng, d, rank=None):
    r = d if rank is None else rank
    g = rng.normal(size=(d, r)) + 1j * rng.normal(size=(d, r))
    return g @ g.conj().T
