"""Directed acyclic graphs, d-separation, mutilations and SR partitions."""

from __future__ import annotations

import dataclasses
import itertools
from typing import Any, Iterable, Mapping

import numpy as np

from . import _kernels
from .errors import InputError, PreconditionError


def _sorted_names(names: Iterable[str]) -> tuple[str, ...]:
    return tuple(sorted(set(names), key=lambda s: s.encode("utf-8")))


@dataclasses.dataclass(frozen=True)
class Dag:
    """Immutable DAG over string-named nodes. Acyclicity is checked on construction."""

    nodes: tuple[str, ...]
    edges: frozenset[tuple[str, str]]

    def __init__(self, nodes: Iterable[str], edges: Iterable[tuple[str, str]] = ()):
        node_t = _sorted_names(nodes)
        edge_set = frozenset((str(a), str(b)) for a, b in edges)
        known = set(node_t)
        for a, b in edge_set:
            if a not in known or b not in known:
                raise InputError(f"edge {a}->{b} references an unknown node")
            if a == b:
                raise InputError(f"self-loop on {a}")
        object.__setattr__(self, "nodes", node_t)
        object.__setattr__(self, "edges", edge_set)
        self.topological_order()

    # structure -------------------------------------------------------------
    def _check(self, x: str) -> None:
        if x not in self.nodes:
            raise InputError(f"unknown node {x!r}")

    def parents(self, x: str) -> tuple[str, ...]:
        self._check(x)
        return _sorted_names(a for a, b in self.edges if b == x)

    def children(self, x: str) -> tuple[str, ...]:
        self._check(x)
        return _sorted_names(b for a, b in self.edges if a == x)

    def _walk(self, start: Iterable[str], step) -> set[str]:
        seen: set[str] = set()
        todo = list(start)
        while todo:
            v = todo.pop()
            for nxt in step(v):
                if nxt not in seen:
                    seen.add(nxt)
                    todo.append(nxt)
        return seen

    def ancestors(self, x: str) -> set[str]:
        self._check(x)
        return self._walk([x], self.parents)

    def descendants(self, x: str) -> set[str]:
        self._check(x)
        return self._walk([x], self.children)

    def ancestors_of_set(self, xs: Iterable[str]) -> set[str]:
        """Proper and improper ancestors: the set itself plus everything above it."""
        xs = set(xs)
        return xs | self._walk(xs, self.parents)

    def topological_order(self) -> tuple[str, ...]:
        """Kahn's algorithm with byte-order tie breaking, so the order is deterministic."""
        indeg = {v: 0 for v in self.nodes}
        for _, b in self.edges:
            indeg[b] += 1
        ready = [v for v in self.nodes if indeg[v] == 0]
        order: list[str] = []
        while ready:
            ready.sort(key=lambda s: s.encode("utf-8"))
            v = ready.pop(0)
            order.append(v)
            for a, b in self.edges:
                if a == v:
                    indeg[b] -= 1
                    if indeg[b] == 0:
                        ready.append(b)
        if len(order) != len(self.nodes):
            raise InputError("graph has a directed cycle")
        return tuple(order)

    def adjacency(self) -> np.ndarray:
        idx = {v: i for i, v in enumerate(self.nodes)}
        adj = np.zeros((len(self.nodes), len(self.nodes)), dtype=bool)
        for a, b in self.edges:
            adj[idx[a], idx[b]] = True
        return adj

    def mask(self, names: Iterable[str]) -> np.ndarray:
        names = set(names)
        for n in names:
            self._check(n)
        return np.array([v in names for v in self.nodes], dtype=bool)

    def with_edges(self, edges: Iterable[tuple[str, str]]) -> "Dag":
        return Dag(self.nodes, self.edges | set(edges))

    def without_edges(self, edges: Iterable[tuple[str, str]]) -> "Dag":
        return Dag(self.nodes, self.edges - set(edges))

    def is_subgraph_of(self, other: "Dag") -> bool:
        return set(self.nodes) == set(other.nodes) and self.edges <= other.edges

    def sorted_edges(self) -> list[tuple[str, str]]:
        return sorted(self.edges, key=lambda e: (e[0].encode("utf-8"), e[1].encode("utf-8")))

    def __repr__(self) -> str:
        es = ", ".join(f"{a}->{b}" for a, b in self.sorted_edges())
        return f"Dag(nodes={list(self.nodes)}, edges=[{es}])"


@dataclasses.dataclass(frozen=True)
class Kinship:
    parents: frozenset[str]
    children: frozenset[str]
    ancestors: frozenset[str]
    descendants: frozenset[str]
    nondescendants: frozenset[str]


def kinship(g: Dag, x: str) -> Kinship:
    desc = g.descendants(x)
    return Kinship(
        parents=frozenset(g.parents(x)),
        children=frozenset(g.children(x)),
        ancestors=frozenset(g.ancestors(x)),
        descendants=frozenset(desc),
        nondescendants=frozenset(set(g.nodes) - desc - {x}),
    )


def _check_sets(g: Dag, *sets: Iterable[str]) -> list[set[str]]:
    out = [set(s) for s in sets]
    for s in out:
        for v in s:
            g._check(v)
    for a, b in itertools.combinations(out, 2):
        if a & b:
            raise PreconditionError(f"node sets overlap on {sorted(a & b)}")
    return out


def d_separated(g: Dag, Y: Iterable[str], Z: Iterable[str], W: Iterable[str] = ()) -> bool:
    """Whether every path between ``Y`` and ``Z`` is blocked by ``W``."""
    ys, zs, ws = _check_sets(g, Y, Z, W)
    if not ys or not zs:
        return True
    return _kernels.d_separated_mask(g.adjacency(), g.mask(ys), g.mask(zs), g.mask(ws))


# mutilations ----------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Incoming:
    """Remove every edge pointing into a node of ``X``."""

    X: frozenset[str]

    def __init__(self, X: Iterable[str]):
        object.__setattr__(self, "X", frozenset(X))


@dataclasses.dataclass(frozen=True)
class Outgoing:
    """Remove every edge leaving a node of ``Z``."""

    Z: frozenset[str]

    def __init__(self, Z: Iterable[str]):
        object.__setattr__(self, "Z", frozenset(Z))


@dataclasses.dataclass(frozen=True)
class Rule3Cut:
    """Remove edges into ``X`` and into the part of ``Z`` that is not an ancestor of ``W``."""

    X: frozenset[str]
    Z: frozenset[str]
    W: frozenset[str]

    def __init__(self, X: Iterable[str], Z: Iterable[str], W: Iterable[str]):
        object.__setattr__(self, "X", frozenset(X))
        object.__setattr__(self, "Z", frozenset(Z))
        object.__setattr__(self, "W", frozenset(W))


def z_not_ancestor_of_w(g: Dag, X: Iterable[str], Z: Iterable[str], W: Iterable[str]) -> set[str]:
    """Nodes of ``Z`` with no directed path to ``W`` once edges into ``X`` are removed."""
    cut = mutilate(g, Incoming(X))
    anc_w = cut.ancestors_of_set(W)
    return {z for z in Z if z not in anc_w}


def mutilate(g: Dag, mode: Incoming | Outgoing | Rule3Cut) -> Dag:
    if isinstance(mode, Incoming):
        _check_sets(g, mode.X)
        return g.without_edges(e for e in g.edges if e[1] in mode.X)
    if isinstance(mode, Outgoing):
        _check_sets(g, mode.Z)
        return g.without_edges(e for e in g.edges if e[0] in mode.Z)
    if isinstance(mode, Rule3Cut):
        _check_sets(g, mode.X, mode.Z, mode.W)
        zw = z_not_ancestor_of_w(g, mode.X, mode.Z, mode.W)
        target = set(mode.X) | zw
        return g.without_edges(e for e in g.edges if e[1] in target)
    raise InputError(f"unknown mutilation mode {mode!r}")


# SR partitions --------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class SrPartition:
    R_Y: frozenset[str]
    R_Z: frozenset[str]
    R_c: frozenset[str]
    W_Y: frozenset[str]
    W_Z: frozenset[str]


def _allowed_targets(Y, Z, part: SrPartition) -> dict[str, set[str] | None]:
    """For each node, the set its children may lie in; ``None`` means unconstrained."""
    y_side = set(Y) | part.R_Y
    z_side = set(Z) | part.R_Z
    allowed: dict[str, set[str] | None] = {}
    for v in y_side:
        allowed[v] = y_side | part.R_c | part.W_Y
    for v in z_side:
        allowed[v] = z_side | part.R_c | part.W_Z
    for v in part.R_c:
        allowed[v] = set(part.R_c)
    for v in part.W_Y | part.W_Z:
        allowed[v] = None
    return allowed


def validate_sr_partition(g: Dag, Y, Z, W, part: SrPartition) -> bool:
    """Check the partition property and the allowed-arrow table."""
    Y, Z, W = set(Y), set(Z), set(W)
    R = set(g.nodes) - Y - Z - W
    pieces = [part.R_Y, part.R_Z, part.R_c]
    if set().union(*pieces) != R or sum(map(len, pieces)) != len(R):
        return False
    if part.W_Y | part.W_Z != W or part.W_Y & part.W_Z:
        return False
    allowed = _allowed_targets(Y, Z, part)
    for a, b in g.edges:
        targets = allowed[a]
        if targets is not None and b not in targets:
            return False
    return True


def _greedy_sr(g: Dag, Y: set[str], Z: set[str], W: set[str]) -> SrPartition:
    R = set(g.nodes) - Y - Z - W
    anc = g.ancestors_of_set(Y | Z | W)
    r_c = {r for r in R if r not in anc}
    live = R - r_c

    def grow(seed: set[str]) -> set[str]:
        side = set(seed)
        changed = True
        while changed:
            changed = False
            for a, b in g.edges:
                for u, v in ((a, b), (b, a)):
                    if u in side and v in live and v not in side:
                        side.add(v)
                        changed = True
        return side - seed

    r_y = grow(Y)
    r_z = grow(Z) - r_y
    r_c |= live - r_y - r_z
    y_side, z_side = Y | r_y, Z | r_z
    w_y, w_z = set(), set()
    for w in W:
        pa = set(g.parents(w))
        if pa & z_side and not pa & y_side:
            w_z.add(w)
        else:
            w_y.add(w)
    return SrPartition(frozenset(r_y), frozenset(r_z), frozenset(r_c), frozenset(w_y), frozenset(w_z))


def sr_partition(g: Dag, Y: Iterable[str], Z: Iterable[str], W: Iterable[str] = ()) -> SrPartition | None:
    """Find a partition of the remaining and conditioning nodes satisfying the SR arrow table.

    A greedy seeding is tried first; when it fails validation every assignment is
    enumerated, so ``None`` means no partition exists.
    """
    ys, zs, ws = _check_sets(g, Y, Z, W)
    guess = _greedy_sr(g, ys, zs, ws)
    if validate_sr_partition(g, ys, zs, ws, guess):
        return guess
    rs = [v for v in g.nodes if v not in ys | zs | ws]
    wl = [v for v in g.nodes if v in ws]
    for r_labels in itertools.product(range(3), repeat=len(rs)):
        buckets: list[set[str]] = [set(), set(), set()]
        for v, k in zip(rs, r_labels):
            buckets[k].add(v)
        for w_labels in itertools.product(range(2), repeat=len(wl)):
            w_y = {v for v, k in zip(wl, w_labels) if k == 0}
            part = SrPartition(
                frozenset(buckets[0]),
                frozenset(buckets[1]),
                frozenset(buckets[2]),
                frozenset(w_y),
                frozenset(ws - w_y),
            )
            if validate_sr_partition(g, ys, zs, ws, part):
                return part
    return None


# construction helpers -------------------------------------------------------

def random_dag(rng: np.random.Generator, n: int, edge_prob: float = 0.4, prefix: str = "N") -> Dag:
    """Random DAG: edges drawn along a random topological order."""
    names = [f"{prefix}{i + 1}" for i in range(n)]
    order = rng.permutation(n)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < edge_prob:
                edges.append((names[order[i]], names[order[j]]))
    return Dag(names, edges)


def dag_to_json(g: Dag, dims: Mapping[str, int] | None = None) -> dict[str, Any]:
    dims = dims or {}
    nodes = []
    for v in g.nodes:
        entry: dict[str, Any] = {"name": v}
        if v in dims:
            entry["dim"] = int(dims[v])
        nodes.append(entry)
    return {"nodes": nodes, "edges": [list(e) for e in g.sorted_edges()]}


def dag_from_json(obj: Mapping[str, Any]) -> tuple[Dag, dict[str, int]]:
    """Parse a DAG document; returns the graph and any declared node dimensions."""
    if "nodes" not in obj:
        raise InputError("DAG document needs 'nodes'")
    names, dims = [], {}
    for i, entry in enumerate(obj["nodes"]):
        if isinstance(entry, str):
            names.append(entry)
            continue
        if not isinstance(entry, Mapping) or "name" not in entry:
            raise InputError(f"nodes[{i}] needs a 'name'")
        names.append(str(entry["name"]))
        if "dim" in entry:
            dims[str(entry["name"])] = int(entry["dim"])
    edges = []
    for i, e in enumerate(obj.get("edges", [])):
        if len(e) != 2:
            raise InputError(f"edges[{i}] must be a [parent, child] pair")
        edges.append((str(e[0]), str(e[1])))
    return Dag(names, edges), dims
