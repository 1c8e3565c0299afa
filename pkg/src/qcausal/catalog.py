"""Named example graphs, node-set assignments and model builders used by tests and the CLI."""

from __future__ import annotations

import dataclasses
import itertools

import numpy as np

from .graphs import Dag
from .quantum import Qcm, random_kraus, random_unitary
from .tensor_core import IN, OUT, Wire, cj_of_map

__all__ = [
    "FIVE_NODE_DIAMOND",
    "SEPARATION_EXAMPLE",
    "RuleSets",
    "RULE_EXAMPLES",
    "chain",
    "fork",
    "collider",
    "diamond_product_qcm",
]

# A1 feeds A2 and A3, which meet at A4; A5 reads A1 and A4
FIVE_NODE_DIAMOND = Dag(
    ("A1", "A2", "A3", "A4", "A5"),
    (("A1", "A2"), ("A1", "A3"), ("A2", "A4"), ("A3", "A4"), ("A1", "A5"), ("A4", "A5")),
)

# N1 is a collider of N2 and N4; N3 is a common cause of N2 and N4; N2 -> N5 -> N4
SEPARATION_EXAMPLE = Dag(
    ("N1", "N2", "N3", "N4", "N5"),
    (("N2", "N1"), ("N4", "N1"), ("N2", "N5"), ("N5", "N4"), ("N3", "N2"), ("N3", "N4")),
)


@dataclasses.dataclass(frozen=True)
class RuleSets:
    rule: int
    X: frozenset[str]
    Y: frozenset[str]
    Z: frozenset[str]
    W: frozenset[str]
    antecedent: bool


def _rs(rule, X, Y, Z, W, ante) -> RuleSets:
    return RuleSets(rule, frozenset(X), frozenset(Y), frozenset(Z), frozenset(W), ante)


# assignments on SEPARATION_EXAMPLE; "a" variants satisfy the rule's graphical condition
RULE_EXAMPLES = {
    "rule1a": _rs(1, {"N1"}, {"N2"}, {"N4"}, {"N3", "N5"}, True),
    "rule1b": _rs(1, {"N5"}, {"N2"}, {"N4"}, {"N1", "N3"}, False),
    "rule2a": _rs(2, {"N1"}, {"N4", "N5"}, {"N2"}, {"N3"}, True),
    "rule2b": _rs(2, {"N1"}, {"N2"}, {"N4", "N5"}, {"N3"}, False),
    "rule3a": _rs(3, {"N1"}, {"N2"}, {"N4", "N5"}, {"N3"}, True),
    "rule3b": _rs(3, {"N1"}, {"N2"}, {"N5"}, {"N3", "N4"}, False),
}


def chain(n: int, prefix: str = "A") -> Dag:
    names = [f"{prefix}{i + 1}" for i in range(n)]
    return Dag(names, list(zip(names[:-1], names[1:])))


def fork(n_children: int, prefix: str = "A") -> Dag:
    names = [f"{prefix}{i + 1}" for i in range(n_children + 1)]
    return Dag(names, [(names[0], c) for c in names[1:]])


def collider(n_parents: int, prefix: str = "A") -> Dag:
    names = [f"{prefix}{i + 1}" for i in range(n_parents + 1)]
    return Dag(names, [(p, names[-1]) for p in names[:-1]])


def diamond_product_qcm(rng: np.random.Generator) -> Qcm:
    """Qubit model on :data:`FIVE_NODE_DIAMOND` with a product channel at the four-level node ``A5``.

    ``A1`` is read by its three children through a measurement in one random basis;
    ``A5 = A5a (x) A5b`` receives independent channels from ``A1`` and from ``A4``.
    """
    g = FIVE_NODE_DIAMOND
    dims = {"A1": 2, "A2": 2, "A3": 2, "A4": 2, "A5": 4}
    u = random_unitary(rng, 2)
    bras = [u[:, k].conj()[None, :] for k in range(2)]

    def measured(d_out: int) -> list[np.ndarray]:
        return [np.kron(kr, bra) for bra in bras for kr in random_kraus(rng, 1, d_out, rank=2)]

    a1 = Wire("A1", OUT, 2)
    chans = {
        "A1": cj_of_map(random_kraus(rng, 1, 2, rank=2), [], [Wire("A1", IN, 2)]),
        "A2": cj_of_map(measured(2), [a1], [Wire("A2", IN, 2)]),
        "A3": cj_of_map(measured(2), [a1], [Wire("A3", IN, 2)]),
        "A4": cj_of_map(
            random_kraus(rng, 4, 2, rank=2), [Wire("A2", OUT, 2), Wire("A3", OUT, 2)], [Wire("A4", IN, 2)]
        ),
    }
    left = measured(2)
    right = random_kraus(rng, 2, 2, rank=2)
    kraus = [np.kron(a, b) for a, b in itertools.product(left, right)]
    chans["A5"] = cj_of_map(kraus, [a1, Wire("A4", OUT, 2)], [Wire("A5", IN, 4)])
    return Qcm(g, dims, chans)
