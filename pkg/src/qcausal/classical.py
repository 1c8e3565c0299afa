"""Classical causal models: CPTs, joint distributions, do-conditionals and the do-calculus."""

from __future__ import annotations

import dataclasses
import itertools
import string
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import _kernels, tolerances
from .errors import InputError, PreconditionError
from .graphs import Dag, Incoming, Outgoing, Rule3Cut, d_separated, dag_from_json, dag_to_json, mutilate


@dataclasses.dataclass(frozen=True)
class Dist:
    """Joint distribution; ``probs`` has one axis per variable in ``variables``."""

    variables: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self) -> None:
        if self.probs.ndim != len(self.variables):
            raise InputError("one axis per variable is required")
        if (self.probs < -tolerances.current().prob).any():
            raise InputError("probabilities must be non-negative")

    @property
    def cards(self) -> dict[str, int]:
        return dict(zip(self.variables, self.probs.shape))

    def total(self) -> float:
        return float(self.probs.sum())

    def marginal(self, keep: Iterable[str]) -> "Dist":
        keep = [v for v in self.variables if v in set(keep)]
        drop = tuple(i for i, v in enumerate(self.variables) if v not in keep)
        return Dist(tuple(keep), self.probs.sum(axis=drop))

    def reordered(self, order: Sequence[str]) -> np.ndarray:
        if sorted(order) != sorted(self.variables):
            raise InputError("reorder needs exactly the distribution's variables")
        return np.transpose(self.probs, [self.variables.index(v) for v in order])

    def grouped(self, Y: Sequence[str], Z: Sequence[str], W: Sequence[str]) -> np.ndarray:
        """Marginal as a ``(Y, Z, W)`` three-way table with flattened groups."""
        m = self.marginal(list(Y) + list(Z) + list(W))
        t = m.reordered(list(Y) + list(Z) + list(W))
        c = self.cards
        size = lambda vs: int(np.prod([c[v] for v in vs])) if vs else 1  # noqa: E731
        return t.reshape(size(Y), size(Z), size(W))


@dataclasses.dataclass(frozen=True)
class Cpt:
    """``table[parent values..., child value] = P(child | parents)``."""

    child: str
    parents: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.table, dtype=float)
        object.__setattr__(self, "table", t)
        object.__setattr__(self, "parents", tuple(self.parents))
        if t.ndim != len(self.parents) + 1:
            raise InputError(f"CPT for {self.child} needs {len(self.parents) + 1} axes")
        if (t < -tolerances.current().prob).any():
            raise InputError(f"CPT for {self.child} has negative entries")
        if np.abs(t.sum(axis=-1) - 1.0).max(initial=0.0) > 1e-9:
            raise InputError(f"CPT for {self.child} is not normalized per parent configuration")


@dataclasses.dataclass(frozen=True)
class Ccm:
    graph: Dag
    cards: Mapping[str, int]
    cpts: Mapping[str, Cpt]

    def __post_init__(self) -> None:
        for v in self.graph.nodes:
            if v not in self.cpts or v not in self.cards:
                raise InputError(f"node {v} lacks a CPT or a cardinality")
            cpt = self.cpts[v]
            if set(cpt.parents) != set(self.graph.parents(v)) or len(cpt.parents) != len(self.graph.parents(v)):
                raise InputError(f"CPT parents for {v} must equal the graph parents {self.graph.parents(v)}")
            expected = tuple(self.cards[p] for p in cpt.parents) + (self.cards[v],)
            if cpt.table.shape != expected:
                raise InputError(f"CPT for {v} has shape {cpt.table.shape}, expected {expected}")


def _letters(names: Sequence[str]) -> dict[str, str]:
    pool = string.ascii_letters
    if len(names) > len(pool):
        raise InputError("too many variables for dense einsum")
    return {v: pool[i] for i, v in enumerate(names)}


def _product(variables: Sequence[str], cards: Mapping[str, int], factors: Sequence[Cpt]) -> np.ndarray:
    letters = _letters(list(variables))
    if not factors:
        return np.ones([cards[v] for v in variables])
    ops, subs = [], []
    for f in factors:
        ops.append(f.table)
        subs.append("".join(letters[v] for v in f.parents + (f.child,)))
    mentioned = set("".join(subs))
    out = "".join(letters[v] for v in variables if letters[v] in mentioned)
    prod = np.einsum(",".join(subs) + "->" + out, *ops)
    # variables that no factor mentions are constant
    shape = [cards[v] if letters[v] in mentioned else 1 for v in variables]
    return np.broadcast_to(prod.reshape(shape), [cards[v] for v in variables]).copy()


def joint_distribution(m: Ccm) -> Dist:
    order = m.graph.nodes
    return Dist(order, _product(order, m.cards, [m.cpts[v] for v in order]))


def conditional_from(p: Dist, child: str, parents: Sequence[str]) -> Cpt:
    """Extract ``P(child | parents)``; zero-probability parent configurations get a uniform row."""
    parents = tuple(parents)
    joint = p.marginal(parents + (child,)).reordered(list(parents) + [child])
    norm = joint.sum(axis=-1, keepdims=True)
    card = joint.shape[-1]
    safe = norm >= tolerances.current().prob
    table = np.where(safe, joint / np.where(safe, norm, 1.0), 1.0 / card)
    return Cpt(child, parents, table)


def check_markov(p: Dist, g: Dag) -> bool:
    if set(p.variables) != set(g.nodes):
        raise PreconditionError("distribution variables must match the graph nodes")
    cpts = [conditional_from(p, v, g.parents(v)) for v in g.nodes]
    rebuilt = _product(p.variables, p.cards, cpts)
    return float(np.abs(rebuilt - p.probs).max(initial=0.0)) <= tolerances.current().prob


@dataclasses.dataclass(frozen=True)
class DoFamily:
    """``P(T | do(S = s))`` for every value ``s``; ``table`` has axes ``targets + settings``."""

    targets: tuple[str, ...]
    settings: tuple[str, ...]
    table: np.ndarray

    def at(self, values: Mapping[str, int]) -> Dist:
        idx = tuple(int(values[s]) for s in self.settings)
        return Dist(self.targets, self.table[(Ellipsis,) + idx])

    def as_dist_over_all(self) -> Dist:
        """Same table viewed as a (non-normalized) function of every variable."""
        return Dist(self.targets + self.settings, self.table)


def do_conditional(m: Ccm, S: Iterable[str]) -> DoFamily:
    """Truncated factorization: drop the mechanisms of ``S`` and keep the rest."""
    S = set(S)
    for s in S:
        m.graph._check(s)
    targets = tuple(v for v in m.graph.nodes if v not in S)
    settings = tuple(v for v in m.graph.nodes if v in S)
    factors = [m.cpts[v] for v in targets]
    return DoFamily(targets, settings, _product(targets + settings, m.cards, factors))


@dataclasses.dataclass(frozen=True)
class IndependenceReport:
    independent: bool
    max_deviation: float
    cmi_bits: float


def cond_indep_report(p: Dist, Y: Iterable[str], Z: Iterable[str], W: Iterable[str] = ()) -> IndependenceReport:
    Y, Z, W = (sorted(s) for s in (Y, Z, W))
    if set(Y) & set(Z) or set(Y) & set(W) or set(Z) & set(W):
        raise PreconditionError("Y, Z and W must be disjoint")
    t = p.grouped(Y, Z, W)
    pw = t.sum(axis=(0, 1), keepdims=True)
    pyw = t.sum(axis=1, keepdims=True)
    pzw = t.sum(axis=0, keepdims=True)
    dev = float(np.abs(t * pw - pyw * pzw).max(initial=0.0))
    return IndependenceReport(dev <= tolerances.current().prob, dev, _kernels.cmi_table(t))


def cond_indep(p: Dist, Y: Iterable[str], Z: Iterable[str], W: Iterable[str] = ()) -> bool:
    """``P(Y,Z,W) P(W) = P(Y,W) P(Z,W)`` for every value, within tolerance."""
    return cond_indep_report(p, Y, Z, W).independent


def cmi_bits(p: Dist, Y: Iterable[str], Z: Iterable[str], W: Iterable[str] = ()) -> float:
    return cond_indep_report(p, Y, Z, W).cmi_bits


# functional dilation --------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class NodeFunction:
    """``value[parent values..., lam]`` is the node value under noise value ``lam``."""

    parents: tuple[str, ...]
    value: np.ndarray
    noise: np.ndarray  # P(lam)


@dataclasses.dataclass(frozen=True)
class FunctionalModel:
    graph: Dag
    cards: Mapping[str, int]
    functions: Mapping[str, NodeFunction]

    def to_ccm(self) -> Ccm:
        """Marginalize each noise variable to recover the CPTs."""
        cpts = {}
        for v in self.graph.nodes:
            f = self.functions[v]
            card = self.cards[v]
            onehot = np.eye(card)[f.value]  # parent values..., lam, child
            table = np.tensordot(onehot, f.noise, axes=([len(f.parents)], [0]))
            cpts[v] = Cpt(v, f.parents, table)
        return Ccm(self.graph, dict(self.cards), cpts)


def functional_dilation(m: Ccm) -> FunctionalModel:
    """Noise ranges over all functions from parent values to node values.

    Each function is weighted by the product over parent configurations of the
    probability that the CPT picks the function's value there.
    """
    functions = {}
    for v in m.graph.nodes:
        cpt = m.cpts[v]
        pa_shape = cpt.table.shape[:-1]
        n_cfg = int(np.prod(pa_shape)) if pa_shape else 1
        card = m.cards[v]
        rows = cpt.table.reshape(n_cfg, card)
        tables = np.array(list(itertools.product(range(card), repeat=n_cfg)), dtype=np.int64)
        weights = np.prod(rows[np.arange(n_cfg)[None, :], tables], axis=1)
        value = tables.T.reshape(pa_shape + (len(tables),))
        functions[v] = NodeFunction(cpt.parents, value, weights)
    return FunctionalModel(m.graph, dict(m.cards), functions)


def dilation_reproduces(fm: FunctionalModel, m: Ccm) -> bool:
    a = joint_distribution(fm.to_ccm()).probs
    b = joint_distribution(m).probs
    return float(np.abs(a - b).max(initial=0.0)) <= tolerances.current().prob


# do-calculus -----------------------------------------------------------------

# equality of two conditionals computed by different marginalization orders
_CONDITIONAL_TOL = 1e-9


@dataclasses.dataclass(frozen=True)
class RuleCheck:
    antecedent: bool
    consequent: bool
    max_violation: float


def graphical_rule_antecedent(g: Dag, rule: int, X, Y, Z, W) -> bool:
    X, Y, Z, W = (set(s) for s in (X, Y, Z, W))
    if rule == 1:
        cut = mutilate(g, Incoming(X))
    elif rule == 2:
        cut = mutilate(mutilate(g, Incoming(X)), Outgoing(Z))
    elif rule == 3:
        cut = mutilate(g, Rule3Cut(X, Z, W))
    else:
        raise InputError("rule must be 1, 2 or 3")
    return d_separated(cut, Y, Z, X | W)


def _conditional_on(fam: DoFamily, Y: Sequence[str], given: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """``P(Y | given, settings)`` with axes ``Y + given + settings`` and the conditioning mass."""
    letters = _letters(list(fam.targets + fam.settings))
    keep = list(Y) + list(given)
    src = "".join(letters[v] for v in fam.targets + fam.settings)
    dst = "".join(letters[v] for v in keep + list(fam.settings))
    joint = np.einsum(src + "->" + dst, fam.table)
    mass = joint.sum(axis=tuple(range(len(Y))), keepdims=True)
    safe = mass >= tolerances.current().prob
    cond = np.where(safe, joint / np.where(safe, mass, 1.0), np.nan)
    return cond, np.broadcast_to(mass, joint.shape)


def _aligned(arr: np.ndarray, names: Sequence[str], order: Sequence[str]) -> np.ndarray:
    return np.transpose(arr, [list(names).index(v) for v in order])


def classical_rule_check(m: Ccm, rule: int, X, Y, Z, W) -> RuleCheck:
    """Antecedent from the graph, consequent by direct evaluation of the do/observe equalities."""
    X, Y, Z, W = (sorted(set(s)) for s in (X, Y, Z, W))
    for a, b in itertools.combinations([X, Y, Z, W], 2):
        if set(a) & set(b):
            raise PreconditionError("X, Y, Z and W must be disjoint")
    ante = graphical_rule_antecedent(m.graph, rule, X, Y, Z, W)
    fam_x = do_conditional(m, X)
    order = Y + Z + W + X
    if rule == 1:
        left, lmass = _conditional_on(fam_x, Y, Z + W)
        right, rmass = _conditional_on(fam_x, Y, W)
        lnames = Y + Z + W + list(fam_x.settings)
        rnames = Y + W + list(fam_x.settings)
    else:
        fam_xz = do_conditional(m, X + Z)
        left, lmass = _conditional_on(fam_xz, Y, W)
        lnames = Y + W + list(fam_xz.settings)
        if rule == 2:
            right, rmass = _conditional_on(fam_x, Y, Z + W)
            rnames = Y + Z + W + list(fam_x.settings)
        elif rule == 3:
            right, rmass = _conditional_on(fam_x, Y, W)
            rnames = Y + W + list(fam_x.settings)
        else:
            raise InputError("rule must be 1, 2 or 3")
    shape = [m.cards[v] for v in order]

    def full(arr, names):
        missing = [v for v in order if v not in names]
        arr = arr.reshape(arr.shape + (1,) * len(missing))
        return np.broadcast_to(_aligned(arr, list(names) + missing, order), shape)

    lf, rf = full(left, lnames), full(right, rnames)
    lm, rm = full(lmass, lnames), full(rmass, rnames)
    eps = tolerances.current().prob
    ok = (lm >= eps) & (rm >= eps)
    diff = np.abs(lf - rf)[ok]
    worst = float(diff.max(initial=0.0))
    return RuleCheck(ante, worst <= _CONDITIONAL_TOL, worst)


# generators and serialization -------------------------------------------------

def random_ccm(
    rng: np.random.Generator,
    g: Dag,
    cards: Mapping[str, int] | int = 2,
    concentration: float = 1.0,
) -> Ccm:
    """CPTs drawn row-wise from a symmetric Dirichlet, so every entry is positive almost surely."""
    if isinstance(cards, int):
        cards = {v: cards for v in g.nodes}
    cpts = {}
    for v in g.nodes:
        pa = g.parents(v)
        shape = tuple(cards[p] for p in pa)
        rows = rng.dirichlet([concentration] * cards[v], size=int(np.prod(shape)) if shape else 1)
        cpts[v] = Cpt(v, pa, rows.reshape(shape + (cards[v],)))
    return Ccm(g, dict(cards), cpts)


def ccm_to_json(m: Ccm) -> dict[str, Any]:
    return {
        "graph": dag_to_json(m.graph),
        "cards": {v: int(m.cards[v]) for v in m.graph.nodes},
        "cpts": [
            {"child": v, "parents": list(m.cpts[v].parents), "table": m.cpts[v].table.tolist()}
            for v in m.graph.nodes
        ],
    }


def ccm_from_json(obj: Mapping[str, Any]) -> Ccm:
    for key in ("graph", "cards", "cpts"):
        if key not in obj:
            raise InputError(f"CCM document needs {key!r}")
    g, _ = dag_from_json(obj["graph"])
    cards = {str(k): int(v) for k, v in obj["cards"].items()}
    cpts = {}
    for i, entry in enumerate(obj["cpts"]):
        try:
            cpts[str(entry["child"])] = Cpt(str(entry["child"]), tuple(entry["parents"]), np.asarray(entry["table"], float))
        except KeyError as exc:
            raise InputError(f"cpts[{i}] missing {exc}") from None
    return Ccm(g, cards, cpts)
