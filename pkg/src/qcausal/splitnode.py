"""Classical split-node processes: each node has an input and an output variable.

A :class:`ClassicalProcess` is a real tensor with one axis per (node, port) wire in
the same canonical order that :mod:`qcausal.tensor_core` uses for operators, so a
classical process map is the diagonal shadow of a quantum process operator.
"""

from __future__ import annotations

import dataclasses
import itertools
import string
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import tolerances
from .classical import Ccm, Dist, cond_indep
from .errors import InputError, PreconditionError
from .tensor_core import IN, OUT, Label, SpaceSig, Wire

Channel = np.ndarray  # P(out | in) with axes (out, in)


@dataclasses.dataclass(frozen=True)
class ClassicalProcess:
    """Non-negative tensor over a set of classical wires."""

    sig: SpaceSig
    tensor: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.tensor, dtype=float)
        if t.shape != self.sig.dims:
            raise InputError(f"tensor shape {t.shape} does not match wires {self.sig.dims}")
        object.__setattr__(self, "tensor", t)

    @property
    def nodes(self) -> list[str]:
        return self.sig.nodes()

    def card(self, node: str) -> int:
        for w in self.sig.wires:
            if w.node == node:
                return w.dim
        raise InputError(f"unknown node {node!r}")

    def axis(self, label: Label) -> int:
        return self.sig.labels.index(label)

    def ordered(self, labels: Sequence[Label]) -> np.ndarray:
        if sorted(labels) != sorted(self.sig.labels):
            raise InputError("ordering needs exactly the process wires")
        return np.transpose(self.tensor, [self.axis(lab) for lab in labels])


Cpm = ClassicalProcess


def full_sig(cards: Mapping[str, int]) -> SpaceSig:
    return SpaceSig.of([Wire(n, p, int(d)) for n, d in cards.items() for p in (IN, OUT)])


def _subscripts(labels: Sequence[Label]) -> dict[Label, str]:
    pool = string.ascii_letters
    if len(labels) > len(pool):
        raise InputError("too many wires for dense einsum")
    return {lab: pool[i] for i, lab in enumerate(labels)}


def _contract(proc: ClassicalProcess, factors: Sequence[tuple[np.ndarray, Sequence[Label]]], keep: Sequence[Label]) -> np.ndarray:
    """Sum ``proc`` times the given factors over every wire not in ``keep``."""
    extra = [lab for _, labs in factors for lab in labs if lab not in proc.sig.labels]
    letters = _subscripts(list(proc.sig.labels) + list(dict.fromkeys(extra)))
    subs = ["".join(letters[l] for l in proc.sig.labels)]
    ops = [proc.tensor]
    for arr, labs in factors:
        subs.append("".join(letters[l] for l in labs))
        ops.append(arr)
    out = "".join(letters[l] for l in keep)
    return np.einsum(",".join(subs) + "->" + out, *ops, optimize=True)


# instruments -----------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class ClassicalInstrument:
    """``kernels[k, out, in] = P(k, out | in)``."""

    node: str
    kernels: np.ndarray

    def __post_init__(self) -> None:
        k = np.asarray(self.kernels, dtype=float)
        if k.ndim != 3 or k.shape[1] != k.shape[2]:
            raise InputError("instrument kernels need shape (outcomes, card, card)")
        if (k < -tolerances.current().prob).any():
            raise InputError("instrument kernels must be non-negative")
        if np.abs(k.sum(axis=(0, 1)) - 1.0).max() > 1e-9:
            raise InputError(f"instrument at {self.node} is not normalized for every input value")
        object.__setattr__(self, "kernels", k)

    @property
    def n_outcomes(self) -> int:
        return self.kernels.shape[0]

    def channel(self) -> Channel:
        return self.kernels.sum(axis=0)


def make_instrument(node: str, card: int, kind: str, **params: Any) -> ClassicalInstrument | list[ClassicalInstrument]:
    """Build a standard instrument.

    ``kind`` is one of ``identity``, ``non_disturbing``, ``max_informative``
    (params ``g_in``, ``g_out``: integer arrays over values), ``breaking`` (param
    ``z``), ``channel`` (param ``channel``) or ``spanning_basis`` (returns a list).
    """
    d = card
    if kind == "identity":
        return ClassicalInstrument(node, np.eye(d)[None])
    if kind == "channel":
        return ClassicalInstrument(node, np.asarray(params["channel"], float)[None])
    if kind == "non_disturbing":
        k = np.zeros((d, d, d))
        for x in range(d):
            k[x, x, x] = 1.0
        return ClassicalInstrument(node, k)
    if kind == "max_informative":
        g_in = np.asarray(params.get("g_in", np.arange(d)), dtype=int)
        g_out = np.asarray(params.get("g_out", np.arange(d)), dtype=int)
        for name, g in (("g_in", g_in), ("g_out", g_out)):
            if sorted(set(g.tolist())) != list(range(d)) or len(g) != d:
                raise InputError(f"{name} must be a bijection onto {d} values")
        # outcome (a, b) with a = g_in(in) and b = g_out(out), output drawn uniformly
        k = np.zeros((d * d, d, d))
        for x_in in range(d):
            for x_out in range(d):
                k[g_in[x_in] * d + g_out[x_out], x_out, x_in] = 1.0 / d
        return ClassicalInstrument(node, k)
    if kind == "breaking":
        z = int(params["z"])
        if not 0 <= z < d:
            raise InputError("breaking value out of range")
        k = np.zeros((d, d, d))
        for x in range(d):
            k[x, z, x] = 1.0
        return ClassicalInstrument(node, k)
    if kind == "spanning_basis":
        return [make_instrument(node, d, "max_informative"), make_instrument(node, d, "identity")]
    raise InputError(f"unknown instrument kind {kind!r}")


def deterministic_channels(card: int) -> list[Channel]:
    """Every function in -> out as a stochastic matrix; their convex hull is all channels."""
    chans = []
    for f in itertools.product(range(card), repeat=card):
        c = np.zeros((card, card))
        c[list(f), list(range(card))] = 1.0
        chans.append(c)
    return chans


def affine_channel_basis(card: int) -> list[Channel]:
    """Identity plus single-entry moves; affinely spans the channel polytope."""
    basis = [np.eye(card)]
    for i in range(card):
        for j in range(card):
            if i != j:
                c = np.eye(card)
                c[:, i] = 0.0
                c[j, i] = 1.0
                basis.append(c)
    return basis


def outcome_probs(proc: ClassicalProcess, instruments: Mapping[str, ClassicalInstrument]) -> Dist:
    """Joint outcome distribution; nodes without an instrument get the identity channel."""
    nodes = proc.nodes
    for n in instruments:
        if n not in nodes:
            raise InputError(f"instrument for unknown node {n!r}")
    factors = []
    outcome_labels: list[Label] = []
    for n in nodes:
        inst = instruments.get(n) or make_instrument(n, proc.card(n), "identity")
        if inst.kernels.shape[1] != proc.card(n):
            raise InputError(f"instrument at {n} has the wrong cardinality")
        lab = (n, "k")
        factors.append((inst.kernels, [lab, (n, OUT), (n, IN)]))
        outcome_labels.append(lab)
    table = _contract(proc, factors, outcome_labels)
    return Dist(tuple(nodes), table)


def is_valid(proc: ClassicalProcess) -> tuple[bool, float]:
    """Total probability one against every tuple from the per-node affine channel basis."""
    nodes = proc.nodes
    per_node = [affine_channel_basis(proc.card(n)) for n in nodes]
    worst = 0.0
    for choice in itertools.product(*per_node):
        factors = [(c, [(n, OUT), (n, IN)]) for n, c in zip(nodes, choice)]
        total = float(_contract(proc, factors, []))
        worst = max(worst, abs(total - 1.0))
    return worst <= 1e-9, worst


# marginals and do-conditionals ------------------------------------------------

def do_marginal(
    proc: ClassicalProcess,
    S_do: Iterable[str],
    T_keep: Iterable[str],
    channels: Mapping[str, Channel] | None = None,
) -> ClassicalProcess:
    """Sum the inputs of ``S_do``; contract every other non-kept node with the identity
    channel (or the supplied channel)."""
    S_do, T_keep = set(S_do), set(T_keep)
    channels = dict(channels or {})
    if S_do & T_keep:
        raise PreconditionError("do-set and kept set must be disjoint")
    factors = []
    for n in proc.nodes:
        if n in S_do or n in T_keep:
            continue
        c = channels.get(n, np.eye(proc.card(n)))
        factors.append((np.asarray(c, float), [(n, OUT), (n, IN)]))
    keep = [w for w in proc.sig.wires if w.node in T_keep or (w.node in S_do and w.port == OUT)]
    sig = SpaceSig(tuple(keep))
    return ClassicalProcess(sig, _contract(proc, factors, sig.labels))


def induct_ccm_to_csm(m: Ccm) -> ClassicalProcess:
    """Product of ``P(X_i^in | Pa(X_i)^out)``."""
    sig = full_sig(m.cards)
    letters = _subscripts(sig.labels)
    subs, ops = [], []
    for v in m.graph.nodes:
        cpt = m.cpts[v]
        subs.append("".join(letters[(p, OUT)] for p in cpt.parents) + letters[(v, IN)])
        ops.append(cpt.table)
    mentioned = set("".join(subs))
    out = "".join(letters[l] for l in sig.labels if letters[l] in mentioned)
    t = np.einsum(",".join(subs) + "->" + out, *ops)
    shape = [w.dim if letters[w.label] in mentioned else 1 for w in sig.wires]
    return ClassicalProcess(sig, np.broadcast_to(t.reshape(shape), sig.dims).copy())


def induct_process_to_dist(proc: ClassicalProcess) -> Dist:
    """Identify each node's input with its output and read off the joint distribution."""
    nodes = proc.nodes
    for n in nodes:
        if not (proc.sig.has((n, IN)) and proc.sig.has((n, OUT))):
            raise InputError("every node needs both wires")
    letters = {}
    pool = iter(string.ascii_letters)
    for n in nodes:
        letters[n] = next(pool)
    src = "".join(letters[w.node] for w in proc.sig.wires)
    return Dist(tuple(nodes), np.einsum(src + "->" + "".join(letters[n] for n in nodes), proc.tensor))


def induct(obj: Any, direction: str) -> Any:
    """``direction`` is ``"ccm->csm"`` or ``"kappa->P"``."""
    if direction == "ccm->csm":
        return induct_ccm_to_csm(obj)
    if direction == "kappa->P":
        return induct_process_to_dist(obj)
    raise InputError(f"unknown induction {direction!r}")


# relative independence ------------------------------------------------------------

def _rank_at_most_one(mat: np.ndarray) -> bool:
    if not np.any(mat):
        return True
    s = np.linalg.svd(mat, compute_uv=False)
    if s[0] <= 0.0:
        return True
    return len(s) < 2 or s[1] <= tolerances.current().rank * s[0]


def _labels_of(proc: ClassicalProcess, nodes: Iterable[str], ports: Sequence[str] = (IN, OUT)) -> list[Label]:
    return [w.label for w in proc.sig.wires if w.node in set(nodes) and w.port in ports]


def _prepare(proc, Y, Z, W, X, channels):
    Y, Z, W, X = (set(s) for s in (Y, Z, W, X))
    for a, b in itertools.combinations([Y, Z, W, X], 2):
        if a & b:
            raise PreconditionError("Y, Z, W and X must be disjoint")
    unknown = (Y | Z | W | X) - set(proc.nodes)
    if unknown:
        raise InputError(f"unknown nodes {sorted(unknown)}")
    return Y, Z, W, X, do_marginal(proc, X, Y | Z | W, channels)


def _slices(t: np.ndarray, n_rows: int, n_cols: int) -> np.ndarray:
    return t.reshape(n_rows, n_cols, -1)


def rel_independence(
    proc: ClassicalProcess,
    mode: str,
    Y: Iterable[str],
    Z: Iterable[str],
    W: Iterable[str] = (),
    X: Iterable[str] = (),
    channels: Mapping[str, Channel] | None = None,
) -> bool:
    """Strong relative independence by per-slice rank.

    ``mode`` is ``plain``, ``do``, ``broken`` or ``settings``. Nodes outside the
    four sets are contracted with the identity channel (or ``channels``).
    """
    Y, Z, W, X, k = _prepare(proc, Y, Z, W, X, channels)
    if mode == "plain" and X:
        raise PreconditionError("plain mode takes no do-set; use mode='do'")
    y_l = _labels_of(k, Y)
    slice_l = _labels_of(k, W) + _labels_of(k, X, (OUT,))
    if mode in ("plain", "do"):
        z_l = _labels_of(k, Z)
        t = k.ordered(y_l + z_l + slice_l)
    elif mode == "broken":
        z_l = _labels_of(k, Z, (IN,))
        slice_l = slice_l + _labels_of(k, Z, (OUT,))
        t = k.ordered(y_l + z_l + slice_l)
    elif mode == "settings":
        columns = []
        for tau in _local_channel_family(k, Z):
            factors = [(c, [(n, OUT), (n, IN)]) for n, c in tau.items()]
            columns.append(_contract(k, factors, y_l + slice_l))
        t = np.stack(columns, axis=len(y_l))
        z_l = [("settings", "index")]
    else:
        raise InputError(f"unknown mode {mode!r}")
    n_rows = int(np.prod(t.shape[: len(y_l)])) if y_l else 1
    n_cols = int(np.prod(t.shape[len(y_l): len(y_l) + len(z_l)])) if z_l else 1
    slices = _slices(t, n_rows, n_cols)
    return all(_rank_at_most_one(slices[:, :, i]) for i in range(slices.shape[2]))


def _local_channel_family(proc: ClassicalProcess, Z: Iterable[str]) -> list[dict[str, Channel]]:
    """Products of deterministic channels on the ``Z`` nodes."""
    zs = [n for n in proc.nodes if n in set(Z)]
    per_node = [deterministic_channels(proc.card(n)) for n in zs]
    return [dict(zip(zs, combo)) for combo in itertools.product(*per_node)]


def factorize(
    proc: ClassicalProcess,
    Y: Iterable[str],
    Z: Iterable[str],
    W: Iterable[str] = (),
    X: Iterable[str] = (),
) -> tuple[np.ndarray, np.ndarray] | None:
    """Explicit real factors ``alpha(Y, slice) beta(Z, slice)`` when every slice has rank one.

    Returns arrays with axes ``(Y rows, slice)`` and ``(Z cols, slice)``.
    """
    Y, Z, W, X, k = _prepare(proc, Y, Z, W, X, None)
    y_l, z_l = _labels_of(k, Y), _labels_of(k, Z)
    slice_l = _labels_of(k, W) + _labels_of(k, X, (OUT,))
    t = k.ordered(y_l + z_l + slice_l)
    n_rows = int(np.prod([k.sig.get(l).dim for l in y_l])) if y_l else 1
    n_cols = int(np.prod([k.sig.get(l).dim for l in z_l])) if z_l else 1
    slices = _slices(t, n_rows, n_cols)
    alpha = np.zeros((n_rows, slices.shape[2]))
    beta = np.zeros((n_cols, slices.shape[2]))
    for i in range(slices.shape[2]):
        m = slices[:, :, i]
        if not _rank_at_most_one(m):
            return None
        u, s, vt = np.linalg.svd(m)
        alpha[:, i] = u[:, 0] * s[0]
        beta[:, i] = vt[0]
    return alpha, beta


# operational statements ------------------------------------------------------------

def _fix_outputs(values: Mapping[str, int], cards: Mapping[str, int]) -> dict[str, ClassicalInstrument]:
    """Do-interventions: discard the input and prepare a fixed output."""
    out = {}
    for n, x in values.items():
        ch = np.zeros((cards[n], cards[n]))
        ch[x, :] = 1.0
        out[n] = make_instrument(n, cards[n], "channel", channel=ch)
    return out


def _random_instrument(rng: np.random.Generator, node: str, card: int, outcomes: int = 3) -> ClassicalInstrument:
    k = rng.random((outcomes, card, card))
    k /= k.sum(axis=(0, 1), keepdims=True)
    return ClassicalInstrument(node, k)


def operational_check(
    proc: ClassicalProcess,
    statement: str,
    Y: Iterable[str],
    Z: Iterable[str],
    W: Iterable[str] = (),
    X: Iterable[str] = (),
    channels: Mapping[str, Channel] | None = None,
    n_random: int = 2,
    seed: int = 0x5EED,
) -> bool:
    """Evaluate ``COS1``, ``COS2`` or ``COS3`` by enumerating interventions and outcomes.

    ``COS1``: outcomes at Y and Z are conditionally independent given a maximally
    informative outcome at W, for every do-value at X. ``COS2`` replaces the Z
    interventions by breaking ones. ``COS3``: the conditional of the Y outcome given
    the W outcome does not depend on the channel applied at Z.
    """
    Y, Z, W, X, k = _prepare(proc, Y, Z, W, X, channels)
    cards = {n: k.card(n) for n in k.nodes}
    # reattach trivial inputs to do-nodes so outcome_probs can treat every node alike
    full = _with_dummy_inputs(k, X)
    rng = np.random.default_rng(seed)
    w_inst = {n: make_instrument(n, cards[n], "max_informative") for n in W}
    statement = statement.upper()
    for x_vals in itertools.product(*[range(cards[n]) for n in sorted(X)]):
        fixed = _fix_outputs(dict(zip(sorted(X), x_vals)), cards)
        if statement == "COS1":
            choices = [("ic", {n: make_instrument(n, cards[n], "max_informative") for n in Y | Z})]
            for _ in range(n_random):
                choices.append(("rand", {n: _random_instrument(rng, n, cards[n]) for n in Y | Z}))
            for _, local in choices:
                dist = outcome_probs(full, {**fixed, **w_inst, **local})
                if not _outcome_indep(dist, Y, Z, W):
                    return False
        elif statement == "COS2":
            y_inst = {n: make_instrument(n, cards[n], "max_informative") for n in Y}
            for z_vals in itertools.product(*[range(cards[n]) for n in sorted(Z)]):
                z_inst = {n: make_instrument(n, cards[n], "breaking", z=v) for n, v in zip(sorted(Z), z_vals)}
                dist = outcome_probs(full, {**fixed, **w_inst, **y_inst, **z_inst})
                if not _outcome_indep(dist, Y, Z, W):
                    return False
        elif statement == "COS3":
            y_inst = {n: make_instrument(n, cards[n], "max_informative") for n in Y}
            eps = tolerances.current().prob
            seen_cond: np.ndarray | None = None
            seen_mass: np.ndarray | None = None
            for tau in _local_channel_family(k, Z):
                z_inst = {n: make_instrument(n, cards[n], "channel", channel=c) for n, c in tau.items()}
                dist = outcome_probs(full, {**fixed, **w_inst, **y_inst, **z_inst})
                cond, mass = _conditional_y_given_w(dist, Y, W)
                if seen_cond is None:
                    seen_cond, seen_mass = cond, mass
                    continue
                both = (mass > eps) & (seen_mass > eps)
                if np.abs(cond - seen_cond)[:, both].max(initial=0.0) > 1e-9:
                    return False
                # remember a conditional for slices that only now acquire weight
                fresh = (mass > eps) & ~(seen_mass > eps)
                seen_cond = np.where(fresh[None, :], cond, seen_cond)
                seen_mass = np.maximum(seen_mass, mass)
        else:
            raise InputError(f"unknown statement {statement!r}")
    return True


def _with_dummy_inputs(k: ClassicalProcess, X: Iterable[str]) -> ClassicalProcess:
    """Give do-nodes a constant input axis so every node has both wires."""
    wires = list(k.sig.wires)
    t = k.tensor
    for n in sorted(X):
        card = k.sig.get((n, OUT)).dim
        wires.append(Wire(n, IN, card))
        t = t[..., None] * (np.ones(card) / card)
    return ClassicalProcess(SpaceSig.of(wires), _reorder_to(t, wires, SpaceSig.of(wires)))


def _reorder_to(t: np.ndarray, wires: Sequence[Wire], sig: SpaceSig) -> np.ndarray:
    labels = [w.label for w in wires]
    return np.transpose(t, [labels.index(l) for l in sig.labels])


def _outcome_indep(dist: Dist, Y, Z, W) -> bool:
    return cond_indep(dist, sorted(Y), sorted(Z), sorted(W))


def _conditional_y_given_w(dist: Dist, Y, W) -> tuple[np.ndarray, np.ndarray]:
    t = dist.grouped(sorted(Y), [], sorted(W))[:, 0, :]
    mass = t.sum(axis=0)
    safe = mass > tolerances.current().prob
    cond = np.where(safe[None, :], t / np.where(safe, mass, 1.0)[None, :], 0.0)
    return cond, mass


# serialization ---------------------------------------------------------------------

def process_to_json(proc: ClassicalProcess) -> dict[str, Any]:
    nodes = [{"name": n, "card": proc.card(n)} for n in proc.nodes]
    return {"nodes": nodes, "tensor": proc.tensor.reshape(-1).tolist()}


def process_from_json(obj: Mapping[str, Any]) -> ClassicalProcess:
    if "nodes" not in obj or "tensor" not in obj:
        raise InputError("CPM document needs 'nodes' and 'tensor'")
    cards = {}
    for i, entry in enumerate(obj["nodes"]):
        if "name" not in entry or "card" not in entry:
            raise InputError(f"nodes[{i}] needs 'name' and 'card'")
        cards[str(entry["name"])] = int(entry["card"])
    names = list(cards)
    if names != sorted(names, key=lambda s: s.encode("utf-8")):
        raise InputError("CPM nodes must be listed in canonical order")
    sig = full_sig(cards)
    flat = np.asarray(obj["tensor"], dtype=float).reshape(-1)
    if flat.size != sig.dim:
        raise InputError(f"tensor needs {sig.dim} entries, got {flat.size}")
    return ClassicalProcess(sig, flat.reshape(sig.dims))
