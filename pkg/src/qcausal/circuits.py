"""Broken circuits, unitary processes with local inputs, influence tests and Markov dilation.

A broken circuit is a list of gates. Each gate consumes and produces lines. A line
is either internal (named by a string) or a node port ``(node, "in")`` /
``(node, "out")``. A broken node's ``in`` line is produced by a gate and ends at
the node; its ``out`` line starts at the node and is consumed by a later gate.
Named lines with no producer are local inputs (they carry a fixed state); named
lines with no consumer are traced outputs.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Any, Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.linalg import null_space

from . import tolerances
from .errors import ConstructionError, DimensionError, InputError, PreconditionError
from .graphs import Dag
from .operator_algebra import SEED, generate_algebra, slices, wedderburn_decompose
from .quantum import ProcessOperator, QNode, check_markov, random_unitary
from .tensor_core import (
    IN,
    OUT,
    LabeledOperator,
    SpaceSig,
    Wire,
    align,
    cj_of_map,
    commutator_norm,
    keep_only,
    padded_product,
    partial_trace,
    link_trace,
    tensor,
    tensor_all,
)

Ref = Union[str, tuple[str, str]]

NODES_ONLY = "nodes_only"
WITH_LOCAL = "nodes_lambdas_Fs"


def _ref_key(ref: Ref) -> tuple:
    return ("line", ref) if isinstance(ref, str) else ("port", ref[0], ref[1])


def _ref_str(ref: Ref) -> str:
    return ref if isinstance(ref, str) else f"{ref[0]}:{ref[1]}"


@dataclasses.dataclass(frozen=True)
class Gate:
    """Unitary from the ``ins`` lines (in order) to the ``outs`` lines (in order)."""

    unitary: np.ndarray
    ins: tuple[tuple[Ref, int], ...]
    outs: tuple[tuple[Ref, int], ...]

    def __post_init__(self) -> None:
        u = np.asarray(self.unitary, dtype=np.complex128)
        ins = tuple((_norm_ref(r), int(d)) for r, d in self.ins)
        outs = tuple((_norm_ref(r), int(d)) for r, d in self.outs)
        object.__setattr__(self, "unitary", u)
        object.__setattr__(self, "ins", ins)
        object.__setattr__(self, "outs", outs)
        d_in = math.prod(d for _, d in ins)
        d_out = math.prod(d for _, d in outs)
        if u.shape != (d_out, d_in):
            raise DimensionError(f"gate matrix has shape {u.shape}, lines need {(d_out, d_in)}")
        if d_in != d_out or np.linalg.norm(u.conj().T @ u - np.eye(d_in)) > 1e-8 * max(1.0, math.sqrt(d_in)):
            raise InputError("gate matrix is not unitary")

    def tensor(self) -> np.ndarray:
        return self.unitary.reshape([d for _, d in self.outs] + [d for _, d in self.ins])


def _norm_ref(ref: Any) -> Ref:
    if isinstance(ref, str):
        return ref
    node, port = ref
    if port not in (IN, OUT):
        raise InputError(f"port must be 'in' or 'out', got {port!r}")
    return (str(node), port)


@dataclasses.dataclass(frozen=True)
class BrokenCircuit:
    gates: tuple[Gate, ...]
    broken: tuple[str, ...]
    inputs: Mapping[str, np.ndarray]
    traced: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(self, "broken", tuple(self.broken))
        object.__setattr__(self, "traced", tuple(self.traced))
        states = {str(k): _as_density(v) for k, v in dict(self.inputs).items()}
        object.__setattr__(self, "inputs", states)
        self._validate()

    def _validate(self) -> None:
        dims: dict[tuple, int] = {}
        produced: set[tuple] = set()
        consumed: set[tuple] = set()
        broken = set(self.broken)
        for name, rho in self.inputs.items():
            dims[("line", name)] = rho.shape[0]
            produced.add(("line", name))
        for i, g in enumerate(self.gates):
            for ref, d in g.ins:
                key = _ref_key(ref)
                self._check_dim(dims, key, d)
                if key in consumed:
                    raise InputError(f"line {_ref_str(ref)} is consumed twice")
                if key[0] == "port":
                    if key[1] not in broken or key[2] != OUT:
                        raise InputError(f"gate {i} reads {_ref_str(ref)}; gates read only broken nodes' out ports")
                    if ("port", key[1], IN) not in produced:
                        raise InputError(f"node {key[1]} is read before its input is produced")
                elif key not in produced:
                    raise InputError(f"gate {i} reads line {ref!r} before it is produced")
                consumed.add(key)
            for ref, d in g.outs:
                key = _ref_key(ref)
                self._check_dim(dims, key, d)
                if key in produced:
                    raise InputError(f"line {_ref_str(ref)} is produced twice")
                if key[0] == "port" and (key[1] not in broken or key[2] != IN):
                    raise InputError(f"gate {i} writes {_ref_str(ref)}; gates write only broken nodes' in ports")
                produced.add(key)
        for n in broken:
            if ("port", n, IN) not in produced:
                raise InputError(f"broken node {n} has no gate producing its input")
        for name in self.traced:
            key = ("line", name)
            if key not in produced or key in consumed:
                raise InputError(f"traced line {name!r} must be produced and not consumed")
        for key in produced:
            if key[0] == "line" and key not in consumed and key[1] not in self.traced:
                raise InputError(f"line {key[1]!r} is never consumed; list it as traced")
        object.__setattr__(self, "_dims", dims)

    @staticmethod
    def _check_dim(dims: dict, key: tuple, d: int) -> None:
        if key[0] == "port":
            other = ("port", key[1], OUT if key[2] == IN else IN)
            if other in dims and dims[other] != d:
                raise DimensionError(f"node {key[1]} has in/out dims {dims[other]} and {d}")
        if key in dims and dims[key] != d:
            raise DimensionError(f"line {key} used with dims {dims[key]} and {d}")
        dims[key] = d

    def node_dim(self, node: str) -> int:
        return self._dims[("port", node, IN)]

    def line_dim(self, name: str) -> int:
        return self._dims[("line", name)]

    def node_wires(self) -> list[Wire]:
        return [w for n in self.broken for w in QNode(n, self.node_dim(n)).wires()]

    def unread_nodes(self) -> list[str]:
        read = {_ref_key(r) for g in self.gates for r, _ in g.ins}
        return [n for n in self.broken if ("port", n, OUT) not in read]


def _as_density(state: Any) -> np.ndarray:
    s = np.asarray(state, dtype=np.complex128)
    if s.ndim == 1:
        s = np.outer(s, s.conj())
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise InputError("local input state must be a vector or a square matrix")
    if abs(np.trace(s) - 1.0) > 1e-9:
        raise InputError("local input state must have unit trace")
    return s


def _purify(rho: np.ndarray) -> np.ndarray:
    """Columns ``sqrt(p_j) e_j`` with ``rho = sum_j p_j e_j e_j^dag``."""
    evals, evecs = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    keep = evals > 1e-14
    return evecs[:, keep] * np.sqrt(evals[keep])[None, :]


# contraction --------------------------------------------------------------------------

class _Network:
    """State vector with named axes, grown gate by gate."""

    def __init__(self) -> None:
        self.psi = np.ones((), dtype=np.complex128)
        self.axes: list[tuple] = []

    def attach(self, vec: np.ndarray, axes: list[tuple]) -> None:
        self.psi = np.multiply.outer(self.psi, vec)
        self.axes = self.axes + axes

    def apply(self, g: Gate, open_inputs: Mapping[tuple, tuple]) -> None:
        """Contract gate ``g``; inputs found in ``open_inputs`` become open axes with that name."""
        ids: dict[tuple, int] = {}

        def ident(key):
            if key not in ids:
                ids[key] = len(ids)
            return ids[key]

        psi_ids = [ident(a) for a in self.axes]
        remaining = list(self.axes)
        in_ids, opened = [], []
        for ref, _ in g.ins:
            key = _ref_key(ref)
            if key in open_inputs:
                opened.append(open_inputs[key])
                in_ids.append(ident(open_inputs[key]))
            elif key in remaining:
                in_ids.append(ids[key])
                remaining.remove(key)
            else:
                raise ConstructionError(f"line {_ref_str(ref)} is not available for contraction")
        out_keys = [_ref_key(ref) for ref, _ in g.outs]
        out_ids = [ident(("new",) + k) for k in out_keys]
        if len(ids) > 52:
            raise DimensionError("too many simultaneous lines for dense contraction")
        result = [ids[a] for a in remaining] + [ids[a] for a in opened] + out_ids
        self.psi = np.einsum(self.psi, psi_ids, g.tensor(), out_ids + in_ids, result, optimize=True)
        self.axes = remaining + opened + out_keys

    def density(self, keep: Sequence[tuple]) -> np.ndarray:
        rest = [a for a in self.axes if a not in keep]
        perm = [self.axes.index(a) for a in list(keep) + rest]
        t = np.transpose(self.psi, perm)
        dk = math.prod(t.shape[: len(keep)])
        m = t.reshape(dk, -1)
        return m @ m.conj().T


def _run_network(c: BrokenCircuit, feed_inputs: bool) -> _Network:
    net = _Network()
    if feed_inputs:
        for name, rho in c.inputs.items():
            pur = _purify(rho)
            net.attach(pur, [("line", name), ("purification", name)])
    opens: dict[tuple, tuple] = {}
    for n in c.broken:
        opens[("port", n, OUT)] = ("wire", n, OUT)
    if not feed_inputs:
        for name in c.inputs:
            opens[("line", name)] = ("wire", name, OUT)
    for g in c.gates:
        net.apply(g, opens)
    return net


def _wire_of_axis(c: BrokenCircuit, axis: tuple) -> Wire:
    kind = axis[0]
    if kind == "wire":
        name, port = axis[1], axis[2]
        dim = c.node_dim(name) if name in c.broken else c.line_dim(name)
        return Wire(name, port, dim)
    if kind == "port":
        return Wire(axis[1], axis[2], c.node_dim(axis[1]))
    if kind == "line":
        return Wire(axis[1], IN, c.line_dim(axis[1]))
    raise ConstructionError(f"unexpected axis {axis}")


def contract(c: BrokenCircuit, include: str = NODES_ONLY, method: str = "vector") -> LabeledOperator:
    """Process operator of a broken circuit.

    ``nodes_only`` feeds every local input state and traces every traced line.
    ``nodes_lambdas_Fs`` keeps local inputs as nodes ``name:in`` (the state) and
    ``name:out``; traced lines become nodes whose ``out`` port carries an identity.
    ``method="links"`` evaluates the same operator by linking gate CJ operators.
    """
    if include not in (NODES_ONLY, WITH_LOCAL):
        raise InputError(f"include must be {NODES_ONLY!r} or {WITH_LOCAL!r}")
    if method == "links":
        return _contract_links(c, include)
    if method != "vector":
        raise InputError("method must be 'vector' or 'links'")
    net = _run_network(c, feed_inputs=include == NODES_ONLY)
    keep = [a for a in net.axes if a[0] in ("wire", "port")]
    if include == WITH_LOCAL:
        keep += [a for a in net.axes if a[0] == "line"]
    wires = [_wire_of_axis(c, a) for a in keep]
    op = LabeledOperator.from_ordered(net.density(keep), wires)
    extras = [LabeledOperator.identity([Wire(n, OUT, c.node_dim(n))]) for n in c.unread_nodes()]
    if include == WITH_LOCAL:
        for name, rho in c.inputs.items():
            extras.append(LabeledOperator(SpaceSig((Wire(name, IN, rho.shape[0]),)), rho))
        for name in c.traced:
            extras.append(LabeledOperator.identity([Wire(name, OUT, c.line_dim(name))]))
    return tensor_all([op] + extras)


def _gate_cj(g: Gate) -> LabeledOperator:
    in_w = [Wire(r, OUT, d) if isinstance(r, str) else Wire(r[0], OUT, d) for r, d in g.ins]
    out_w = [Wire(r, IN, d) if isinstance(r, str) else Wire(r[0], IN, d) for r, d in g.outs]
    return cj_of_map(g.unitary, in_w, out_w)


def _contract_links(c: BrokenCircuit, include: str) -> LabeledOperator:
    """Reference route: link gate CJ operators one gate at a time."""
    feed = include == NODES_ONLY
    op = LabeledOperator.scalar(1.0)
    for g in c.gates:
        op = tensor(op, _gate_cj(g))
        for ref, _ in g.ins:
            if not isinstance(ref, str):
                continue
            if ref in c.inputs:
                if not feed:
                    continue
                rho = c.inputs[ref]
                op = tensor(op, LabeledOperator(SpaceSig((Wire(ref, IN, rho.shape[0]),)), rho))
            op = link_trace(op, [ref])
        if feed:
            done = [r for r, _ in g.outs if isinstance(r, str) and r in c.traced]
            op = partial_trace(op, [(t, IN) for t in done]) if done else op
    extras = [LabeledOperator.identity([Wire(n, OUT, c.node_dim(n))]) for n in c.unread_nodes()]
    if not feed:
        extras += [LabeledOperator(SpaceSig((Wire(k, IN, v.shape[0]),)), v) for k, v in c.inputs.items()]
        extras += [LabeledOperator.identity([Wire(t, OUT, c.line_dim(t))]) for t in c.traced]
    return tensor_all([op] + extras)


# unitary processes with local inputs -------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class UnitaryProcessWithInputs:
    """Global unitary from node outputs and local inputs to node inputs and discarded lines.

    ``in_wires`` are ``out`` ports (broken nodes and local inputs); ``out_wires`` are
    ``in`` ports (broken nodes and discarded lines).
    """

    unitary: np.ndarray
    in_wires: tuple[Wire, ...]
    out_wires: tuple[Wire, ...]
    nodes: tuple[str, ...]
    local_inputs: Mapping[str, np.ndarray]
    discarded: tuple[str, ...]
    owners: Mapping[str, str | None]

    def rho_U(self) -> LabeledOperator:
        return cj_of_map(self.unitary, list(self.in_wires), list(self.out_wires))

    def process(self, include: str = NODES_ONLY) -> LabeledOperator:
        """Contract with the local input states (``nodes_only``) or keep them as nodes."""
        axes: list[Wire] = list(self.out_wires) + list(self.in_wires)
        psi = self.unitary.reshape([w.dim for w in axes])
        if include == NODES_ONLY:
            for name, rho in self.local_inputs.items():
                pos = axes.index(next(w for w in axes if w.node == name and w.port == OUT))
                pur = _purify(rho)
                psi = np.moveaxis(np.tensordot(psi, pur, axes=([pos], [0])), -1, pos)
                axes[pos] = Wire("~" + name, OUT, pur.shape[1])
            keep = [w for w in axes if w.node in self.nodes]
        elif include == WITH_LOCAL:
            keep = list(axes)
        else:
            raise InputError(f"include must be {NODES_ONLY!r} or {WITH_LOCAL!r}")
        rest = [w for w in axes if w not in keep]
        perm = [axes.index(w) for w in keep + rest]
        m = np.transpose(psi, perm).reshape(math.prod(w.dim for w in keep), -1)
        op = LabeledOperator.from_ordered(m @ m.conj().T, keep)
        if include == NODES_ONLY:
            return op
        extra = [LabeledOperator(SpaceSig((Wire(k, IN, v.shape[0]),)), v) for k, v in self.local_inputs.items()]
        extra += [LabeledOperator.identity([w.partner()]) for w in self.out_wires if w.node in self.discarded]
        return tensor_all([op] + extra)


def global_unitary(c: BrokenCircuit, owners: Mapping[str, str | None] | None = None) -> UnitaryProcessWithInputs:
    """Compose every gate into one unitary; unread node outputs pass to a discarded line."""
    gates = list(c.gates)
    traced = list(c.traced)
    for n in c.unread_nodes():
        name = _fresh(f"{n}.discard", set(c.broken) | set(c.inputs) | set(traced))
        d = c.node_dim(n)
        gates.append(Gate(np.eye(d), (((n, OUT), d),), ((name, d),)))
        traced.append(name)
    full = BrokenCircuit(tuple(gates), c.broken, c.inputs, tuple(traced))
    net = _run_network(full, feed_inputs=False)
    outs = [a for a in net.axes if a[0] in ("port", "line")]
    ins = [a for a in net.axes if a[0] == "wire"]
    out_w = [_wire_of_axis(full, a) for a in outs]
    in_w = [_wire_of_axis(full, a) for a in ins]
    perm = [net.axes.index(a) for a in outs + ins]
    d_out = math.prod(w.dim for w in out_w)
    u = np.transpose(net.psi, perm).reshape(d_out, -1)
    own = dict(owners or {})
    return UnitaryProcessWithInputs(
        u,
        tuple(in_w),
        tuple(out_w),
        tuple(c.broken),
        dict(c.inputs),
        tuple(traced),
        {k: own.get(k) for k in c.inputs},
    )


def _fresh(base: str, taken: set[str]) -> str:
    name = base
    while name in taken:
        name = "_" + name
    return name


# influence ----------------------------------------------------------------------------------

def _reduced_choi(u: np.ndarray, out_dims: Sequence[int], in_dims: Sequence[int], d_idx: Sequence[int]) -> np.ndarray:
    """``Tr`` over the non-``D`` outputs of ``|U>><<U|``, as a tensor ``[D, inputs, D', inputs']``."""
    t = u.reshape(list(out_dims) + [math.prod(in_dims)])
    rest = [i for i in range(len(out_dims)) if i not in d_idx]
    t = np.transpose(t, list(d_idx) + rest + [len(out_dims)])
    dd = math.prod(out_dims[i] for i in d_idx)
    dr = math.prod(out_dims[i] for i in rest)
    t = t.reshape(dd, dr, -1)
    r = np.tensordot(t, t.conj(), axes=([1], [1]))
    return r.reshape([dd] + list(in_dims) + [dd] + list(in_dims))


def _trivial_on(r: np.ndarray, n_in: int, a_idx: Sequence[int]) -> float:
    """Distance of ``r`` (axes ``[D, ins, D', ins']``) from ``(Tr_A r / d_A) (x) 1_A``."""
    in_dims = r.shape[1:1 + n_in]
    d_a = math.prod(in_dims[i] for i in a_idx)
    rest = [i for i in range(n_in) if i not in a_idx]
    perm = [0] + [1 + i for i in rest] + [1 + i for i in a_idx]
    perm += [1 + n_in] + [2 + n_in + i for i in rest] + [2 + n_in + i for i in a_idx]
    t = np.transpose(r, perm)
    dd = r.shape[0]
    db = math.prod(in_dims[i] for i in rest)
    t = t.reshape(dd * db, d_a, dd * db, d_a)
    red = np.einsum("xaya->xy", t) / d_a
    ideal = np.einsum("xy,ab->xayb", red, np.eye(d_a))
    return float(np.linalg.norm(t - ideal))


def no_influence_unitary(
    u: np.ndarray,
    in_wires: Sequence[Wire],
    out_wires: Sequence[Wire],
    A: Iterable[str],
    D: Iterable[str],
) -> bool:
    """``A`` cannot signal to ``D`` through ``u`` (names refer to wire nodes)."""
    return _influence_strength(u, in_wires, out_wires, A, D) <= _influence_tol(u)


def _influence_tol(u: np.ndarray) -> float:
    return tolerances.current().num * max(1.0, float(np.linalg.norm(u)) ** 2)


def _influence_strength(u, in_wires, out_wires, A, D) -> float:
    A, D = set(A), set(D)
    a_idx = [i for i, w in enumerate(in_wires) if w.node in A]
    d_idx = [i for i, w in enumerate(out_wires) if w.node in D]
    if len(a_idx) != len(A) or len(d_idx) != len(D):
        raise PreconditionError("influence sets must name input and output wires of the unitary")
    if not a_idx or not d_idx:
        return 0.0
    r = _reduced_choi(u, [w.dim for w in out_wires], [w.dim for w in in_wires], d_idx)
    return _trivial_on(r, len(in_wires), a_idx)


def no_influence(rho_U: LabeledOperator, A: Iterable[str], D: Iterable[str]) -> bool:
    """``A`` cannot signal to ``D`` for a unitary CJ operator.

    ``A`` names input nodes (their ``out`` wires) and ``D`` output nodes (their
    ``in`` wires); the operator must be rank one.
    """
    outs = [w for w in rho_U.sig.wires if w.port == IN]
    ins = [w for w in rho_U.sig.wires if w.port == OUT]
    m = rho_U.reorder(outs + ins)
    evals, evecs = np.linalg.eigh(0.5 * (m + m.conj().T))
    if np.sum(evals > tolerances.current().rank * max(1.0, evals.max())) != 1:
        raise PreconditionError("no_influence needs the CJ operator of a unitary (rank one)")
    vec = evecs[:, -1] * math.sqrt(evals[-1])
    d_out = math.prod(w.dim for w in outs)
    return no_influence_unitary(vec.reshape(d_out, -1), ins, outs, A, D)


def causal_structure(u: UnitaryProcessWithInputs) -> Dag:
    """Direct-cause graph: an arrow wherever an input node can signal to an output node."""
    names = list(dict.fromkeys([w.node for w in u.in_wires] + [w.node for w in u.out_wires]))
    edges = []
    outs = list(u.out_wires)
    ins = list(u.in_wires)
    for d_i, dw in enumerate(outs):
        r = _reduced_choi(u.unitary, [w.dim for w in outs], [w.dim for w in ins], [d_i])
        tol = _influence_tol(u.unitary)
        for a_i, aw in enumerate(ins):
            if aw.node == dw.node:
                continue
            if _trivial_on(r, len(ins), [a_i]) > tol:
                edges.append((aw.node, dw.node))
    return Dag(names, edges)


# factorization of unitary CJ operators -------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class FactorizationReport:
    holds: bool
    preconditions_ok: bool
    violations: tuple[str, ...]
    factors: tuple[LabeledOperator, ...]
    max_commutator: float
    reconstruction_error: float


def verify_factorization(
    rho_U: LabeledOperator,
    outputs: Sequence[Iterable[str]],
    influencers: Sequence[Iterable[str]],
) -> FactorizationReport:
    """Check ``rho_U`` equals the product of commuting marginal channels ``B_i | S_i``.

    ``outputs[i]`` lists output nodes ``B_i`` (their ``in`` wires, which must partition
    the outputs) and ``influencers[i]`` lists input nodes ``S_i`` (``out`` wires).
    The precondition is that no input outside ``S_i`` can signal to ``B_i``.
    """
    tol = tolerances.current()
    out_nodes = [w.node for w in rho_U.sig.wires if w.port == IN]
    in_nodes = [w.node for w in rho_U.sig.wires if w.port == OUT]
    groups = [set(b) for b in outputs]
    flat = [n for b in groups for n in b]
    if sorted(flat) != sorted(out_nodes):
        raise PreconditionError("output groups must partition the output wires")
    if len(influencers) != len(groups):
        raise PreconditionError("one influence set per output group is required")
    violations = []
    factors = []
    for b, s in zip(groups, influencers):
        s = set(s)
        if not s <= set(in_nodes):
            raise PreconditionError(f"influence set {sorted(s)} names unknown inputs")
        outside = [n for n in in_nodes if n not in s]
        if outside and not no_influence(rho_U, outside, b):
            violations.append(f"{sorted(outside)} can signal to {sorted(b)}")
        chan = keep_only(rho_U, [(n, IN) for n in b] + [(n, OUT) for n in in_nodes])
        scale = math.prod(rho_U.sig.get((n, OUT)).dim for n in outside)
        factors.append(partial_trace(chan, [(n, OUT) for n in outside]) / scale)
    comm = max((commutator_norm(a, c) for i, a in enumerate(factors) for c in factors[i + 1:]), default=0.0)
    prod = padded_product(factors, rho_U.sig)
    err = prod.distance(rho_U)
    scale = max(1.0, rho_U.norm())
    holds = comm <= tol.num * scale and err <= tol.num * scale
    return FactorizationReport(holds, not violations, tuple(violations), tuple(factors), comm, err)


# compatibility ----------------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class CompatibilityReport:
    compatible: bool
    marginal_error: float
    violations: tuple[str, ...]


def check_compatibility(sigma: ProcessOperator | LabeledOperator, g: Dag, u: UnitaryProcessWithInputs) -> CompatibilityReport:
    """Does ``u`` with its local inputs realize ``sigma`` with influences allowed by ``g``?"""
    op = sigma.op if isinstance(sigma, ProcessOperator) else sigma
    if set(g.nodes) != set(u.nodes):
        raise PreconditionError("graph nodes must be the broken nodes of the unitary process")
    got = u.process(NODES_ONLY)
    err = got.distance(op)
    violations = []
    tol = tolerances.current()
    if err > tol.dilate * max(1.0, op.norm()):
        violations.append(f"marginal differs from the process (error {err:.3g})")
    ins, outs = list(u.in_wires), list(u.out_wires)
    itol = _influence_tol(u.unitary)
    for i, v in enumerate(outs):
        if v.node not in g.nodes:
            continue
        r = _reduced_choi(u.unitary, [w.dim for w in outs], [w.dim for w in ins], [i])
        allowed = set(g.parents(v.node))
        for a_i, a in enumerate(ins):
            if a.node in u.local_inputs:
                ok_source = u.owners.get(a.node) == v.node
            else:
                ok_source = a.node in allowed
            if not ok_source and _trivial_on(r, len(ins), [a_i]) > itol:
                violations.append(f"{a.node} signals to {v.node}")
    return CompatibilityReport(not violations, err, tuple(violations))


# Markov dilation ---------------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Dilation:
    circuit: BrokenCircuit
    owners: Mapping[str, str]
    reconstruction_error: float

    def unitary_process(self) -> UnitaryProcessWithInputs:
        return global_unitary(self.circuit, self.owners)


def _stinespring_unitary(x: np.ndarray, d_a: int, d_l: int, d_lam: int, d_f: int) -> np.ndarray:
    """Unitary ``L (x) Lambda -> A (x) F`` whose ``Lambda = 0`` column block realizes the CJ operator ``x``."""
    evals, evecs = np.linalg.eigh(0.5 * (x + x.conj().T))
    keep = evals > 1e-12 * max(1.0, float(evals.max(initial=0.0)))
    kraus = [math.sqrt(e) * evecs[:, i].reshape(d_a, d_l) for i, e in zip(np.where(keep)[0], evals[keep])]
    if len(kraus) > d_f:
        raise ConstructionError("garbage space too small for the Kraus rank")
    iso = np.zeros((d_a, d_f, d_l), dtype=complex)
    for s, k in enumerate(kraus):
        iso[:, s, :] = k
    iso = iso.reshape(d_a * d_f, d_l)
    if np.linalg.norm(iso.conj().T @ iso - np.eye(d_l)) > 1e-8:
        raise ConstructionError("block channel is not trace preserving")
    comp = null_space(iso.conj().T)
    u = np.zeros((d_a * d_f, d_l * d_lam), dtype=complex)
    col = 0
    for l in range(d_l):
        u[:, l * d_lam] = iso[:, l]
        for j in range(1, d_lam):
            u[:, l * d_lam + j] = comp[:, col]
            col += 1
    return u


def _block_factors(m: np.ndarray, d_o: int, blk) -> tuple[np.ndarray, float]:
    """``y`` with ``V^dag m V = 1_L (x) y`` on one block, and the residual."""
    v = np.kron(np.eye(d_o), blk.isometry)
    x = v.conj().T @ m @ v
    t = x.reshape(d_o, blk.dimL, blk.dimR, d_o, blk.dimL, blk.dimR)
    y = np.einsum("plrqls->prqs", t) / blk.dimL
    ideal = np.einsum("prqs,lm->plrqms", y, np.eye(blk.dimL))
    return y.reshape(d_o * blk.dimR, d_o * blk.dimR), float(np.linalg.norm(t - ideal))


def dilate_markov(sigma: ProcessOperator, g: Dag, seed: int = SEED) -> Dilation:
    """Circuit with one local input per node that reproduces a Markov process operator.

    Nodes are processed in topological order. A bus line carries what later
    channels need from earlier outputs; at each node the algebra generated by the
    node's channel splits the bus into the part the channel reads and the part
    passed on.
    """
    rep = check_markov(sigma, g)
    if not rep.verdict:
        raise PreconditionError("process is not Markov for the graph: " + "; ".join(rep.failures))
    order = list(g.topological_order())
    dims = {n: sigma.dim(n) for n in order}
    taken = set(order)
    pending = dict(rep.channels)
    gates: list[Gate] = []
    inputs: dict[str, np.ndarray] = {}
    owners: dict[str, str] = {}
    traced: list[str] = []
    bus: Wire | None = None
    prev: str | None = None
    for step, v in enumerate(order):
        d_a = dims[v]
        p_wires = ([bus] if bus is not None else []) + ([Wire(prev, OUT, dims[prev])] if prev is not None else [])
        d_p = math.prod(w.dim for w in p_wires)
        a_in = Wire(v, IN, d_a)
        rho = align(pending.pop(v), SpaceSig.of([a_in] + p_wires))
        m = rho.reorder([a_in] + p_wires)
        alg = generate_algebra(slices(m, d_a, d_p), ambient_dim=d_p)
        dec = wedderburn_decompose(alg, seed)
        blocks = dec.blocks
        xs, ranks = [], []
        for blk in blocks:
            vv = np.kron(np.eye(d_a), blk.isometry)
            x = (vv.conj().T @ m @ vv).reshape(d_a * blk.dimL, blk.dimR, d_a * blk.dimL, blk.dimR)
            x = np.einsum("ajbj->ab", x) / blk.dimR
            xs.append(x)
            ev = np.linalg.eigvalsh(0.5 * (x + x.conj().T))
            ranks.append(int(np.sum(ev > 1e-12 * max(1.0, ev.max()))))
        mult = max(math.ceil(r / b.dimL) for r, b in zip(ranks, blocks))
        d_lam = d_a * mult
        uniform = len({b.dimL for b in blocks}) == 1
        d_f = [b.dimL * mult for b in blocks]
        if uniform:
            bus_blocks = [b.dimR for b in blocks]
            garbage_dim = d_f[0]
        else:
            bus_blocks = [f * b.dimR for f, b in zip(d_f, blocks)]
            garbage_dim = 1
        bus_dim = sum(bus_blocks)
        bus_off = np.concatenate([[0], np.cumsum(bus_blocks)[:-1]]).astype(int)
        col_off = dec.offsets()
        # gate matrix on (P basis index c, Lambda) -> (A, garbage, bus)
        t = np.zeros((d_a, garbage_dim, bus_dim, d_p, d_lam), dtype=complex)
        for k, blk in enumerate(blocks):
            uk = _stinespring_unitary(xs[k], d_a, blk.dimL, d_lam, d_f[k]).reshape(d_a, d_f[k], blk.dimL, d_lam)
            for l in range(blk.dimL):
                for r in range(blk.dimR):
                    c = col_off[k] + l * blk.dimR + r
                    if uniform:
                        t[:, :, bus_off[k] + r, c, :] = uk[:, :, l, :]
                    else:
                        for f in range(d_f[k]):
                            t[:, 0, bus_off[k] + f * blk.dimR + r, c, :] = uk[:, f, l, :]
        vall = dec.unitary()
        gate = np.einsum("afbcx,pc->afbpx", t, vall).reshape(d_a * garbage_dim * bus_dim, d_p * d_lam)
        lam = _fresh(f"lambda_{v}", taken)
        taken.add(lam)
        inputs[lam] = np.eye(d_lam)[:, 0]
        owners[lam] = v
        ins: list[tuple[Ref, int]] = []
        if bus is not None:
            ins.append((bus.node, bus.dim))
        if prev is not None:
            ins.append(((prev, OUT), dims[prev]))
        ins.append((lam, d_lam))
        outs: list[tuple[Ref, int]] = [((v, IN), d_a)]
        if garbage_dim > 1:
            gname = _fresh(f"garbage_{v}", taken)
            taken.add(gname)
            outs.append((gname, garbage_dim))
            traced.append(gname)
        new_bus = None
        if bus_dim > 1:
            bname = _fresh(f"bus_{step}", taken)
            taken.add(bname)
            outs.append((bname, bus_dim))
            new_bus = Wire(bname, OUT, bus_dim)
        else:
            gate = gate.reshape(d_a * garbage_dim, d_p * d_lam)
        gates.append(Gate(gate, tuple(ins), tuple(outs)))
        # move the remaining channels from P onto the new bus
        for w, chan in list(pending.items()):
            padded = align(chan, chan.sig.union(SpaceSig.of(p_wires)))
            others = [x for x in padded.sig.wires if x.label not in {p.label for p in p_wires}]
            d_o = math.prod(x.dim for x in others)
            mm = padded.reorder(others + p_wires)
            full = np.zeros((d_o, bus_dim, d_o, bus_dim), dtype=complex)
            worst = 0.0
            for k, blk in enumerate(blocks):
                y, res = _block_factors(mm, d_o, blk)
                worst = max(worst, res)
                y4 = y.reshape(d_o, blk.dimR, d_o, blk.dimR)
                reps = 1 if uniform else d_f[k]
                for f in range(reps):
                    o = bus_off[k] + f * blk.dimR
                    full[:, o:o + blk.dimR, :, o:o + blk.dimR] = y4
            rebuilt = _embed_blocks(full.reshape(d_o * bus_dim, -1), d_o, blocks, vall, uniform, d_f)
            worst = max(worst, float(np.linalg.norm(rebuilt - mm)))
            if worst > 1e-7 * max(1.0, np.linalg.norm(mm)):
                raise ConstructionError(f"channel of {w} does not commute blockwise with the channel of {v}")
            new_wires = others + ([new_bus] if new_bus is not None else [])
            pending[w] = LabeledOperator.from_ordered(full.reshape(d_o * bus_dim, -1), new_wires)
        bus = new_bus
        prev = v
    if bus is not None:
        traced.append(bus.node)
    circuit = BrokenCircuit(tuple(gates), tuple(order), inputs, tuple(traced))
    got = contract(circuit, NODES_ONLY)
    err = got.distance(sigma.op)
    if err > tolerances.current().dilate * max(1.0, sigma.op.norm()):
        raise ConstructionError(f"dilated circuit misses the process (error {err:.3g})")
    return Dilation(circuit, owners, err)


def _embed_blocks(full: np.ndarray, d_o: int, blocks, vall: np.ndarray, uniform: bool, d_f: Sequence[int]) -> np.ndarray:
    """Map a bus-coordinate operator back to ``others (x) P`` as ``sum_k V_k (1_L (x) y_k) V_k^dag``."""
    bus_dim = full.shape[0] // d_o
    f4 = full.reshape(d_o, bus_dim, d_o, bus_dim)
    d_p = vall.shape[0]
    out = np.zeros((d_o * d_p, d_o * d_p), dtype=complex)
    off = 0
    for k, blk in enumerate(blocks):
        y = f4[:, off:off + blk.dimR, :, off:off + blk.dimR].reshape(d_o * blk.dimR, -1)
        off += blk.dimR * (1 if uniform else d_f[k])
        inner = np.einsum("prqs,lm->plrqms", y.reshape(d_o, blk.dimR, d_o, blk.dimR), np.eye(blk.dimL))
        n = d_o * blk.dimL * blk.dimR
        vk = np.kron(np.eye(d_o), blk.isometry)
        out += vk @ inner.reshape(n, n) @ vk.conj().T
    return out


# example circuits ------------------------------------------------------------------------------------

CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def fine_tuned_cnot_circuit(coin: np.ndarray | None = None, source_state: np.ndarray | None = None) -> BrokenCircuit:
    """``A`` controls a CNOT onto a coin that becomes ``B``'s input; the control is discarded.

    With the maximally mixed coin ``B`` sees white noise whatever ``A`` does.
    """
    coin = np.eye(2) / 2 if coin is None else coin
    source_state = np.array([1.0, 0.0]) if source_state is None else source_state
    prep = Gate(np.eye(2), (("source", 2),), ((("A", IN), 2),))
    cnot = Gate(CNOT, ((("A", OUT), 2), ("coin", 2)), (("control_out", 2), (("B", IN), 2)))
    return BrokenCircuit((prep, cnot), ("A", "B"), {"source": source_state, "coin": coin}, ("control_out",))


def random_local_noise_circuit(
    rng: np.random.Generator,
    n_nodes: int,
    dim: int = 2,
    max_mixing: int = 2,
) -> tuple[BrokenCircuit, dict[str, str]]:
    """Random circuit where each node's private noise enters only the gate producing its input.

    Random two-line gates scramble the available lines (earlier node outputs and
    their descendants); the gate producing node ``A_i``'s input reads some of those
    lines plus the noise line and discards everything except ``A_i:in``.
    """
    nodes = [f"A{i + 1}" for i in range(n_nodes)]
    gates: list[Gate] = []
    inputs: dict[str, np.ndarray] = {}
    owners: dict[str, str] = {}
    traced: list[str] = []
    available: list[tuple[Ref, int]] = []
    counter = 0

    def fresh_line() -> str:
        nonlocal counter
        counter += 1
        return f"w{counter}"

    for v in nodes:
        for _ in range(int(rng.integers(0, max_mixing + 1))):
            if len(available) < 2:
                break
            i, j = sorted(rng.choice(len(available), size=2, replace=False))
            a, b = available[i], available[j]
            new = [(fresh_line(), a[1]), (fresh_line(), b[1])]
            gates.append(Gate(random_unitary(rng, a[1] * b[1]), (a, b), tuple(new)))
            available = [x for k, x in enumerate(available) if k not in (i, j)] + new
        lam = f"lambda_{v}"
        inputs[lam] = random_density(rng, dim)
        owners[lam] = v
        k = int(rng.integers(0, min(2, len(available)) + 1))
        picks = sorted(rng.choice(len(available), size=k, replace=False)) if k else []
        read = [available[p] for p in picks]
        available = [x for p, x in enumerate(available) if p not in picks]
        ins = tuple(read) + ((lam, dim),)
        d_in = math.prod(d for _, d in ins)
        d_f = d_in // dim
        outs: list[tuple[Ref, int]] = [((v, IN), dim)]
        if d_f > 1:
            f = fresh_line()
            outs.append((f, d_f))
            traced.append(f)
        gates.append(Gate(random_unitary(rng, d_in), ins, tuple(outs)))
        available.append(((v, OUT), dim))
    for ref, d in available:
        if isinstance(ref, str):
            traced.append(ref)
    return BrokenCircuit(tuple(gates), tuple(nodes), inputs, tuple(traced)), owners


def random_density(rng: np.random.Generator, d: int) -> np.ndarray:
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


# serialization ----------------------------------------------------------------------------------------

def _ref_to_json(ref: Ref, dim: int) -> dict[str, Any]:
    if isinstance(ref, str):
        return {"line": ref, "dim": int(dim)}
    return {"node": ref[0], "port": ref[1], "dim": int(dim)}


def _ref_from_json(obj: Mapping[str, Any]) -> tuple[Ref, int]:
    try:
        dim = int(obj["dim"])
        if "line" in obj:
            return str(obj["line"]), dim
        return (str(obj["node"]), str(obj["port"])), dim
    except KeyError as exc:
        raise InputError(f"wire reference missing {exc}") from None


def _complex_to_json(m: np.ndarray) -> list[list[float]]:
    return [[float(z.real), float(z.imag)] for z in np.asarray(m).reshape(-1)]


def _complex_from_json(entries: Any, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.asarray(entries, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] != math.prod(shape):
        raise InputError(f"expected {math.prod(shape)} [re, im] pairs")
    return (arr[:, 0] + 1j * arr[:, 1]).reshape(shape)


def circuit_to_json(c: BrokenCircuit) -> dict[str, Any]:
    return {
        "gates": [
            {
                "unitary": _complex_to_json(g.unitary),
                "in": [_ref_to_json(r, d) for r, d in g.ins],
                "out": [_ref_to_json(r, d) for r, d in g.outs],
            }
            for g in c.gates
        ],
        "broken": list(c.broken),
        "inputs": {k: {"dim": int(v.shape[0]), "state": _complex_to_json(v)} for k, v in c.inputs.items()},
        "traced": list(c.traced),
    }


def circuit_from_json(obj: Mapping[str, Any]) -> BrokenCircuit:
    for key in ("gates", "broken"):
        if key not in obj:
            raise InputError(f"circuit document needs {key!r}")
    gates = []
    for i, entry in enumerate(obj["gates"]):
        try:
            ins = tuple(_ref_from_json(x) for x in entry["in"])
            outs = tuple(_ref_from_json(x) for x in entry["out"])
            d_in = math.prod(d for _, d in ins)
            d_out = math.prod(d for _, d in outs)
            gates.append(Gate(_complex_from_json(entry["unitary"], (d_out, d_in)), ins, outs))
        except KeyError as exc:
            raise InputError(f"gates[{i}] missing {exc}") from None
    inputs = {}
    for name, spec in dict(obj.get("inputs", {})).items():
        d = int(spec["dim"])
        inputs[str(name)] = _complex_from_json(spec["state"], (d, d))
    return BrokenCircuit(tuple(gates), tuple(str(b) for b in obj["broken"]), inputs, tuple(str(t) for t in obj.get("traced", [])))


def unitary_process_from_circuit(c: BrokenCircuit, owners: Mapping[str, str] | None = None) -> UnitaryProcessWithInputs:
    return global_unitary(c, owners)


__all__ = [
    "Gate",
    "BrokenCircuit",
    "UnitaryProcessWithInputs",
    "contract",
    "global_unitary",
    "no_influence",
    "no_influence_unitary",
    "causal_structure",
    "verify_factorization",
    "check_compatibility",
    "dilate_markov",
    "Dilation",
    "fine_tuned_cnot_circuit",
    "random_local_noise_circuit",
    "circuit_to_json",
    "circuit_from_json",
]
