"""Quantum process operators, interventions, quantum causal models and Markov checks.

An intervention with outcome ``k`` at a node is stored as the transpose of the
Choi-Jamiolkowski operator of its CP map from ``node:in`` to ``node:out``; the
probability of an outcome tuple is then the plain trace of the process operator
times the tensor product of those operators.
"""

from __future__ import annotations

import dataclasses
import functools
import itertools
import math
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import tolerances
from .classical import Dist
from .errors import InputError, PreconditionError
from .graphs import Dag
from .splitnode import ClassicalProcess, full_sig
from .tensor_core import (
    IN,
    OUT,
    LabeledOperator,
    SpaceSig,
    Wire,
    align,
    cj_of_map,
    commutator_norm,
    hermitian_part,
    link_trace,
    operator_from_json,
    operator_to_json,
    padded_product,
    partial_trace,
    tau_id,
)


@dataclasses.dataclass(frozen=True)
class QNode:
    name: str
    dim: int

    def wires(self) -> tuple[Wire, Wire]:
        return Wire(self.name, IN, self.dim), Wire(self.name, OUT, self.dim)


@dataclasses.dataclass(frozen=True)
class ProcessOperator:
    """A process operator over quantum nodes. Validity is checked by :func:`validate`."""

    nodes: tuple[QNode, ...]
    op: LabeledOperator

    def __post_init__(self) -> None:
        nodes = tuple(sorted(self.nodes, key=lambda n: n.name.encode("utf-8")))
        object.__setattr__(self, "nodes", nodes)
        expected = SpaceSig.of([w for n in nodes for w in n.wires()])
        if expected != self.op.sig:
            raise InputError(f"operator wires {self.op.sig} do not match nodes {expected}")

    @classmethod
    def from_operator(cls, op: LabeledOperator) -> "ProcessOperator":
        dims: dict[str, int] = {}
        for w in op.sig.wires:
            if dims.setdefault(w.node, w.dim) != w.dim:
                raise InputError(f"node {w.node} has unequal in/out dimensions")
        return cls(tuple(QNode(n, d) for n, d in dims.items()), op)

    @property
    def names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def dim(self, node: str) -> int:
        for n in self.nodes:
            if n.name == node:
                return n.dim
        raise InputError(f"unknown node {node!r}")

    def hat(self) -> LabeledOperator:
        """Unit-trace normalization."""
        return self.op / self.op.trace().real


# interventions --------------------------------------------------------------------

def channel_tau(node: str, dim: int, kraus: Sequence[np.ndarray]) -> LabeledOperator:
    """Intervention operator of a CP map from ``node:in`` to ``node:out``."""
    rho = cj_of_map(kraus, [Wire(node, IN, dim)], [Wire(node, OUT, dim)])
    return rho.transpose()


@dataclasses.dataclass(frozen=True)
class Instrument:
    node: str
    taus: tuple[LabeledOperator, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "taus", tuple(self.taus))
        if not self.taus:
            raise InputError("instrument needs at least one outcome")
        total = functools.reduce(lambda a, b: a + b, self.taus)
        # transpose of a trace-preserving CJ operator: tracing the output leaves identity on the input
        red = partial_trace(total, [(self.node, OUT)])
        tol = tolerances.current().tp
        if np.linalg.norm(red.matrix - np.eye(red.sig.dim)) > tol * max(1.0, red.sig.dim):
            raise InputError(f"instrument at {self.node} is not trace preserving")

    @classmethod
    def from_kraus(cls, node: str, dim: int, outcomes: Sequence[Sequence[np.ndarray]]) -> "Instrument":
        return cls(node, tuple(channel_tau(node, dim, ks) for ks in outcomes))

    @property
    def dim(self) -> int:
        return self.taus[0].sig.wires[0].dim

    def channel(self) -> LabeledOperator:
        return functools.reduce(lambda a, b: a + b, self.taus)


def identity_instrument(node: str, dim: int) -> Instrument:
    return Instrument(node, (tau_id(node, dim),))


def measure_prepare_instrument(node: str, dim: int, prepare: np.ndarray | None = None, basis: np.ndarray | None = None) -> Instrument:
    """Measure ``node:in`` in ``basis`` (columns) and prepare ``prepare`` (a pure state vector)."""
    basis = np.eye(dim) if basis is None else np.asarray(basis, complex)
    phi = np.eye(dim)[:, 0] if prepare is None else np.asarray(prepare, complex)
    outcomes = [[np.outer(phi, basis[:, k].conj())] for k in range(dim)]
    return Instrument.from_kraus(node, dim, outcomes)


def random_kraus(rng: np.random.Generator, d_in: int, d_out: int, rank: int | None = None) -> list[np.ndarray]:
    """Kraus operators of a random channel from a Haar-like random isometry."""
    rank = rank or d_in * d_out
    g = rng.normal(size=(d_out * rank, d_in)) + 1j * rng.normal(size=(d_out * rank, d_in))
    q, r = np.linalg.qr(g)
    q = q * (np.diag(r) / np.abs(np.diag(r)))[None, :]
    return [q[i * d_out:(i + 1) * d_out, :] for i in range(rank)]


def random_unitary(rng: np.random.Generator, d: int) -> np.ndarray:
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))[None, :]


def random_state(rng: np.random.Generator, d: int, rank: int | None = None) -> np.ndarray:
    rank = rank or d
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_tau(rng: np.random.Generator, node: str, dim: int) -> LabeledOperator:
    """A random trace-preserving local intervention (no outcome)."""
    return channel_tau(node, dim, random_kraus(rng, dim, dim))


@functools.lru_cache(maxsize=None)
def _affine_basis_matrices(dim: int) -> tuple[np.ndarray, ...]:
    """Transposed CJ matrices of channels on a d-level node whose affine hull is every channel."""
    target = dim**4 - dim**2
    rng = np.random.default_rng(0x5EED + dim)
    ref = tau_id("_", dim).matrix
    mats = [ref]
    diffs = np.zeros((0, dim**4), dtype=complex)
    while len(mats) < target + 1:
        cand = channel_tau("_", dim, random_kraus(rng, dim, dim)).matrix
        trial = np.vstack([diffs, (cand - ref).reshape(1, -1)])
        if np.linalg.matrix_rank(trial, tol=1e-8) == trial.shape[0]:
            diffs = trial
            mats.append(cand)
    return tuple(mats)


def affine_channel_basis(node: str, dim: int) -> list[LabeledOperator]:
    """Link operator plus random channels; affinely spans all channels at the node."""
    sig = SpaceSig((Wire(node, IN, dim), Wire(node, OUT, dim)))
    return [LabeledOperator(sig, m) for m in _affine_basis_matrices(dim)]


def contract_local(op: LabeledOperator, taus: Mapping[str, LabeledOperator]) -> LabeledOperator:
    """``Tr_T[op * (tensor of taus)]`` for node-local operators, one node at a time."""
    current = op
    for node, tau in taus.items():
        labels = set(tau.sig.labels)
        keep = [w for w in current.sig.wires if w.label not in labels]
        block = list(tau.sig.wires)
        for w in block:
            current.sig.get(w.label)
        dk = math.prod(w.dim for w in keep)
        db = tau.sig.dim
        m = current.reorder(keep + block).reshape(dk, db, dk, db)
        current = LabeledOperator(SpaceSig(tuple(keep)), np.einsum("aibj,ji->ab", m, tau.matrix))
    return current


# validity --------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class ValidityReport:
    ok: bool
    min_eigenvalue: float
    trace_condition_error: float
    normalization_error: float
    failures: tuple[str, ...]


def validate(sigma: ProcessOperator | LabeledOperator, full: bool = True) -> ValidityReport:
    """Positivity, the in-trace identity condition, and unit probability on an affine channel basis."""
    if isinstance(sigma, LabeledOperator):
        sigma = ProcessOperator.from_operator(sigma)
    tol = tolerances.current()
    m = sigma.op.matrix
    scale = max(1.0, float(np.linalg.norm(m)))
    failures = []
    herm_err = float(np.linalg.norm(m - m.conj().T))
    if herm_err > tol.herm * scale:
        failures.append(f"not hermitian (error {herm_err:.3g})")
    min_eig = float(np.linalg.eigvalsh(hermitian_part(m)).min())
    if min_eig < -tol.herm * scale:
        failures.append(f"not positive semidefinite (min eigenvalue {min_eig:.3g})")
    ins = [(n.name, IN) for n in sigma.nodes]
    red = partial_trace(sigma.op, ins)
    trace_err = float(np.linalg.norm(red.matrix - np.eye(red.sig.dim)))
    if trace_err > tol.tp * max(1.0, math.sqrt(red.sig.dim)):
        failures.append(f"tracing all inputs does not give the identity (error {trace_err:.3g})")
    norm_err = 0.0
    if full and not failures:
        norm_err = _affine_normalization_error(sigma)
        if norm_err > tol.tp * scale:
            failures.append(f"probabilities do not sum to one for some channel tuple (error {norm_err:.3g})")
    return ValidityReport(not failures, min_eig, trace_err, norm_err, tuple(failures))


def _affine_normalization_error(sigma: ProcessOperator) -> float:
    """Largest ``|Tr[sigma * tensor of taus] - 1|`` over all affine-basis tuples."""
    dims = [n.dim**2 for n in sigma.nodes]
    t = sigma.op.matrix.reshape(1, *dims, *dims)
    n = len(dims)
    for i, node in enumerate(sigma.nodes):
        basis = np.stack(_affine_basis_matrices(node.dim))  # (B, D, D)
        rest = n - i
        # contract the leading node block of the remaining tensor with every basis element
        batch = t.shape[0]
        d0 = dims[i]
        drest = int(np.prod(dims[i + 1:])) if rest > 1 else 1
        m = t.reshape(batch, d0, drest, d0, drest)
        t = np.einsum("naibj,kba->nkij", m, basis).reshape(batch * basis.shape[0], *dims[i + 1:], *dims[i + 1:])
    totals = t.reshape(-1)
    return float(np.abs(totals - 1.0).max(initial=0.0))


# probabilities, marginals, do -----------------------------------------------------

def outcome_probs(sigma: ProcessOperator, instruments: Mapping[str, Instrument]) -> Dist:
    """``P(k_1..k_n) = Tr[sigma * tensor of tau^{k_i}]``; missing nodes get the link operator."""
    for n in instruments:
        sigma.dim(n)
    dims = [n.dim**2 for n in sigma.nodes]
    t = sigma.op.matrix.reshape(1, *dims, *dims)
    shape: list[int] = []
    for i, node in enumerate(sigma.nodes):
        inst = instruments.get(node.name) or identity_instrument(node.name, node.dim)
        if inst.dim != node.dim:
            raise InputError(f"instrument at {node.name} has dimension {inst.dim}, node has {node.dim}")
        taus = np.stack([tau.reorder(list(node.wires())) for tau in inst.taus])
        batch = t.shape[0]
        d0 = dims[i]
        drest = int(np.prod(dims[i + 1:])) if i + 1 < len(dims) else 1
        m = t.reshape(batch, d0, drest, d0, drest)
        t = np.einsum("naibj,kba->nkij", m, taus).reshape(batch * len(taus), *dims[i + 1:], *dims[i + 1:])
        shape.append(len(taus))
    probs = t.reshape(shape).real
    return Dist(tuple(sigma.names), probs)


def marginal(
    sigma: ProcessOperator,
    keep: Iterable[str],
    interventions: Mapping[str, LabeledOperator] | None = None,
) -> ProcessOperator:
    """Apply the given trace-preserving interventions (link operator by default) on dropped nodes."""
    keep = set(keep)
    interventions = dict(interventions or {})
    drop = [n for n in sigma.names if n not in keep]
    taus = {}
    for n in drop:
        tau = interventions.get(n)
        if tau is None:
            taus[n] = tau_id(n, sigma.dim(n))
            continue
        red = partial_trace(tau, [(n, OUT)])
        if np.linalg.norm(red.matrix - np.eye(red.sig.dim)) > tolerances.current().tp * max(1.0, red.sig.dim):
            raise PreconditionError(f"intervention at {n} is not trace preserving")
        taus[n] = tau
    return ProcessOperator(tuple(q for q in sigma.nodes if q.name in keep), contract_local(sigma.op, taus))


def do_conditional(sigma: ProcessOperator | LabeledOperator, S: Iterable[str]) -> LabeledOperator:
    """Trace the input wires of the do-nodes."""
    op = sigma.op if isinstance(sigma, ProcessOperator) else sigma
    return partial_trace(op, [(s, IN) for s in S])


# quantum causal models ---------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Qcm:
    graph: Dag
    dims: Mapping[str, int]
    channels: Mapping[str, LabeledOperator]

    def __post_init__(self) -> None:
        for v in self.graph.nodes:
            if v not in self.channels:
                raise InputError(f"missing channel for {v}")
            expected = SpaceSig.of(
                [Wire(v, IN, self.dims[v])] + [Wire(p, OUT, self.dims[p]) for p in self.graph.parents(v)]
            )
            if self.channels[v].sig != expected:
                raise InputError(f"channel for {v} must live on {expected}, got {self.channels[v].sig}")

    def full_sig(self) -> SpaceSig:
        return SpaceSig.of([w for v in self.graph.nodes for w in QNode(v, self.dims[v]).wires()])


def _max_commutator(ops: Sequence[LabeledOperator]) -> float:
    """Largest pairwise commutator; pairs on disjoint wires commute trivially."""
    return max((commutator_norm(a, b) for a, b in itertools.combinations(ops, 2)), default=0.0)


def sigma_from_qcm(m: Qcm, check: bool = True) -> ProcessOperator:
    """Product of the model's channel operators padded to the full space."""
    sig = m.full_sig()
    order = m.graph.topological_order()
    if check:
        comm = _max_commutator([m.channels[v] for v in order])
        if comm > tolerances.current().num:
            raise PreconditionError(f"model channels do not commute (largest commutator {comm:.3g})")
    prod = padded_product([m.channels[v] for v in order], sig).matrix
    return ProcessOperator(tuple(QNode(v, m.dims[v]) for v in m.graph.nodes), LabeledOperator(sig, hermitian_part(prod)))


@dataclasses.dataclass(frozen=True)
class MarkovReport:
    verdict: bool
    channels: Mapping[str, LabeledOperator] | None
    reconstruction_error: float
    max_commutator: float
    failures: tuple[str, ...]


def node_conditional(sigma: ProcessOperator, node: str) -> LabeledOperator:
    """Channel from every output to ``node:in``: trace all other inputs."""
    return partial_trace(sigma.op, [(n, IN) for n in sigma.names if n != node])


def acts_trivially(rho: LabeledOperator, node: str) -> float:
    """Distance between ``rho`` and the identity-padded average over ``node:out``."""
    d = rho.sig.get((node, OUT)).dim
    avg = align(partial_trace(rho, [(node, OUT)]), rho.sig) / d
    return (rho - avg).norm()


def check_markov(sigma: ProcessOperator, g: Dag) -> MarkovReport:
    """Extract each node's channel given its parents and test whether their product is ``sigma``."""
    if set(sigma.names) != set(g.nodes):
        raise PreconditionError("process nodes must match the graph nodes")
    tol = tolerances.current().num
    failures = []
    channels = {}
    for v in g.nodes:
        rho = node_conditional(sigma, v)
        parents = set(g.parents(v))
        others = [n for n in sigma.names if n not in parents]
        for j in others:
            dev = acts_trivially(rho, j)
            if dev > tol * max(1.0, rho.norm()):
                failures.append(f"{v} depends on {j}:out (deviation {dev:.3g})")
        scale = math.prod(sigma.dim(j) for j in others)
        channels[v] = partial_trace(rho, [(j, OUT) for j in others]) / scale
    sig = sigma.op.sig
    comm = _max_commutator(list(channels.values()))
    if comm > tol:
        failures.append(f"extracted channels do not commute (largest commutator {comm:.3g})")
    prod = padded_product([channels[v] for v in g.topological_order()], sig).matrix
    err = float(np.linalg.norm(prod - sigma.op.matrix))
    if err > tol * max(1.0, sigma.op.norm()):
        failures.append(f"product of channels differs from the process (error {err:.3g})")
    ok = not failures
    return MarkovReport(ok, channels if ok else None, err, comm, tuple(failures))


# diagonal inductions -------------------------------------------------------------

def induct_to_quantum(proc: ClassicalProcess) -> ProcessOperator:
    """Put a classical process on the diagonal of a process operator."""
    sig = proc.sig
    op = LabeledOperator(sig, np.diag(proc.tensor.reshape(-1).astype(complex)))
    return ProcessOperator.from_operator(op)


def induct_to_classical(sigma: ProcessOperator) -> ClassicalProcess:
    """Read the diagonal of a process operator that is diagonal in the computational basis."""
    m = sigma.op.matrix
    off = m - np.diag(np.diag(m))
    if np.linalg.norm(off) > tolerances.current().num * max(1.0, np.linalg.norm(m)):
        raise PreconditionError("process operator is not diagonal in the computational product basis")
    cards = {n.name: n.dim for n in sigma.nodes}
    sig = full_sig(cards)
    return ClassicalProcess(sig, np.diag(m).real.reshape(sig.dims))


def induct_quantum(obj: Any, direction: str) -> Any:
    """``direction`` is ``"kappa->sigma"`` or ``"sigma->kappa"``."""
    if direction == "kappa->sigma":
        return induct_to_quantum(obj)
    if direction == "sigma->kappa":
        return induct_to_classical(obj)
    raise InputError(f"unknown induction {direction!r}")


# model generators ---------------------------------------------------------------------

def classical_channel_operator(child: str, parents: Sequence[str], table: np.ndarray, dims: Mapping[str, int]) -> LabeledOperator:
    """Diagonal channel operator of a CPT ``table[parent values..., child value]``."""
    wires = [Wire(p, OUT, dims[p]) for p in parents] + [Wire(child, IN, dims[child])]
    return LabeledOperator.from_ordered(np.diag(np.asarray(table, float).reshape(-1).astype(complex)), wires)


def qcm_from_ccm(m) -> Qcm:
    """Embed a classical causal model diagonally."""
    dims = dict(m.cards)
    chans = {v: classical_channel_operator(v, m.cpts[v].parents, m.cpts[v].table, dims) for v in m.graph.nodes}
    return Qcm(m.graph, dims, chans)


def random_qcm(rng: np.random.Generator, g: Dag, dim: int | Mapping[str, int] = 2) -> Qcm:
    """Random model whose channels commute by construction.

    A parent with a single child is read coherently by it. A parent with several
    children is read by all of them through a measurement in a random basis chosen
    once per parent, so the reading channels commute on that parent.
    """
    dims = {v: dim for v in g.nodes} if isinstance(dim, int) else dict(dim)
    bases = {}
    for v in g.nodes:
        if len(g.children(v)) > 1:
            bases[v] = random_unitary(rng, dims[v])
    chans = {}
    for v in g.nodes:
        pa = list(g.parents(v))
        coherent = [p for p in pa if p not in bases]
        measured = [p for p in pa if p in bases]
        d_coh = math.prod(dims[p] for p in coherent)
        kraus = []
        for outcome in itertools.product(*[range(dims[p]) for p in measured]):
            bra = np.ones((1, 1), dtype=complex)
            for p, k in zip(measured, outcome):
                bra = np.kron(bra, bases[p][:, k].conj()[None, :])
            for kr in random_kraus(rng, d_coh, dims[v], rank=2):
                kraus.append(np.kron(kr, bra))
        in_wires = [Wire(p, OUT, dims[p]) for p in coherent + measured]
        chans[v] = cj_of_map(kraus, in_wires, [Wire(v, IN, dims[v])])
    return Qcm(g, dims, chans)


# serialization --------------------------------------------------------------------------

def process_to_json(sigma: ProcessOperator) -> dict[str, Any]:
    doc = operator_to_json(sigma.op)
    doc["nodes"] = [{"name": n.name, "dim": n.dim} for n in sigma.nodes]
    return doc


def process_from_json(obj: Mapping[str, Any]) -> ProcessOperator:
    op = operator_from_json(obj)
    proc = ProcessOperator.from_operator(op)
    if "nodes" in obj:
        declared = {str(n["name"]): int(n["dim"]) for n in obj["nodes"]}
        actual = {n.name: n.dim for n in proc.nodes}
        if declared != actual:
            raise InputError(f"declared nodes {declared} do not match operator wires {actual}")
    return proc


def link_all(op: LabeledOperator, nodes: Iterable[str]) -> LabeledOperator:
    return link_trace(op, list(nodes))
