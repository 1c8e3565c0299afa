"""Quantum conditional independence, the do-calculus rules and operational checks.

Independence is decided by the quantum conditional mutual information of the
normalized reduced process operator. Every decision is cross-checked against the
star-product factorization identity on a few random local interventions; a
disagreement between the two routes raises :class:`ConsistencyError`.

Settings independence has no entropic form. It is decided either from a supplied
witness ``eta`` (least squares for the complementary factor) or, for a causal
model, from factors built out of the model's channels and an SR partition.

Operational checks extend the process with an environment locus ``E`` that keeps
a coherent copy of the conditioning inputs and one half of a maximally entangled
pair for each conditioning output, then measure ``E`` in a chosen basis.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import tolerances
from .classical import Dist, cond_indep_report, graphical_rule_antecedent, random_ccm
from .errors import (
    ConsistencyError,
    ConstructionError,
    InputError,
    PreconditionError,
    UnsupportedQueryError,
)
from .graphs import Dag, Rule3Cut, SrPartition, d_separated, mutilate, sr_partition, z_not_ancestor_of_w
from .quantum import (
    ProcessOperator,
    Qcm,
    affine_channel_basis,
    channel_tau,
    contract_local,
    qcm_from_ccm,
    random_tau,
    random_unitary,
    sigma_from_qcm,
)
from .tensor_core import (
    IN,
    OUT,
    LabeledOperator,
    SpaceSig,
    Wire,
    align,
    cj_of_map,
    hermitian_part,
    padded_product,
    partial_trace,
    qcmi,
    star,
    tau_id,
    tensor_all,
)

SEED = 0x5EED
MODES = ("plain", "do", "broken", "settings")
# QCMI is quadratic in a small dependence while the star residual is linear, so the
# residual is compared against sqrt(cmi_quantum); disagreements inside this factor
# of that threshold are borderline and tolerated
STAR_BAND = 10.0
# number of random local interventions used by the star-product gate
STAR_SAMPLES = 3
# a violation must exceed this to count as found by a randomized search
VIOLATION_THRESHOLD = 1e-3
# equality of conditional probabilities across intervention choices
_CONDITIONAL_TOL = 1e-9

__all__ = [
    "IndependenceQuery",
    "QuantumIndependenceReport",
    "quantum_independence",
    "star_threshold",
    "independence_report",
    "SettingsReport",
    "settings_independence",
    "settings_factors_from_model",
    "graphical_antecedent",
    "TheoremReport",
    "theorem_verify",
    "ViolationSearch",
    "find_rule_violation",
    "SoundnessReport",
    "d_sep_soundness",
    "ELocusExtension",
    "e_locus_extend",
    "QosReport",
    "qos_check",
    "e_basis_from_factors",
    "ic_instrument",
    "ic_effects",
    "coherent_copy_process",
    "spanning_family",
]


# queries ----------------------------------------------------------------------------

def _names(s: Iterable[str] | str | None) -> frozenset[str]:
    if s is None:
        return frozenset()
    if isinstance(s, str):
        return frozenset([s])
    return frozenset(s)


@dataclasses.dataclass(frozen=True)
class IndependenceQuery:
    """``(Y indep Z | W)`` in one of four modes, after ``do(X)`` and with ``R`` contracted.

    ``tau_R`` maps each remaining node to an intervention; missing nodes get the
    link operator ``tau_id``.
    """

    mode: str
    Y: frozenset[str]
    Z: frozenset[str]
    W: frozenset[str] = frozenset()
    X: frozenset[str] = frozenset()
    tau_R: Mapping[str, LabeledOperator] | None = None

    def __init__(self, mode, Y, Z, W=(), X=(), tau_R=None):
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "Y", _names(Y))
        object.__setattr__(self, "Z", _names(Z))
        object.__setattr__(self, "W", _names(W))
        object.__setattr__(self, "X", _names(X))
        object.__setattr__(self, "tau_R", dict(tau_R) if tau_R is not None else None)

    def check(self, op: LabeledOperator) -> frozenset[str]:
        """Validate against an operator and return the remaining nodes ``R``."""
        if self.mode not in MODES:
            raise InputError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.Y or not self.Z:
            raise PreconditionError("Y and Z must be non-empty")
        sets = [self.Y, self.Z, self.W, self.X]
        for a, b in itertools.combinations(sets, 2):
            if a & b:
                raise PreconditionError("X, Y, Z and W must be disjoint")
        nodes = set(op.sig.nodes())
        unknown = set().union(*sets) - nodes
        if unknown:
            raise InputError(f"unknown nodes {sorted(unknown)}")
        if self.mode == "plain" and self.X:
            raise PreconditionError("plain independence takes no do-set; use mode 'do'")
        rest = frozenset(nodes - set().union(*sets))
        if self.tau_R is not None:
            extra = set(self.tau_R) - rest
            if extra:
                raise PreconditionError(f"interventions given for non-remaining nodes {sorted(extra)}")
        return rest


def _op(sigma: ProcessOperator | LabeledOperator) -> LabeledOperator:
    return sigma.op if isinstance(sigma, ProcessOperator) else sigma


def _dims(op: LabeledOperator) -> dict[str, int]:
    return {w.node: w.dim for w in op.sig.wires}


def _node_wires(op: LabeledOperator, nodes: Iterable[str], ports: Sequence[str] = (IN, OUT)) -> list[tuple[str, str]]:
    return [(n, p) for n in sorted(nodes) for p in ports if op.sig.has((n, p))]


def _contract(op: LabeledOperator, taus: Mapping[str, LabeledOperator]) -> LabeledOperator:
    """``contract_local`` after padding ``op`` with identity on any wire a tau needs."""
    if not taus:
        return op
    extra = [w for t in taus.values() for w in t.sig.wires if not op.sig.has(w.label)]
    if extra:
        op = align(op, op.sig.union(SpaceSig.of(extra)))
    return contract_local(op, taus)


def _r_taus(op: LabeledOperator, rest: Iterable[str], given: Mapping[str, LabeledOperator] | None) -> dict[str, LabeledOperator]:
    dims = _dims(op)
    given = given or {}
    return {r: given.get(r, tau_id(r, dims[r])) for r in sorted(rest)}


def reduced_process(sigma: ProcessOperator | LabeledOperator, q: IndependenceQuery) -> LabeledOperator:
    """Contract ``R`` with ``tau_R`` and trace the inputs of the do-set."""
    op = _op(sigma)
    rest = q.check(op)
    red = _contract(op, _r_taus(op, rest, q.tau_R))
    if q.X:
        red = partial_trace(red, [(x, IN) for x in sorted(q.X)])
    return red


def _qcmi_sets(red: LabeledOperator, q: IndependenceQuery):
    if q.mode == "broken":
        y = _node_wires(red, q.Y)
        z = _node_wires(red, q.Z, (IN,))
        w = _node_wires(red, q.W) + _node_wires(red, q.X, (OUT,)) + _node_wires(red, q.Z, (OUT,))
    else:
        y = _node_wires(red, q.Y)
        z = _node_wires(red, q.Z)
        w = _node_wires(red, q.W) + _node_wires(red, q.X, (OUT,))
    return y, z, w


def _hat(a: LabeledOperator) -> LabeledOperator:
    tr = a.trace().real
    if tr <= 0:
        raise PreconditionError("reduced process has non-positive trace")
    return LabeledOperator(a.sig, hermitian_part(a.matrix) / tr)


def _random_local(rng: np.random.Generator, nodes: Iterable[str], dims: Mapping[str, int]) -> dict[str, LabeledOperator]:
    return {n: random_tau(rng, n, dims[n]) for n in sorted(nodes)}


def _relative(a: LabeledOperator, b: LabeledOperator) -> float:
    scale = max(a.norm(), b.norm(), 1e-300)
    return a.distance(b) / scale


def star_residual(red_hat: LabeledOperator, q: IndependenceQuery, rng: np.random.Generator) -> float:
    """Relative mismatch of the star-product factorization for one random ``tau_Y, tau_Z``."""
    dims = _dims(red_hat)
    ty = _random_local(rng, q.Y, dims)
    tz = _random_local(rng, q.Z, dims)
    if q.mode == "broken":
        no_z_in = partial_trace(red_hat, [(z, IN) for z in sorted(q.Z)])
        lhs = star(red_hat, _contract(no_z_in, ty))
        rhs = star(_contract(red_hat, ty), no_z_in)
    else:
        lhs = star(red_hat, _contract(red_hat, {**ty, **tz}))
        rhs = star(_contract(red_hat, tz), _contract(red_hat, ty))
    return _relative(lhs, rhs)


def star_threshold() -> float:
    """Relative star residual matching the QCMI zero-test tolerance."""
    return math.sqrt(tolerances.current().cmi_quantum)


@dataclasses.dataclass(frozen=True)
class QuantumIndependenceReport:
    independent: bool
    qcmi_bits: float
    star_residual: float | None
    mode: str

    @property
    def star_independent(self) -> bool | None:
        return None if self.star_residual is None else self.star_residual <= star_threshold()


def independence_report(
    sigma: ProcessOperator | LabeledOperator,
    q: IndependenceQuery,
    *,
    gate: bool = True,
    seed: int = SEED,
) -> QuantumIndependenceReport:
    """QCMI verdict for plain, do and broken modes, cross-checked by the star identity."""
    if q.mode == "settings":
        raise UnsupportedQueryError("settings independence has no entropic form; call settings_independence")
    tol = tolerances.current()
    red = _hat(reduced_process(sigma, q))
    y, z, w = _qcmi_sets(red, q)
    value = qcmi(red, y, z, w)
    verdict = value <= tol.cmi_quantum
    resid = None
    if gate:
        rng = np.random.default_rng(seed)
        resid = max(star_residual(red, q, rng) for _ in range(STAR_SAMPLES))
        thr = star_threshold()
        if (verdict and resid > thr * STAR_BAND) or (not verdict and resid < thr / STAR_BAND):
            raise ConsistencyError(
                f"QCMI {value:.3g} bits and star-product residual {resid:.3g} give different verdicts"
            )
    return QuantumIndependenceReport(verdict, value, resid, q.mode)


def quantum_independence(sigma: ProcessOperator | LabeledOperator, q: IndependenceQuery, **kw) -> bool:
    return independence_report(sigma, q, **kw).independent


# settings independence ------------------------------------------------------------

def spanning_family(nodes: Iterable[str], dims: Mapping[str, int]) -> list[dict[str, LabeledOperator]]:
    """Products of per-node channels whose affine hull is every local channel tuple."""
    nodes = sorted(nodes)
    per = [affine_channel_basis(n, dims[n]) for n in nodes]
    return [dict(zip(nodes, combo)) for combo in itertools.product(*per)]


@dataclasses.dataclass(frozen=True)
class SettingsReport:
    independent: bool
    max_residual: float
    route: str
    n_settings: int
    eta: LabeledOperator | None = None


def _lstsq_residual(s: LabeledOperator, eta: LabeledOperator, y_wires: list[Wire], v_wires: list[Wire]) -> float:
    """Smallest ``|s - eta (1_Y (x) xi)|`` over operators ``xi`` on the ``v`` wires."""
    dy = math.prod(w.dim for w in y_wires)
    dv = math.prod(w.dim for w in v_wires)
    a = align(eta, s.sig).reorder(y_wires + v_wires).reshape(dy, dv, dy, dv)
    target = s.reorder(y_wires + v_wires).reshape(dy, dv, dy, dv)
    m = a.reshape(dy * dv * dy, dv)
    t = target.reshape(dy * dv * dy, dv)
    xi, *_ = np.linalg.lstsq(m, t, rcond=None)
    return float(np.linalg.norm(m @ xi - t)) / max(1.0, float(np.linalg.norm(t)))


def settings_independence(
    sigma: ProcessOperator | LabeledOperator | None,
    q: IndependenceQuery,
    *,
    witness: LabeledOperator | None = None,
    model: Qcm | None = None,
    partition: SrPartition | None = None,
) -> SettingsReport:
    """Whether ``sigma^{tau_Z}_{Y W do(X)}`` factors as ``eta_{Y W X^out} xi^{tau_Z}_{W X^out}``.

    With a ``witness`` the complementary factor is fitted by least squares for every
    element of a spanning family of ``tau_Z``. With a ``model`` the factors are
    built from its channels and checked against the process.
    """
    if witness is None and model is None:
        raise UnsupportedQueryError("settings independence needs a witness eta or a causal model")
    if sigma is None:
        if model is None:
            raise InputError("a process operator is required with a witness")
        sigma = sigma_from_qcm(model)
    op = _op(sigma)
    red = reduced_process(op, IndependenceQuery("do", q.Y, q.Z, q.W, q.X, q.tau_R))
    dims = _dims(op)
    family = spanning_family(q.Z, dims)
    tol = tolerances.current()
    worst = 0.0
    if witness is not None:
        base = _contract(red, family[0])
        y_wires = [base.sig.get(l) for l in _node_wires(base, q.Y)]
        v_wires = [w for w in base.sig.wires if w.node not in q.Y]
        if not set(witness.sig.labels) <= set(base.sig.labels):
            raise PreconditionError("witness must live on Y, W and X:out wires")
        for tz in family:
            worst = max(worst, _lstsq_residual(_contract(red, tz), witness, y_wires, v_wires))
        return SettingsReport(worst <= tol.num, worst, "witness", len(family), witness)
    eta, xi_of = settings_factors_from_model(model, q, partition)
    for tz in family:
        s = _contract(red, tz)
        xi = xi_of(tz)
        try:
            prod = padded_product([eta, xi], s.sig)
        except Exception as exc:  # factor wires outside the target space
            raise ConstructionError(f"model factors do not live on the conditioned space: {exc}") from exc
        worst = max(worst, s.distance(prod) / max(1.0, s.norm()))
    return SettingsReport(worst <= tol.num, worst, "model", len(family), eta)


def settings_factors_from_model(model: Qcm, q: IndependenceQuery, partition: SrPartition | None = None):
    """``eta`` and a function ``tau_Z -> xi`` built from the channels of ``model``.

    Uses an SR partition of the graph with edges into ``X`` and into ``Z(W)`` removed,
    where ``Z(W)`` are the nodes of ``Z`` that are not ancestors of ``W``.
    """
    g = model.graph
    X, Y, Z, W = (set(s) for s in (q.X, q.Y, q.Z, q.W))
    z_w = z_not_ancestor_of_w(g, X, Z, W)
    cut = mutilate(g, Rule3Cut(X, Z, W))
    part = partition if partition is not None else sr_partition(cut, Y, Z, W | X)
    if part is None:
        raise UnsupportedQueryError("the rule-3 graph admits no SR partition, so the model route cannot decide")
    w_y = set(part.W_Y) - X
    w_z = set(part.W_Z) - X
    downstream = set().union(*(cut.descendants(z) for z in z_w)) if z_w else set()
    r_z_kept = set(part.R_Z) - downstream
    z_rest = Z - z_w
    ch = model.channels
    dims = model.dims
    given = q.tau_R or {}

    def tau(n: str) -> LabeledOperator:
        return given.get(n, tau_id(n, dims[n]))

    def product(nodes: Iterable[str]) -> LabeledOperator:
        ops = [ch[n] for n in g.topological_order() if n in set(nodes)]
        return padded_product(ops) if ops else LabeledOperator.scalar(1.0)

    eta = _contract(product(Y | w_y | set(part.R_Y)), {r: tau(r) for r in sorted(part.R_Y)})
    xi_base = product(z_rest | w_z | r_z_kept)
    r_taus = {r: tau(r) for r in sorted(r_z_kept)}

    def xi_of(tz: Mapping[str, LabeledOperator]) -> LabeledOperator:
        local = {**r_taus, **{z: tz[z] for z in sorted(z_rest)}}
        return _contract(xi_base, local)

    return eta, xi_of


# graphical antecedents and theorem sweeps ----------------------------------------------

def graphical_antecedent(g: Dag, rule: int, X, Y, Z, W) -> bool:
    """d-separation condition of a do-calculus rule on the appropriately cut graph."""
    return graphical_rule_antecedent(g, rule, X, Y, Z, W)


_RULE_MODE = {1: "do", 2: "broken", 3: "settings"}


@dataclasses.dataclass(frozen=True)
class TheoremReport:
    rule: int
    antecedent: bool
    vacuous: bool
    holds: bool
    max_metric: float
    n_samples: int


def _rule_metric(sigma: ProcessOperator, m: Qcm, rule: int, q: IndependenceQuery, gate: bool) -> float:
    if rule == 3:
        return settings_independence(sigma, q, model=m).max_residual
    return independence_report(sigma, q, gate=gate).qcmi_bits


def theorem_verify(
    m: Qcm,
    rule: int,
    X: Iterable[str],
    Y: Iterable[str],
    Z: Iterable[str],
    W: Iterable[str] = (),
    *,
    n_samples: int = 20,
    seed: int = SEED,
    gate: bool = True,
) -> TheoremReport:
    """Check a rule's consequent for random trace-preserving ``tau_R`` when its antecedent holds."""
    if rule not in _RULE_MODE:
        raise InputError("rule must be 1, 2 or 3")
    X, Y, Z, W = (_names(s) for s in (X, Y, Z, W))
    g = m.graph
    ante = graphical_antecedent(g, rule, X, Y, Z, W)
    if not ante:
        return TheoremReport(rule, False, True, True, 0.0, 0)
    sigma = sigma_from_qcm(m)
    rest = set(g.nodes) - X - Y - Z - W
    rng = np.random.default_rng(seed)
    tol = tolerances.current()
    limit = tol.num if rule == 3 else tol.cmi_quantum
    worst = 0.0
    for _ in range(n_samples):
        tau_r = _random_local(rng, rest, m.dims)
        q = IndependenceQuery(_RULE_MODE[rule], Y, Z, W, X, tau_r)
        worst = max(worst, _rule_metric(sigma, m, rule, q, gate))
    return TheoremReport(rule, True, False, worst <= limit, worst, n_samples)


def _diagonal_settings_metric(sigma: ProcessOperator, q: IndependenceQuery) -> float:
    """Largest ``s2/s1`` of the ``[Y value, tau_Z]`` matrices, one per ``W, X:out`` value.

    For a diagonal process, settings independence makes each matrix rank one.
    """
    op = sigma.op
    red = reduced_process(op, IndependenceQuery("do", q.Y, q.Z, q.W, q.X, q.tau_R))
    family = spanning_family(q.Z, _dims(op))
    cols = []
    y_wires = v_wires = None
    for tz in family:
        s = _contract(red, tz)
        if y_wires is None:
            y_wires = [s.sig.get(l) for l in _node_wires(s, q.Y)]
            v_wires = [w for w in s.sig.wires if w.node not in q.Y]
        dy = math.prod(w.dim for w in y_wires)
        diag = np.diag(s.reorder(y_wires + v_wires)).real
        cols.append(diag.reshape(dy, -1))
    stack = np.stack(cols, axis=1)  # (y, tau, v)
    worst = 0.0
    for v in range(stack.shape[2]):
        sv = np.linalg.svd(stack[:, :, v], compute_uv=False)
        if sv[0] > 1e-12:
            worst = max(worst, float(sv[1] / sv[0]) if len(sv) > 1 else 0.0)
    return worst


@dataclasses.dataclass(frozen=True)
class ViolationSearch:
    found: bool
    draws: int
    value: float
    model: Qcm | None


def find_rule_violation(
    g: Dag,
    rule: int,
    X: Iterable[str],
    Y: Iterable[str],
    Z: Iterable[str],
    W: Iterable[str] = (),
    *,
    max_draws: int = 500,
    seed: int = SEED,
    threshold: float = VIOLATION_THRESHOLD,
    cards: int = 2,
) -> ViolationSearch:
    """Search classical-embedded Markov models for a clear failure of a rule's consequent.

    Rules 1 and 2 are scored by the do or broken QCMI with link operators on ``R``.
    Rule 3 is scored by how far the ``[Y, tau_Z]`` probability matrices are from rank one.
    """
    if rule not in _RULE_MODE:
        raise InputError("rule must be 1, 2 or 3")
    rng = np.random.default_rng(seed)
    best = 0.0
    for draw in range(1, max_draws + 1):
        m = qcm_from_ccm(random_ccm(rng, g, cards))
        sigma = sigma_from_qcm(m, check=False)
        q = IndependenceQuery(_RULE_MODE[rule], Y, Z, W, X)
        if rule == 3:
            value = _diagonal_settings_metric(sigma, q)
        else:
            value = independence_report(sigma, q, gate=False).qcmi_bits
        best = max(best, value)
        if value > threshold:
            return ViolationSearch(True, draw, value, m)
    return ViolationSearch(False, max_draws, best, None)


@dataclasses.dataclass(frozen=True)
class SoundnessReport:
    d_separated: bool
    holds: bool
    max_qcmi: float
    samples: int
    violation: ViolationSearch | None


def d_sep_soundness(
    m: Qcm,
    Y: Iterable[str],
    Z: Iterable[str],
    W: Iterable[str] = (),
    *,
    n_samples: int = 20,
    seed: int = SEED,
    max_draws: int = 500,
) -> SoundnessReport:
    """If ``Y`` and ``Z`` are d-separated by ``W``, sweep random ``tau_R`` and check the plain QCMI.

    Otherwise search classical-embedded models on the same graph for ``I(Y:Z|W) > 1e-3``.
    """
    g = m.graph
    Y, Z, W = (_names(s) for s in (Y, Z, W))
    if not d_separated(g, Y, Z, W):
        search = find_plain_violation(g, Y, Z, W, max_draws=max_draws, seed=seed)
        return SoundnessReport(False, search.found, search.value, search.draws, search)
    sigma = sigma_from_qcm(m)
    rest = set(g.nodes) - Y - Z - W
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        q = IndependenceQuery("plain", Y, Z, W, (), _random_local(rng, rest, m.dims))
        worst = max(worst, independence_report(sigma, q).qcmi_bits)
    return SoundnessReport(True, worst <= tolerances.current().cmi_quantum, worst, n_samples, None)


def find_plain_violation(
    g: Dag,
    Y: Iterable[str],
    Z: Iterable[str],
    W: Iterable[str] = (),
    *,
    max_draws: int = 500,
    seed: int = SEED,
    threshold: float = VIOLATION_THRESHOLD,
    cards: int = 2,
) -> ViolationSearch:
    """Classical-embedded models with ``I(Y:Z|W) > threshold`` and link operators on ``R``."""
    rng = np.random.default_rng(seed)
    best = 0.0
    for draw in range(1, max_draws + 1):
        m = qcm_from_ccm(random_ccm(rng, g, cards))
        sigma = sigma_from_qcm(m, check=False)
        value = independence_report(sigma, IndependenceQuery("plain", Y, Z, W), gate=False).qcmi_bits
        best = max(best, value)
        if value > threshold:
            return ViolationSearch(True, draw, value, m)
    return ViolationSearch(False, max_draws, best, None)


# informationally complete interventions --------------------------------------------

def _tomographic_states(d: int) -> list[np.ndarray]:
    """``|j>`` and ``(|j> + |k>)/sqrt2``, ``(|j> + i|k>)/sqrt2`` for ``j < k``: ``d^2`` states."""
    eye = np.eye(d, dtype=complex)
    states = [eye[j] for j in range(d)]
    for j, k in itertools.combinations(range(d), 2):
        states.append((eye[j] + eye[k]) / math.sqrt(2))
        states.append((eye[j] + 1j * eye[k]) / math.sqrt(2))
    return states


def _measurement_bases(d: int) -> list[np.ndarray]:
    """``d + 1`` bases (columns): Pauli eigenbases for qubits, seeded random bases otherwise."""
    if d == 2:
        h = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
        yb = np.array([[1, 1], [1j, -1j]], dtype=complex) / math.sqrt(2)
        return [np.eye(2, dtype=complex), h, yb]
    rng = np.random.default_rng(SEED + d)
    return [np.eye(d, dtype=complex)] + [random_unitary(rng, d) for _ in range(d)]


def ic_effects(d: int) -> list[np.ndarray]:
    """Informationally complete POVM: every basis projector weighted by ``1/(d+1)``."""
    bases = _measurement_bases(d)
    effects = [np.outer(b[:, k], b[:, k].conj()) / len(bases) for b in bases for k in range(d)]
    stack = np.stack([e.reshape(-1) for e in effects])
    if np.linalg.matrix_rank(stack, tol=1e-8) != d * d:
        raise ConstructionError(f"measurement bases for d={d} are not informationally complete")
    return effects


def ic_instrument(node: str, d: int) -> list[LabeledOperator]:
    """Measure with :func:`ic_effects` then prepare a uniformly chosen tomographic state."""
    bases = _measurement_bases(d)
    states = _tomographic_states(d)
    w = 1.0 / (len(bases) * len(states))
    taus = []
    for b in bases:
        for k in range(d):
            for s in states:
                taus.append(channel_tau(node, d, [math.sqrt(w) * np.outer(s, b[:, k].conj())]))
    return taus


def _prob_table(op: LabeledOperator, groups: Sequence[Sequence[LabeledOperator]]) -> np.ndarray:
    """``P[k_1, ..., k_n] = Tr[op * tensor_i groups[i][k_i]]``; groups must cover ``op``."""
    wires: list[Wire] = []
    for grp in groups:
        wires.extend(grp[0].sig.wires)
    if {w.label for w in wires} != set(op.sig.labels) or len(wires) != len(op.sig):
        raise PreconditionError("outcome groups must partition the operator wires")
    sizes = [grp[0].sig.dim for grp in groups]
    n = len(groups)
    t = op.reorder(wires).reshape(*sizes, *sizes)
    # contract one group at a time; outcome axes accumulate at the end
    for i, grp in enumerate(groups):
        mats = np.stack([g.reorder(list(grp[0].sig.wires)) for g in grp])  # (K, D, D)
        left = n - i
        t = np.tensordot(t, mats, axes=([0, left], [2, 1]))
    return t.real


# environment locus ---------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class ELocusExtension:
    """The process with the conditioning locus replaced by one environment input ``E:in``.

    ``factors`` lists the tensor factors of ``E`` in order, each as ``(node, role)``
    with role ``"copy"`` for the coherent copy of ``node:in`` and ``"pair"`` for the
    partner of the entangled half fed into ``node:out``.
    """

    op: LabeledOperator
    factors: tuple[tuple[str, str], ...]
    factor_dims: tuple[int, ...]

    @property
    def dim(self) -> int:
        return math.prod(self.factor_dims)

    def measured(self, b: np.ndarray) -> LabeledOperator:
        """Unnormalized operator on the remaining wires for the environment outcome ``b``."""
        e = self.op.sig.get(("E", IN))
        proj = LabeledOperator(SpaceSig((e,)), np.outer(b, b.conj()))
        return contract_local(self.op, {"E": proj})


def e_locus_extend(
    sigma: ProcessOperator | LabeledOperator,
    W: Iterable[str],
    X: Iterable[str] = (),
    Z: Iterable[str] = (),
    include_Z_out: bool = False,
    *,
    keep: Iterable[str] = (),
    tau_R: Mapping[str, LabeledOperator] | None = None,
) -> ELocusExtension:
    """Feed ``W:out`` and ``X:out`` (and ``Z:out`` if asked) from the environment and collect ``W:in`` there.

    Nodes outside ``W``, ``X``, ``Z`` and ``keep`` are contracted with ``tau_R``
    (link operators by default); the inputs of ``X`` are traced.
    """
    op = _op(sigma)
    dims = _dims(op)
    W, X, Z, keep = (_names(s) for s in (W, X, Z, keep))
    for a, b in itertools.combinations([W, X, Z, keep], 2):
        if a & b:
            raise PreconditionError("environment node sets must be disjoint")
    if "E" in dims:
        raise PreconditionError("node name 'E' is reserved for the environment")
    rest = set(dims) - W - X - Z - keep
    Zo = Z if include_Z_out else frozenset()
    red = _contract(op, _r_taus(op, rest, tau_R))
    if X:
        red = partial_trace(red, [(x, IN) for x in sorted(X)])
    fed = sorted(W | X | Zo, key=lambda s: s.encode("utf-8"))
    factors: list[tuple[str, str]] = []
    kraus = np.ones((1, 1, 1), dtype=complex)  # (E, out, in)
    out_wires: list[Wire] = []
    in_wires: list[Wire] = []
    for n in fed:
        d = dims[n]
        pair = np.eye(d, dtype=complex).reshape(d, d, 1) / math.sqrt(d)  # (E half, n:out, -)
        if n in W:
            copy = np.eye(d, dtype=complex).reshape(d, 1, d)  # (E copy, -, n:in)
            piece = np.einsum("aoi,bpj->abopij", copy, pair).reshape(d * d, d, d)
            factors += [(n, "copy"), (n, "pair")]
            in_wires.append(Wire(n, IN, d))
        else:
            piece = pair
            factors.append((n, "pair"))
        out_wires.append(Wire(n, OUT, d))
        ke, ko, ki = kraus.shape
        pe, po, pi = piece.shape
        kraus = np.einsum("aoi,bpj->abopij", kraus, piece).reshape(ke * pe, ko * po, ki * pi)
    # vec of each E-slice, laid out on the canonical order of the fed wires
    wires = out_wires + in_wires
    v = kraus.reshape(kraus.shape[0], -1)  # (E, out (x) in)
    canon = SpaceSig.of(wires)
    shape = [w.dim for w in wires]
    perm = [wires.index(w) for w in canon.wires]
    v = v.reshape(-1, *shape).transpose(0, *[p + 1 for p in perm]).reshape(v.shape[0], -1)
    rest_wires = [w for w in red.sig.wires if w.label not in {c.label for c in canon.wires}]
    for w in canon.wires:
        red.sig.get(w.label)
    dr = math.prod(w.dim for w in rest_wires)
    dv = canon.dim
    s = red.reorder(rest_wires + list(canon.wires)).reshape(dr, dv, dr, dv)
    ext = np.einsum("ravb,ea,fb->revf", s, v, v.conj()).reshape(dr * v.shape[0], dr * v.shape[0])
    factor_dims = tuple(dims[n] for n, _ in factors)
    e_wire = Wire("E", IN, int(v.shape[0]))
    out = LabeledOperator.from_ordered(hermitian_part(ext), rest_wires + [e_wire])
    return ELocusExtension(out, tuple(factors), factor_dims)


def _basis_matrix(basis: str | np.ndarray, factor_dims: Sequence[int]) -> np.ndarray:
    if isinstance(basis, str):
        if basis == "computational":
            return np.eye(math.prod(factor_dims), dtype=complex)
        if basis in ("fourier", "hadamard"):
            mats = []
            for d in factor_dims:
                k = np.arange(d)
                mats.append(np.exp(2j * np.pi * np.outer(k, k) / d) / math.sqrt(d))
            out = np.ones((1, 1), dtype=complex)
            for m in mats:
                out = np.kron(out, m)
            return out
        raise InputError(f"unknown basis {basis!r}")
    b = np.asarray(basis, dtype=complex)
    d = math.prod(factor_dims)
    if b.shape != (d, d) or np.linalg.norm(b.conj().T @ b - np.eye(d)) > 1e-9:
        raise InputError(f"basis must be a {d}x{d} unitary (columns are basis vectors)")
    return b


def e_basis_from_factors(ext: ELocusExtension, rho1: LabeledOperator, rho2: LabeledOperator) -> np.ndarray:
    """Environment basis from the block decomposition splitting two commuting factors.

    ``rho1`` and ``rho2`` multiply to the conditioning process and overlap only on
    environment-fed wires. Their shared space is split into blocks ``L_k (x) R_k``
    and measured in that product basis; the other fed wires are measured in the
    computational basis.
    """
    from .operator_algebra import split_commuting

    fed = [Wire(n, IN if role == "copy" else OUT, d) for (n, role), d in zip(ext.factors, ext.factor_dims)]
    labels = {w.label for w in fed}
    overlap = set(rho1.sig.labels) & set(rho2.sig.labels)
    if not overlap <= labels:
        raise PreconditionError("factors may overlap only on environment-fed wires")
    if not overlap:
        return np.eye(ext.dim, dtype=complex)
    split = split_commuting(rho1, rho2)
    shared = list(split.shared)
    others = [w for w in fed if w.label not in overlap]
    d_rest = math.prod(w.dim for w in others)
    u = np.kron(split.decomposition.unitary(), np.eye(d_rest))
    return LabeledOperator.from_ordered(u, shared + others).matrix


@dataclasses.dataclass(frozen=True)
class QosReport:
    variant: int
    holds: bool
    max_deviation: float
    basis: str


def _e_projectors(ext: ELocusExtension, b: np.ndarray) -> list[LabeledOperator]:
    e = ext.op.sig.get(("E", IN))
    return [LabeledOperator(SpaceSig((e,)), np.outer(b[:, k], b[:, k].conj())) for k in range(b.shape[1])]


def _effect_taus(node: str, d: int) -> list[LabeledOperator]:
    sig = SpaceSig((Wire(node, IN, d),))
    return [LabeledOperator(sig, e) for e in ic_effects(d)]


def qos_check(
    sigma: ProcessOperator | LabeledOperator,
    variant: int,
    Y: Iterable[str],
    Z: Iterable[str],
    W: Iterable[str] = (),
    X: Iterable[str] = (),
    *,
    basis: str | np.ndarray = "computational",
    tau_R: Mapping[str, LabeledOperator] | None = None,
) -> QosReport:
    """Operational independence after measuring the environment locus in ``basis``.

    Variant 1: ``k_Y`` and ``k_Z`` independent given the environment outcome, with
    informationally complete instruments at ``Y`` and ``Z``. Variant 2: ``k_Y`` and a
    measurement of ``Z:in`` independent, with ``Z:out`` also fed from the environment.
    Variant 3: ``P(k_Y | environment outcome)`` is the same for every ``tau_Z``.
    """
    op = _op(sigma)
    dims = _dims(op)
    Y, Z, W, X = (_names(s) for s in (Y, Z, W, X))
    for a, b in itertools.combinations([Y, Z, W, X], 2):
        if a & b:
            raise PreconditionError("X, Y, Z and W must be disjoint")
    label = basis if isinstance(basis, str) else "custom"
    ys = sorted(Y)
    if variant == 1:
        ext = e_locus_extend(op, W, X, Z, keep=Y, tau_R=tau_R)
        b = _basis_matrix(basis, ext.factor_dims)
        zs = sorted(Z)
        groups = [ic_instrument(n, dims[n]) for n in ys + zs] + [_e_projectors(ext, b)]
        names = [f"y:{n}" for n in ys] + [f"z:{n}" for n in zs] + ["E"]
        dist = Dist(tuple(names), np.clip(_prob_table(ext.op, groups), 0.0, None))
        rep = cond_indep_report(dist, names[: len(ys)], names[len(ys):-1], ["E"])
        return QosReport(1, rep.independent, rep.max_deviation, label)
    if variant == 2:
        ext = e_locus_extend(op, W, X, Z, include_Z_out=True, keep=Y, tau_R=tau_R)
        b = _basis_matrix(basis, ext.factor_dims)
        zs = sorted(Z)
        groups = [ic_instrument(n, dims[n]) for n in ys] + [_effect_taus(n, dims[n]) for n in zs]
        groups.append(_e_projectors(ext, b))
        names = [f"y:{n}" for n in ys] + [f"z:{n}" for n in zs] + ["E"]
        dist = Dist(tuple(names), np.clip(_prob_table(ext.op, groups), 0.0, None))
        rep = cond_indep_report(dist, names[: len(ys)], names[len(ys):-1], ["E"])
        return QosReport(2, rep.independent, rep.max_deviation, label)
    if variant == 3:
        ext = e_locus_extend(op, W, X, Z, keep=Y, tau_R=tau_R)
        b = _basis_matrix(basis, ext.factor_dims)
        eps = tolerances.current().prob
        ref = None
        worst = 0.0
        for tz in spanning_family(Z, dims):
            reduced = contract_local(ext.op, tz)
            groups = [ic_instrument(n, dims[n]) for n in ys] + [_e_projectors(ext, b)]
            p = _prob_table(reduced, groups)
            p = p.reshape(-1, p.shape[-1])  # (k_Y, b)
            mass = p.sum(axis=0)
            cond = np.where(mass > eps, p / np.where(mass > eps, mass, 1.0), np.nan)
            if ref is None:
                ref = cond
                continue
            both = ~np.isnan(ref) & ~np.isnan(cond)
            # fill outcomes that were impossible so far
            ref = np.where(np.isnan(ref), cond, ref)
            if both.any():
                worst = max(worst, float(np.abs(ref[both] - cond[both]).max()))
        return QosReport(3, worst <= _CONDITIONAL_TOL, worst, label)
    raise InputError("variant must be 1, 2 or 3")


# example processes -----------------------------------------------------------------------

def coherent_copy_process(source: str = "W", targets: tuple[str, str] = ("Y", "Z"), w_state: str = "plus") -> ProcessOperator:
    """``W`` prepared in ``|+>`` (or maximally mixed) and copied coherently onto two qubits.

    The copy is the isometry ``|0> -> |00>, |1> -> |11>`` from ``W:out`` to the inputs of
    the two targets, whose outputs are discarded.
    """
    if w_state == "plus":
        plus = np.array([1, 1], dtype=complex) / math.sqrt(2)
        rho_w = np.outer(plus, plus)
    elif w_state == "mixed":
        rho_w = np.eye(2, dtype=complex) / 2
    else:
        raise InputError("w_state must be 'plus' or 'mixed'")
    y, z = targets
    iso = np.zeros((4, 2), dtype=complex)
    iso[0, 0] = iso[3, 1] = 1.0
    copy = cj_of_map(iso, [Wire(source, OUT, 2)], [Wire(y, IN, 2), Wire(z, IN, 2)])
    state = LabeledOperator(SpaceSig((Wire(source, IN, 2),)), rho_w)
    outs = LabeledOperator.identity([Wire(y, OUT, 2), Wire(z, OUT, 2)])
    return ProcessOperator.from_operator(tensor_all([copy, state, outs]))
