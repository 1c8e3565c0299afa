import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qcausal import errors
from qcausal.catalog import FIVE_NODE_DIAMOND, chain
from qcausal.classical import random_ccm
from qcausal.graphs import Dag, random_dag
from qcausal.quantum import (
    Instrument,
    ProcessOperator,
    Qcm,
    QNode,
    affine_channel_basis,
    channel_tau,
    check_markov,
    do_conditional,
    identity_instrument,
    induct_quantum,
    induct_to_classical,
    induct_to_quantum,
    marginal,
    measure_prepare_instrument,
    outcome_probs,
    process_from_json,
    process_to_json,
    qcm_from_ccm,
    random_kraus,
    random_qcm,
    random_state,
    sigma_from_qcm,
    validate,
)
from qcausal.splitnode import induct_ccm_to_csm, make_instrument
from qcausal.splitnode import outcome_probs as classical_outcome_probs
from qcausal.tensor_core import IN, OUT, LabeledOperator, SpaceSig, Wire, align, cj_of_map, partial_trace

seeds = st.integers(0, 2**31 - 1)
PAULI_Z = np.diag([1.0, -1.0]).astype(complex)


def single_node(state):
    sig = SpaceSig.of([Wire("A", IN, 2), Wire("A", OUT, 2)])
    return ProcessOperator.from_operator(align(LabeledOperator.from_ordered(state, [Wire("A", IN, 2)]), sig))


def remark_violation(sigma, eps):
    """Traceless hermitian term whose trace over all inputs is nonzero."""
    first = sigma.nodes[0]
    term = LabeledOperator.from_ordered(np.kron(PAULI_Z, np.diag([1.0, 0.0])), [Wire(first.name, OUT, 2), Wire(first.name, IN, 2)])
    return ProcessOperator(sigma.nodes, sigma.op + align(term, sigma.op.sig) * eps)


def test_process_operator_rejects_mismatched_nodes():
    op = LabeledOperator.identity([Wire("A", IN, 2), Wire("A", OUT, 2)])
    with pytest.raises(errors.InputError):
        ProcessOperator((QNode("B", 2),), op)
    with pytest.raises(errors.InputError):
        ProcessOperator.from_operator(LabeledOperator.identity([Wire("A", IN, 2), Wire("A", OUT, 3)]))


@given(seeds)
def test_qcm_processes_are_valid(seed):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, int(rng.integers(1, 4)))
    rep = validate(sigma_from_qcm(random_qcm(rng, g)))
    assert rep.ok, rep.failures


def test_zero_operator_fails_validation():
    zero = LabeledOperator(SpaceSig.of([Wire("A", IN, 2), Wire("A", OUT, 2)]), np.zeros((4, 4)))
    rep = validate(zero)
    assert not rep.ok
    assert rep.trace_condition_error == pytest.approx(np.sqrt(2))


@pytest.mark.parametrize("eps", [1e-3, 1e-5])
def test_remark_violation_reported_with_its_size(eps, rng):
    sigma = sigma_from_qcm(random_qcm(rng, chain(2)))
    rep = validate(remark_violation(sigma, eps))
    assert not rep.ok
    # tracing both inputs leaves 2 eps Z (x) 1, of Frobenius norm 4 eps
    assert rep.trace_condition_error == pytest.approx(4 * eps, rel=1e-6)


def test_affine_basis_spans_and_is_tp():
    basis = affine_channel_basis("A", 2)
    assert len(basis) == 2**4 - 2**2 + 1
    for tau in basis:
        red = partial_trace(tau, [("A", OUT)])
        assert np.allclose(red.matrix, np.eye(2), atol=1e-12)
    flat = np.array([b.matrix.reshape(-1) for b in basis])
    assert np.linalg.matrix_rank(flat[1:] - flat[0], tol=1e-8) == len(basis) - 1


def test_validity_uses_more_than_the_trace_condition():
    # a signalling-loop term that survives the in-trace check but breaks normalization
    sigma = ProcessOperator.from_operator(LabeledOperator.identity([w for n in "AB" for w in QNode(n, 2).wires()]) / 4)
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    w = [Wire("A", IN, 2), Wire("A", OUT, 2), Wire("B", IN, 2), Wire("B", OUT, 2)]
    term = LabeledOperator.from_ordered(np.kron(np.kron(x, x), np.kron(x, x)), w) * 0.1
    rep = validate(ProcessOperator(sigma.nodes, sigma.op + term), full=True)
    assert rep.trace_condition_error < 1e-12
    assert rep.min_eigenvalue == pytest.approx(0.15)
    assert not rep.ok and rep.normalization_error > 1e-3


def test_single_node_measurement_is_certain():
    sigma = single_node(np.diag([1.0, 0.0]).astype(complex))
    p = outcome_probs(sigma, {"A": measure_prepare_instrument("A", 2)})
    assert np.allclose(p.probs, [1.0, 0.0])
    assert outcome_probs(sigma, {}).probs.reshape(()) == pytest.approx(1.0)


@given(seeds)
def test_outcome_probs_normalized_and_marginally_consistent(seed):
    rng = np.random.default_rng(seed)
    sigma = sigma_from_qcm(random_qcm(rng, random_dag(rng, 3)))
    inst = {}
    for v in sigma.names:
        k0 = random_kraus(rng, 2, 2, rank=2)
        inst[v] = Instrument.from_kraus(v, 2, [[k0[0]], [k0[1]]])
    p = outcome_probs(sigma, inst)
    assert p.total() == pytest.approx(1.0, abs=1e-10)
    assert (p.probs > -1e-12).all()
    first = sigma.names[0]
    summed = p.probs.sum(axis=0)
    replaced = outcome_probs(sigma, {**inst, first: Instrument(first, (inst[first].channel(),))})
    assert np.allclose(summed, replaced.probs[0], atol=1e-12)


def test_instrument_must_be_trace_preserving():
    with pytest.raises(errors.InputError):
        Instrument.from_kraus("A", 2, [[np.diag([1.0, 0.0])]])


def test_marginal_over_nothing_is_identity(rng):
    sigma = sigma_from_qcm(random_qcm(rng, chain(2)))
    assert np.array_equal(marginal(sigma, sigma.names).op.matrix, sigma.op.matrix)


def test_marginal_of_chain_keeps_source_state(rng):
    m = random_qcm(rng, chain(2))
    sigma = sigma_from_qcm(m)
    kept = marginal(sigma, ["A1"])
    want = align(m.channels["A1"], kept.op.sig)
    assert np.allclose(kept.op.matrix, want.matrix)


def test_childless_node_dropped_with_any_channel(rng):
    sigma = sigma_from_qcm(random_qcm(rng, chain(3)))
    depol = channel_tau("A3", 2, [np.eye(2) / 2, np.array([[0, 1], [1, 0]]) / 2, np.array([[0, -1j], [1j, 0]]) / 2, PAULI_Z / 2])
    a = marginal(sigma, ["A1", "A2"], {"A3": depol}).op.matrix
    b = marginal(sigma, ["A1", "A2"]).op.matrix
    assert np.allclose(a, b, atol=1e-12)


def test_marginal_rejects_non_tp_intervention(rng):
    sigma = sigma_from_qcm(random_qcm(rng, chain(2)))
    bad = channel_tau("A2", 2, [np.diag([1.0, 0.0])])
    with pytest.raises(errors.PreconditionError):
        marginal(sigma, ["A1"], {"A2": bad})


def test_do_on_empty_set_is_sigma_and_single_node_gives_identity(rng):
    sigma = sigma_from_qcm(random_qcm(rng, chain(2)))
    assert np.array_equal(do_conditional(sigma, []).matrix, sigma.op.matrix)
    one = single_node(random_state(rng, 2))
    assert np.allclose(do_conditional(one, ["A"]).matrix, np.eye(2))


def test_do_conditional_of_markov_process_is_truncated_product(rng):
    m = random_qcm(rng, FIVE_NODE_DIAMOND)
    sigma = sigma_from_qcm(m)
    got = do_conditional(sigma, ["A4"])
    prod = None
    for v in ("A1", "A2", "A3", "A5"):
        c = align(m.channels[v], got.sig)
        prod = c if prod is None else prod @ c
    assert np.allclose(got.matrix, prod.matrix, atol=1e-10)


def test_do_then_prepare_state_matches_source_replacement(rng):
    m = random_qcm(rng, chain(2))
    sigma = sigma_from_qcm(m)
    rho = random_state(rng, 2)
    do = do_conditional(sigma, ["A1"])
    # feeding rho out of A1 is the same as replacing A1's mechanism by the preparation of rho
    prep = LabeledOperator.from_ordered(rho.T, [Wire("A1", OUT, 2)])
    fed = partial_trace(do @ align(prep, do.sig), [("A1", OUT)])
    chan = m.channels["A2"]
    want = partial_trace(chan @ align(LabeledOperator.from_ordered(rho.T, [Wire("A1", OUT, 2)]), chan.sig), [("A1", OUT)])
    assert np.allclose(fed.matrix, align(want, fed.sig).matrix, atol=1e-12)


def test_single_node_qcm_is_padded_state():
    m = random_qcm(np.random.default_rng(3), Dag("A"))
    sigma = sigma_from_qcm(m)
    assert np.allclose(sigma.op.matrix, align(m.channels["A"], sigma.op.sig).matrix)


def test_qcm_rejects_wrong_channel_wires(rng):
    m = random_qcm(rng, chain(2))
    with pytest.raises(errors.InputError):
        Qcm(m.graph, m.dims, {"A1": m.channels["A1"], "A2": m.channels["A1"]})


def test_non_commuting_channels_rejected():
    g = Dag("ABC", [("A", "B"), ("A", "C")])
    rng = np.random.default_rng(0)
    dims = {v: 2 for v in "ABC"}
    chans = {
        "A": cj_of_map(random_kraus(rng, 1, 2), [], [Wire("A", IN, 2)]),
        "B": cj_of_map(random_kraus(rng, 2, 2), [Wire("A", OUT, 2)], [Wire("B", IN, 2)]),
        "C": cj_of_map(random_kraus(rng, 2, 2), [Wire("A", OUT, 2)], [Wire("C", IN, 2)]),
    }
    with pytest.raises(errors.PreconditionError):
        sigma_from_qcm(Qcm(g, dims, chans))


def test_classical_embedding_matches_diagonal_induction(rng):
    m = random_ccm(rng, FIVE_NODE_DIAMOND)
    a = sigma_from_qcm(qcm_from_ccm(m)).op.matrix
    b = induct_to_quantum(induct_ccm_to_csm(m)).op.matrix
    assert np.allclose(a, b)


@given(seeds)
def test_markov_round_trip_recovers_channels(seed):
    rng = np.random.default_rng(seed)
    m = random_qcm(rng, random_dag(rng, int(rng.integers(1, 5))))
    rep = check_markov(sigma_from_qcm(m), m.graph)
    assert rep.verdict, rep.failures
    assert rep.reconstruction_error < 1e-8
    for v in m.graph.nodes:
        assert np.allclose(rep.channels[v].reorder(list(m.channels[v].sig.wires)), m.channels[v].matrix, atol=1e-8) or \
            np.allclose(align(m.channels[v], rep.channels[v].sig).matrix, rep.channels[v].matrix, atol=1e-8)


def test_entangled_parallel_pair_is_not_markov_for_edgeless_graph():
    phi = np.array([1, 0, 0, 1]) / np.sqrt(2)
    state = LabeledOperator.from_ordered(np.outer(phi, phi).astype(complex), [Wire("A", IN, 2), Wire("B", IN, 2)])
    sig = SpaceSig.of([w for n in "AB" for w in QNode(n, 2).wires()])
    sigma = ProcessOperator.from_operator(align(state, sig))
    assert validate(sigma).ok
    assert not check_markov(sigma, Dag("AB")).verdict


def test_check_markov_rejects_node_mismatch(rng):
    sigma = sigma_from_qcm(random_qcm(rng, chain(2)))
    with pytest.raises(errors.PreconditionError):
        check_markov(sigma, chain(3))


@given(seeds)
def test_markov_for_every_supergraph(seed):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, 4, edge_prob=0.3)
    sigma = sigma_from_qcm(random_qcm(rng, g))
    order = g.topological_order()
    missing = [(a, b) for i, a in enumerate(order) for b in order[i + 1:] if (a, b) not in g.edges]
    if not missing:
        return
    extra = missing[int(rng.integers(len(missing)))]
    assert check_markov(sigma, g.with_edges([extra])).verdict


def test_diagonal_induction_round_trip_and_measurement(rng):
    proc = induct_ccm_to_csm(random_ccm(rng, chain(3)))
    sigma = induct_quantum(proc, "kappa->sigma")
    back = induct_quantum(sigma, "sigma->kappa")
    assert np.allclose(back.tensor, proc.tensor)
    assert check_markov(sigma, chain(3)).verdict
    q = outcome_probs(sigma, {v: measure_prepare_instrument(v, 2) for v in sigma.names})
    c = classical_outcome_probs(proc, {v: make_instrument(v, 2, "breaking", z=0) for v in proc.nodes})
    assert np.allclose(q.probs, c.probs)
    with pytest.raises(errors.InputError):
        induct_quantum(proc, "sideways")


def test_non_diagonal_process_rejected_by_classical_induction(rng):
    with pytest.raises(errors.PreconditionError):
        induct_to_classical(sigma_from_qcm(random_qcm(rng, chain(2))))


def test_identity_instrument_is_link_operator():
    inst = identity_instrument("A", 3)
    assert np.allclose(inst.channel().matrix.trace(), 3)


def test_process_json_round_trip(rng):
    sigma = sigma_from_qcm(random_qcm(rng, chain(2)))
    back = process_from_json(process_to_json(sigma))
    assert np.array_equal(back.op.matrix, sigma.op.matrix)
    doc = process_to_json(sigma)
    doc["nodes"][0]["dim"] = 3
    with pytest.raises(errors.InputError):
        process_from_json(doc)
