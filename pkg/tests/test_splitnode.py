import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qcausal import errors
from qcausal.catalog import FIVE_NODE_DIAMOND, chain, fork
from qcausal.classical import cond_indep, do_conditional, joint_distribution, random_ccm
from qcausal.graphs import Dag, random_dag
from qcausal.splitnode import (
    ClassicalInstrument,
    ClassicalProcess,
    affine_channel_basis,
    deterministic_channels,
    do_marginal,
    factorize,
    full_sig,
    induct,
    induct_ccm_to_csm,
    induct_process_to_dist,
    is_valid,
    make_instrument,
    operational_check,
    outcome_probs,
    process_from_json,
    process_to_json,
    rel_independence,
)
from qcausal.tensor_core import IN, OUT

seeds = st.integers(0, 2**31 - 1)

STATEMENT = {"plain": "COS1", "do": "COS1", "broken": "COS2", "settings": "COS3"}


def signalling_pair():
    """``Y`` always receives 0 and ``Z`` receives whatever ``Y`` emits."""
    sig = full_sig({"Y": 2, "Z": 2})
    t = np.zeros(sig.dims)  # axes Y:in, Y:out, Z:in, Z:out
    for y_out in range(2):
        t[0, y_out, y_out, :] = 1.0
    return ClassicalProcess(sig, t)


def random_instrument(rng, node, d, n_out=2):
    k = rng.random((n_out, d, d))
    return ClassicalInstrument(node, k / k.sum(axis=(0, 1), keepdims=True))


def test_identity_instruments_give_unit_total(rng):
    proc = induct_ccm_to_csm(random_ccm(rng, chain(3)))
    dist = outcome_probs(proc, {})
    assert dist.probs.shape == (1, 1, 1)
    assert dist.total() == pytest.approx(1.0)


def test_non_disturbing_measurements_reproduce_joint(rng):
    m = random_ccm(rng, FIVE_NODE_DIAMOND)
    proc = induct_ccm_to_csm(m)
    inst = {v: make_instrument(v, 2, "non_disturbing") for v in proc.nodes}
    assert np.allclose(outcome_probs(proc, inst).probs, joint_distribution(m).probs)
    assert np.allclose(induct_process_to_dist(proc).probs, joint_distribution(m).probs)


@given(seeds)
def test_random_instruments_normalized(seed):
    rng = np.random.default_rng(seed)
    proc = induct_ccm_to_csm(random_ccm(rng, random_dag(rng, 3)))
    inst = {v: random_instrument(rng, v, 2, int(rng.integers(1, 4))) for v in proc.nodes}
    assert outcome_probs(proc, inst).total() == pytest.approx(1.0, abs=1e-10)


def test_outcome_probs_unknown_node(rng):
    proc = induct_ccm_to_csm(random_ccm(rng, chain(2)))
    with pytest.raises(errors.InputError):
        outcome_probs(proc, {"Q": make_instrument("Q", 2, "identity")})


def test_instrument_kinds():
    nd = make_instrument("A", 3, "non_disturbing")
    for x in range(3):
        assert nd.kernels[x, x, x] == 1.0
    assert nd.kernels.sum() == 3
    br = make_instrument("A", 2, "breaking", z=1)
    assert np.allclose(br.kernels[:, 0, :], 0)
    assert np.allclose(br.kernels.sum(axis=0)[1], 1)
    mi = make_instrument("A", 2, "max_informative")
    # the outcome determines both the input and the output value
    for k in range(4):
        support = np.argwhere(mi.kernels[k] > 0)
        assert len(support) == 1 and tuple(support[0]) == (k % 2, k // 2)
        assert mi.kernels[k].sum() == pytest.approx(0.5)
    perm = make_instrument("A", 2, "max_informative", g_in=[1, 0], g_out=[0, 1])
    assert perm.kernels[0, 0, 1] == pytest.approx(0.5)
    with pytest.raises(errors.InputError):
        make_instrument("A", 2, "max_informative", g_in=[0, 0])
    with pytest.raises(errors.InputError):
        make_instrument("A", 2, "breaking", z=2)
    with pytest.raises(errors.InputError):
        make_instrument("A", 2, "teleport")
    assert len(make_instrument("A", 2, "spanning_basis")) == 2


def test_instrument_rejects_incomplete_kernel():
    with pytest.raises(errors.InputError):
        ClassicalInstrument("A", np.zeros((1, 2, 2)))


def test_channel_families():
    assert len(deterministic_channels(2)) == 4
    basis = affine_channel_basis(3)
    assert len(basis) == 1 + 3 * 2
    for c in basis:
        assert np.allclose(c.sum(axis=0), 1)
    flat = np.array([c.reshape(-1) for c in basis])
    assert np.linalg.matrix_rank(flat - flat[0]) == 3 * 2


@given(seeds)
def test_inducted_processes_are_valid(seed):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, int(rng.integers(1, 5)))
    ok, dev = is_valid(induct_ccm_to_csm(random_ccm(rng, g)))
    assert ok and dev < 1e-9


def test_invalid_process_rejected():
    sig = full_sig({"A": 2})
    # the input copies the output back: total probability depends on the channel
    ok, dev = is_valid(ClassicalProcess(sig, np.eye(2)))
    assert not ok and dev > 0.1


def test_do_on_all_nodes_of_edgeless_csm_is_constant(rng):
    proc = induct_ccm_to_csm(random_ccm(rng, Dag("ABC")))
    k = do_marginal(proc, {"A", "B", "C"}, set())
    assert np.allclose(k.tensor, 1.0)


def test_do_on_chain_slices_the_channel(rng):
    m = random_ccm(rng, chain(2))
    k = do_marginal(induct_ccm_to_csm(m), {"A1"}, {"A2"})
    t = k.ordered([("A1", OUT), ("A2", IN), ("A2", OUT)])
    for x in range(2):
        for o in range(2):
            assert np.allclose(t[x, :, o], m.cpts["A2"].table[x])


def test_do_marginal_matches_truncated_factorization(rng):
    m = random_ccm(rng, FIVE_NODE_DIAMOND)
    k = do_marginal(induct_ccm_to_csm(m), {"A4"}, {"A1", "A2", "A3", "A5"})
    fam = do_conditional(m, {"A4"})
    order = [("A1", IN), ("A1", OUT), ("A2", IN), ("A2", OUT), ("A3", IN), ("A3", OUT), ("A5", IN), ("A5", OUT), ("A4", OUT)]
    t = k.ordered(order)
    for x in range(2):
        diag = np.einsum("aabbccee->abce", t[..., x])
        assert np.allclose(diag, fam.at({"A4": x}).probs)


def test_do_marginal_rejects_overlap(rng):
    proc = induct_ccm_to_csm(random_ccm(rng, chain(2)))
    with pytest.raises(errors.PreconditionError):
        do_marginal(proc, {"A1"}, {"A1"})


def test_fair_coin_round_trip():
    from qcausal.classical import Ccm, Cpt

    m = Ccm(Dag("A"), {"A": 2}, {"A": Cpt("A", (), np.array([0.5, 0.5]))})
    assert np.allclose(induct(induct(m, "ccm->csm"), "kappa->P").probs, [0.5, 0.5])
    with pytest.raises(errors.InputError):
        induct(m, "sideways")


def test_inducted_process_factorizes_over_graph(rng):
    m = random_ccm(rng, FIVE_NODE_DIAMOND)
    proc = induct_ccm_to_csm(m)
    t = proc.ordered([(v, p) for v in FIVE_NODE_DIAMOND.nodes for p in (IN, OUT)])
    c = {v: m.cpts[v].table for v in m.graph.nodes}
    one = np.ones(2)
    want = np.einsum(
        "A,aB,aC,bcD,adE,b,c,e->AaBbCcDdEe", c["A1"], c["A2"], c["A3"], c["A4"], c["A5"], one, one, one
    )
    assert np.allclose(t, want)


def test_signalling_pair_weak_but_not_strong_independence():
    proc = signalling_pair()
    p = induct_process_to_dist(proc)
    assert p.probs[0, 0] == pytest.approx(1.0)
    assert cond_indep(p, ["Y"], ["Z"])
    assert not rel_independence(proc, "plain", ["Y"], ["Z"])
    assert not operational_check(proc, "COS1", ["Y"], ["Z"])


def test_fork_plain_independence(rng):
    proc = induct_ccm_to_csm(random_ccm(rng, fork(2)))
    assert rel_independence(proc, "plain", ["A2"], ["A3"], ["A1"])
    assert not rel_independence(proc, "plain", ["A2"], ["A3"])
    assert operational_check(proc, "COS1", ["A2"], ["A3"], ["A1"])


def test_identity_chain_not_independent_of_settings():
    from qcausal.classical import Ccm, Cpt

    g = Dag("YZ", [("Z", "Y")])
    m = Ccm(g, {"Y": 2, "Z": 2}, {"Z": Cpt("Z", (), np.array([0.5, 0.5])), "Y": Cpt("Y", ("Z",), np.eye(2))})
    proc = induct_ccm_to_csm(m)
    assert not rel_independence(proc, "settings", ["Y"], ["Z"])
    assert not operational_check(proc, "COS3", ["Y"], ["Z"])


def test_product_map_cos1_is_outcome_independence(rng):
    proc = induct_ccm_to_csm(random_ccm(rng, Dag("YZ")))
    assert rel_independence(proc, "plain", ["Y"], ["Z"])
    assert operational_check(proc, "COS1", ["Y"], ["Z"])


def test_rel_independence_input_errors(rng):
    proc = induct_ccm_to_csm(random_ccm(rng, chain(3)))
    with pytest.raises(errors.PreconditionError):
        rel_independence(proc, "plain", ["A1"], ["A1"])
    with pytest.raises(errors.InputError):
        rel_independence(proc, "plain", ["Q"], ["A1"])
    with pytest.raises(errors.InputError):
        rel_independence(proc, "sideways", ["A1"], ["A2"])
    with pytest.raises(errors.PreconditionError):
        rel_independence(proc, "plain", ["A1"], ["A3"], X=["A2"])
    with pytest.raises(errors.InputError):
        operational_check(proc, "COS9", ["A1"], ["A3"])


def _random_query(rng, nodes):
    labels = rng.integers(0, 5, size=len(nodes))
    sets = [{n for n, k in zip(nodes, labels) if k == i} for i in range(4)]
    return sets


@given(seeds)
def test_definitions_match_operational_statements(seed):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, int(rng.integers(2, 5)))
    m = random_ccm(rng, g, concentration=0.5)
    proc = induct_ccm_to_csm(m)
    nodes = list(g.nodes)
    rng.shuffle(nodes)
    Y, Z = {nodes[0]}, {nodes[1]}
    rest = nodes[2:]
    W = {v for v in rest if rng.random() < 0.5}
    X = {v for v in rest if v not in W and rng.random() < 0.5}
    for mode in ("do", "broken", "settings"):
        assert rel_independence(proc, mode, Y, Z, W, X) == operational_check(proc, STATEMENT[mode], Y, Z, W, X)
    if not X:
        assert rel_independence(proc, "plain", Y, Z, W) == operational_check(proc, "COS1", Y, Z, W)


@given(seeds)
def test_rank_criterion_matches_explicit_factorization(seed):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, 3)
    proc = induct_ccm_to_csm(random_ccm(rng, g))
    Y, Z, W = ({v} for v in rng.permutation(g.nodes))
    verdict = rel_independence(proc, "plain", Y, Z, W)
    fac = factorize(proc, Y, Z, W)
    assert (fac is not None) == verdict
    if fac is not None:
        alpha, beta = fac
        k = do_marginal(proc, set(), Y | Z | W)
        lab = lambda s: [w.label for w in k.sig.wires if w.node in s]  # noqa: E731
        t = k.ordered(lab(Y) + lab(Z) + lab(W)).reshape(alpha.shape[0], beta.shape[0], -1)
        assert np.abs(np.einsum("ys,zs->yzs", alpha, beta) - t).max() < 1e-10


@given(seeds)
def test_strong_independence_implies_weak(seed):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, 4)
    proc = induct_ccm_to_csm(random_ccm(rng, g))
    nodes = list(g.nodes)
    for y, z in itertools.combinations(nodes, 2):
        for w in [()] + [(v,) for v in nodes if v not in (y, z)]:
            if rel_independence(proc, "plain", [y], [z], w):
                assert cond_indep(induct_process_to_dist(proc), [y], [z], w)


def test_cpm_json_round_trip(rng):
    proc = induct_ccm_to_csm(random_ccm(rng, chain(3)))
    back = process_from_json(process_to_json(proc))
    assert np.array_equal(back.tensor, proc.tensor)
    with pytest.raises(errors.InputError):
        process_from_json({"nodes": []})
