import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import classical_cmi
from qcausal import errors
from qcausal.catalog import FIVE_NODE_DIAMOND, RULE_EXAMPLES, SEPARATION_EXAMPLE, chain, fork
from qcausal.classical import (
    Ccm,
    Cpt,
    Dist,
    FunctionalModel,
    NodeFunction,
    ccm_from_json,
    ccm_to_json,
    check_markov,
    classical_rule_check,
    cmi_bits,
    cond_indep,
    cond_indep_report,
    dilation_reproduces,
    do_conditional,
    functional_dilation,
    graphical_rule_antecedent,
    joint_distribution,
    random_ccm,
)
from qcausal.graphs import Dag, d_separated, random_dag

seeds = st.integers(0, 2**31 - 1)
COPY = np.array([[1.0, 0.0], [0.0, 1.0]])


def coin(p=0.5):
    return np.array([1 - p, p])


def xor_model():
    g = Dag("XY", [("X", "Y")])
    return Ccm(g, {"X": 2, "Y": 2}, {"X": Cpt("X", (), coin()), "Y": Cpt("Y", ("X",), np.full((2, 2), 0.5))})


def test_single_coin_and_copy_chain():
    g = Dag("X")
    m = Ccm(g, {"X": 2}, {"X": Cpt("X", (), coin())})
    assert np.allclose(joint_distribution(m).probs, [0.5, 0.5])
    g = Dag("XY", [("X", "Y")])
    m = Ccm(g, {"X": 2, "Y": 2}, {"X": Cpt("X", (), coin()), "Y": Cpt("Y", ("X",), COPY)})
    assert np.allclose(joint_distribution(m).probs, np.diag([0.5, 0.5]))


def test_cpt_and_ccm_validation():
    with pytest.raises(errors.InputError):
        Cpt("X", (), np.array([0.3, 0.3]))
    with pytest.raises(errors.InputError):
        Cpt("X", (), np.array([1.2, -0.2]))
    g = Dag("XY", [("X", "Y")])
    with pytest.raises(errors.InputError):
        Ccm(g, {"X": 2, "Y": 2}, {"X": Cpt("X", (), coin()), "Y": Cpt("Y", (), coin())})


def test_markov_product_and_correlated_pair():
    empty = Dag("XY")
    prod = Dist(("X", "Y"), np.outer(coin(0.3), coin(0.8)))
    assert check_markov(prod, empty)
    corr = Dist(("X", "Y"), np.diag([0.5, 0.5]))
    assert not check_markov(corr, empty)
    assert check_markov(corr, Dag("XY", [("X", "Y")]))


@given(seeds)
def test_joint_distribution_is_markov_for_its_graph(seed):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, int(rng.integers(1, 6)))
    p = joint_distribution(random_ccm(rng, g))
    assert p.total() == pytest.approx(1.0)
    assert check_markov(p, g)


def test_joint_on_diamond_matches_brute_force_marginals(rng):
    m = random_ccm(rng, FIVE_NODE_DIAMOND)
    p = joint_distribution(m)
    for vals in itertools.product(range(2), repeat=5):
        a = dict(zip(FIVE_NODE_DIAMOND.nodes, vals))
        want = 1.0
        for v in FIVE_NODE_DIAMOND.nodes:
            cpt = m.cpts[v]
            want *= cpt.table[tuple(a[q] for q in cpt.parents) + (a[v],)]
        assert p.probs[vals] == pytest.approx(want)


def test_do_on_root_equals_conditioning(rng):
    m = random_ccm(rng, chain(3))
    fam = do_conditional(m, {"A1"})
    p = joint_distribution(m)
    for x in range(2):
        cond = p.probs[x] / p.probs[x].sum()
        assert np.allclose(fam.at({"A1": x}).probs, cond)


def test_do_truncates_mechanisms_of_diamond(rng):
    m = random_ccm(rng, FIVE_NODE_DIAMOND)
    fam = do_conditional(m, {"A4"})
    t = m.cpts
    for x in range(2):
        got = fam.at({"A4": x}).probs  # axes A1 A2 A3 A5
        want = np.einsum("a,ab,ac,aE->abcE", t["A1"].table, t["A2"].table, t["A3"].table, t["A5"].table[:, x, :])
        assert np.allclose(got, want)


def test_do_on_xor_model_is_flat():
    fam = do_conditional(xor_model(), {"X"})
    for x in range(2):
        assert np.allclose(fam.at({"X": x}).probs, [0.5, 0.5])


def test_do_empty_set_equals_joint(rng):
    m = random_ccm(rng, FIVE_NODE_DIAMOND)
    assert np.allclose(do_conditional(m, ()).table, joint_distribution(m).probs)


def test_cond_indep_product_and_copy_triple():
    prod = Dist(("Y", "Z"), np.outer(coin(0.2), coin(0.6)))
    assert cond_indep(prod, ["Y"], ["Z"])
    p = np.zeros((2, 2, 2))
    p[0, 0, 0] = p[1, 1, 1] = 0.5
    copy = Dist(("A", "B", "C"), p)
    assert cond_indep(copy, ["A"], ["B"], ["C"])
    assert not cond_indep(copy, ["A"], ["B"])
    assert cmi_bits(copy, ["A"], ["B"]) == pytest.approx(1.0)


def test_cond_indep_rejects_overlap():
    with pytest.raises(errors.PreconditionError):
        cond_indep(Dist(("A",), coin()), ["A"], ["A"])


@given(seeds)
def test_equality_and_cmi_verdicts_agree(seed):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, 4)
    p = joint_distribution(random_ccm(rng, g))
    nodes = list(g.nodes)
    for y, z in itertools.permutations(nodes, 2):
        for w in [()] + [(v,) for v in nodes if v not in (y, z)]:
            rep = cond_indep_report(p, [y], [z], w)
            assert rep.independent == (rep.cmi_bits < 1e-9)
            assert rep.cmi_bits == pytest.approx(classical_cmi(p.grouped([y], [z], list(w))), abs=1e-12)


def test_fork_distribution_independent_given_common_cause(rng):
    p = joint_distribution(random_ccm(rng, fork(2)))
    assert cond_indep(p, ["A2"], ["A3"], ["A1"])
    assert not cond_indep(p, ["A2"], ["A3"])


@given(seeds)
def test_classical_soundness_of_d_separation(seed):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, int(rng.integers(3, 6)))
    p = joint_distribution(random_ccm(rng, g))
    nodes = list(g.nodes)
    for y, z in itertools.combinations(nodes, 2):
        for w in [()] + [(v,) for v in nodes if v not in (y, z)]:
            if d_separated(g, [y], [z], w):
                assert cmi_bits(p, [y], [z], w) < 1e-9


def test_deterministic_cpt_gives_point_mass_noise():
    g = Dag("XY", [("X", "Y")])
    m = Ccm(g, {"X": 2, "Y": 2}, {"X": Cpt("X", (), coin()), "Y": Cpt("Y", ("X",), COPY)})
    fy = functional_dilation(m).functions["Y"]
    assert np.count_nonzero(fy.noise) == 1
    assert np.array_equal(fy.value[:, np.argmax(fy.noise)], [0, 1])


def test_xor_dilation_is_accepted():
    m = xor_model()
    value = np.array([[0, 1], [1, 0]])  # value[x, lam] = x xor lam
    fm = FunctionalModel(
        m.graph,
        dict(m.cards),
        {"X": NodeFunction((), np.array([0, 1]), coin()), "Y": NodeFunction(("X",), value, coin())},
    )
    assert dilation_reproduces(fm, m)
    assert dilation_reproduces(functional_dilation(m), m)


@given(seeds)
def test_functional_dilation_round_trip(seed):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, int(rng.integers(1, 5)))
    m = random_ccm(rng, g, cards={v: int(rng.integers(2, 4)) for v in g.nodes})
    assert dilation_reproduces(functional_dilation(m), m)


@pytest.mark.parametrize("name", sorted(RULE_EXAMPLES))
def test_graphical_antecedents_of_rule_examples(name):
    r = RULE_EXAMPLES[name]
    assert graphical_rule_antecedent(SEPARATION_EXAMPLE, r.rule, r.X, r.Y, r.Z, r.W) == r.antecedent


@pytest.mark.parametrize("name", ["rule1a", "rule2a", "rule3a"])
def test_rule_consequent_holds_when_antecedent_holds(name):
    r = RULE_EXAMPLES[name]
    rng = np.random.default_rng(11)
    for _ in range(10):
        chk = classical_rule_check(random_ccm(rng, SEPARATION_EXAMPLE), r.rule, r.X, r.Y, r.Z, r.W)
        assert chk.antecedent and chk.consequent


@pytest.mark.parametrize("name", ["rule1b", "rule2b", "rule3b"])
def test_rule_counterexample_found_when_antecedent_fails(name):
    r = RULE_EXAMPLES[name]
    rng = np.random.default_rng(12)
    found = False
    for _ in range(20):
        chk = classical_rule_check(random_ccm(rng, SEPARATION_EXAMPLE), r.rule, r.X, r.Y, r.Z, r.W)
        assert not chk.antecedent
        if not chk.consequent:
            found = True
            break
    assert found


@given(seeds)
def test_rule_soundness_on_random_graphs(seed):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, 5)
    m = random_ccm(rng, g)
    nodes = list(rng.permutation(g.nodes))
    X, Y, Z, W = {nodes[0]}, {nodes[1]}, {nodes[2]}, {nodes[3]}
    for rule in (1, 2, 3):
        chk = classical_rule_check(m, rule, X, Y, Z, W)
        if chk.antecedent:
            assert chk.consequent


def test_rule_check_rejects_bad_input(rng):
    m = random_ccm(rng, chain(3))
    with pytest.raises(errors.PreconditionError):
        classical_rule_check(m, 1, {"A1"}, {"A1"}, {"A2"}, set())
    with pytest.raises(errors.InputError):
        graphical_rule_antecedent(m.graph, 4, set(), {"A1"}, {"A2"}, set())


def test_ccm_json_round_trip(rng):
    m = random_ccm(rng, FIVE_NODE_DIAMOND)
    back = ccm_from_json(ccm_to_json(m))
    assert np.allclose(joint_distribution(back).probs, joint_distribution(m).probs)
    with pytest.raises(errors.InputError):
        ccm_from_json({"graph": {"nodes": ["A"]}})
