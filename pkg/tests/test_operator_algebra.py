import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import random_psd
from qcausal import errors
from qcausal.operator_algebra import generate_algebra, split_commuting, wedderburn_decompose
from qcausal.quantum import random_kraus, random_unitary
from qcausal.tensor_core import IN, OUT, LabeledOperator, Wire, align, cj_of_map

seeds = st.integers(0, 2**31 - 1)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)


def test_identity_generates_one_dimensional_algebra():
    assert generate_algebra([np.eye(3)]).dim == 1


def test_diagonal_generator_gives_diagonal_algebra():
    alg = generate_algebra([np.diag([1.0, 2.0])])
    assert alg.dim == 2
    assert alg.contains(np.diag([5.0, -1.0]))
    assert not alg.contains(X)


def test_paulis_generate_full_matrix_algebra():
    assert generate_algebra([X, Z]).dim == 4


def test_non_hermitian_generator_closes_under_adjoint():
    raising = np.array([[0, 1], [0, 0]], dtype=complex)
    assert generate_algebra([raising]).dim == 4


def test_generate_algebra_rejects_mixed_sizes():
    with pytest.raises(errors.DimensionError):
        generate_algebra([np.eye(2), np.eye(3)])
    with pytest.raises(errors.DimensionError):
        generate_algebra([])


def test_algebra_basis_is_orthonormal_and_closed(rng):
    alg = generate_algebra([np.kron(random_psd(rng, 2), np.eye(2)), np.kron(np.diag([1, 0]), np.eye(2))])
    stack = np.array([b.reshape(-1) for b in alg.basis])
    assert np.allclose(stack.conj() @ stack.T, np.eye(alg.dim), atol=1e-10)
    for a in alg.basis:
        for b in alg.basis:
            assert alg.contains(a @ b)


@given(seeds)
def test_algebra_dimension_invariant_under_unitary_conjugation(seed):
    rng = np.random.default_rng(seed)
    gens = [np.kron(random_psd(rng, 2), np.eye(2)), np.diag(rng.normal(size=4)).astype(complex)]
    u = random_unitary(rng, 4)
    rotated = [u @ g @ u.conj().T for g in gens]
    assert generate_algebra(gens).dim == generate_algebra(rotated).dim


def _dims(decomp):
    return sorted((b.dimL, b.dimR) for b in decomp.blocks)


def test_wedderburn_full_algebra_single_block():
    assert _dims(wedderburn_decompose(generate_algebra([X, Z]))) == [(2, 1)]


def test_wedderburn_diagonal_algebra_two_blocks():
    assert _dims(wedderburn_decompose(generate_algebra([np.diag([1.0, 2.0])]))) == [(1, 1), (1, 1)]


def test_wedderburn_single_left_generator_is_commutative():
    # X (x) 1 alone spans {1, X (x) 1}: two eigenspaces of multiplicity 2
    assert _dims(wedderburn_decompose(generate_algebra([np.kron(X, np.eye(2))]))) == [(1, 2), (1, 2)]


def test_wedderburn_left_factor_algebra_from_paulis():
    decomp = wedderburn_decompose(generate_algebra([np.kron(X, np.eye(2)), np.kron(Z, np.eye(2))]))
    assert _dims(decomp) == [(2, 2)]


@given(seeds)
def test_wedderburn_blocks_reproduce_algebra(seed):
    rng = np.random.default_rng(seed)
    # M2 (x) 1_2 on one block, C on a second block of multiplicity 3, rotated
    u = random_unitary(rng, 7)
    gens = []
    for _ in range(2):
        g = np.zeros((7, 7), dtype=complex)
        g[:4, :4] = np.kron(random_psd(rng, 2), np.eye(2))
        g[4:, 4:] = rng.normal() * np.eye(3)
        gens.append(u @ g @ u.conj().T)
    alg = generate_algebra(gens)
    decomp = wedderburn_decompose(alg)
    assert _dims(decomp) == [(1, 3), (2, 2)]
    v = decomp.unitary()
    assert np.allclose(v.conj().T @ v, np.eye(7), atol=1e-9)
    for b in alg.basis:
        for blk in decomp.blocks:
            piece = blk.isometry.conj().T @ b @ blk.isometry
            t = piece.reshape(blk.dimL, blk.dimR, blk.dimL, blk.dimR)
            left = np.einsum("ajbj->ab", t) / blk.dimR
            assert np.allclose(piece, np.kron(left, np.eye(blk.dimR)), atol=1e-8)


@given(seeds)
def test_commutative_algebras_have_unit_left_factors(seed):
    rng = np.random.default_rng(seed)
    u = random_unitary(rng, 5)
    gens = [u @ np.diag(rng.integers(0, 3, size=5).astype(complex)) @ u.conj().T for _ in range(2)]
    assert all(b.dimL == 1 for b in wedderburn_decompose(generate_algebra(gens)).blocks)


def _wire(node, port, d=2):
    return Wire(node, port, d)


def test_split_explicit_tensor_product(rng):
    p1, p2, sa, sb = _wire("P", IN), _wire("Q", IN), _wire("S", OUT), _wire("T", OUT)
    a = LabeledOperator.from_ordered(random_psd(rng, 4), [p1, sa])
    b = LabeledOperator.from_ordered(random_psd(rng, 4), [p2, sb])
    rho1 = align(a, a.sig.union(LabeledOperator.identity([sb]).sig))
    rho2 = align(b, b.sig.union(LabeledOperator.identity([sa]).sig))
    res = split_commuting(rho1, rho2, [sa, sb])
    assert [(blk.block.dimL, blk.block.dimR) for blk in res.blocks] == [(2, 2)]
    assert res.reconstruction_error < 1e-8


def test_split_direct_sum_of_products(rng):
    u = random_unitary(rng, 6)
    iso1, iso2 = u[:, :4], u[:, 4:]
    p1, p2, s = _wire("P", IN), _wire("Q", IN), Wire("S", OUT, 6)
    a1, a2 = random_psd(rng, 4), random_psd(rng, 2) * 3
    b1, b2 = random_psd(rng, 4), random_psd(rng, 4)
    lift = lambda iso: np.kron(np.eye(2), iso)  # noqa: E731
    # block 1: L = C^2, R = C^2; block 2: L = C, R = C^2
    m1 = lift(iso1) @ np.kron(a1, np.eye(2)) @ lift(iso1).conj().T + lift(iso2) @ np.kron(a2, np.eye(2)) @ lift(iso2).conj().T
    swap = lambda b: b.reshape(2, 2, 2, 2)  # noqa: E731
    b1_mid = np.einsum("prqs,lm->plrqms", swap(b1), np.eye(2)).reshape(8, 8)
    m2 = lift(iso1) @ b1_mid @ lift(iso1).conj().T + lift(iso2) @ b2 @ lift(iso2).conj().T
    rho1 = LabeledOperator.from_ordered(m1, [p1, s])
    rho2 = LabeledOperator.from_ordered(m2, [p2, s])
    res = split_commuting(rho1, rho2)
    assert sorted((blk.block.dimL, blk.block.dimR) for blk in res.blocks) == [(1, 2), (2, 2)]
    assert res.reconstruction_error < 1e-8


def test_split_product_unitary_readers():
    rng = np.random.default_rng(5)
    u1, u2 = random_unitary(rng, 2), random_unitary(rng, 2)
    a = Wire("A", OUT, 4)
    e = np.eye(2)
    k_b = [np.kron(u1, e[k][None, :]) for k in range(2)]
    k_c = [np.kron(e[k][None, :], u2) for k in range(2)]
    rho_b = cj_of_map(k_b, [a], [_wire("B", IN)])
    rho_c = cj_of_map(k_c, [a], [_wire("C", IN)])
    res = split_commuting(rho_b, rho_c, [a])
    assert [(blk.block.dimL, blk.block.dimR) for blk in res.blocks] == [(2, 2)]


def test_split_rejects_non_commuting_and_wrong_shared(rng):
    a = Wire("A", OUT, 2)
    rho_b = cj_of_map(random_kraus(rng, 2, 2), [a], [_wire("B", IN)])
    rho_c = cj_of_map(random_kraus(rng, 2, 2), [a], [_wire("C", IN)])
    with pytest.raises(errors.PreconditionError):
        split_commuting(rho_b, rho_c)
    with pytest.raises(errors.PreconditionError):
        split_commuting(rho_b, rho_b, [_wire("Q", OUT)])
