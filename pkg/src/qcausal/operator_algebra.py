"""Finite-dimensional *-algebras: generation, block decomposition and channel splitting.

A *-algebra containing the identity on ``C^D`` is unitarily equivalent to a direct
sum of blocks ``M_{dL} (x) 1_{dR}``. :func:`wedderburn_decompose` finds isometries
``V_k`` with ``V_k^dag a V_k = a_k (x) 1`` for every element ``a``; every result is
checked against the algebra basis before it is returned.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Iterable, Sequence

import numpy as np

from . import tolerances
from .errors import ConstructionError, DegeneracyError, DimensionError, PreconditionError
from .tensor_core import Label, LabeledOperator, Wire, hermitian_part

SEED = 0x5EED


@dataclasses.dataclass(frozen=True)
class StarAlgebra:
    """Hilbert-Schmidt orthonormal basis of Hermitian matrices spanning the algebra."""

    ambient_dim: int
    basis: tuple[np.ndarray, ...]

    @property
    def dim(self) -> int:
        return len(self.basis)

    def contains(self, m: np.ndarray, tol: float | None = None) -> bool:
        tol = tolerances.current().alg if tol is None else tol
        resid = _residual(np.asarray(m, complex).reshape(-1), self._stack())
        return float(np.linalg.norm(resid)) <= tol * max(1.0, float(np.linalg.norm(m)))

    def _stack(self) -> np.ndarray:
        if not self.basis:
            return np.zeros((0, self.ambient_dim**2), dtype=complex)
        return np.stack([b.reshape(-1) for b in self.basis])


def _residual(v: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Component of ``v`` orthogonal to the orthonormal rows of ``q`` (two Gram-Schmidt passes)."""
    for _ in range(2):
        if q.shape[0]:
            v = v - q.T @ (q.conj() @ v)
    return v


def _as_matrices(generators: Sequence[LabeledOperator | np.ndarray]) -> list[np.ndarray]:
    mats = [g.matrix if isinstance(g, LabeledOperator) else np.asarray(g, complex) for g in generators]
    if not mats:
        return mats
    d = mats[0].shape[0]
    for m in mats:
        if m.shape != (d, d):
            raise DimensionError("generators must be square matrices of one size")
    return mats


def generate_algebra(generators: Sequence[LabeledOperator | np.ndarray], ambient_dim: int | None = None) -> StarAlgebra:
    """Smallest unital *-algebra containing the generators.

    Words are built by left multiplication with the generators and their adjoints,
    starting from the identity, and orthonormalized as they appear.
    """
    mats = _as_matrices(generators)
    if not mats and ambient_dim is None:
        raise DimensionError("need generators or an ambient dimension")
    d = mats[0].shape[0] if mats else int(ambient_dim)
    tol = tolerances.current().alg
    letters = []
    for m in mats:
        letters.append(m)
        if np.linalg.norm(m - m.conj().T) > tol * max(1.0, np.linalg.norm(m)):
            letters.append(m.conj().T)
    rows: list[np.ndarray] = []
    q = np.zeros((0, d * d), dtype=complex)

    def add(m: np.ndarray) -> bool:
        nonlocal q
        v = m.reshape(-1)
        scale = max(1.0, float(np.linalg.norm(v)))
        r = _residual(v, q)
        nr = float(np.linalg.norm(r))
        if nr <= tol * scale:
            return False
        q = np.vstack([q, (r / nr)[None, :]])
        rows.append(m)
        return True

    add(np.eye(d, dtype=complex))
    todo = [np.eye(d, dtype=complex)]
    while todo and q.shape[0] < d * d:
        x = todo.pop(0)
        for g in letters:
            y = g @ x
            if add(y):
                todo.append(y)
    return StarAlgebra(d, tuple(_hermitian_basis(q, d)))


def _hermitian_basis(q: np.ndarray, d: int) -> list[np.ndarray]:
    """Real-orthonormal Hermitian basis of the span of the rows of ``q`` (a *-closed space)."""
    cands = []
    for row in q:
        m = row.reshape(d, d)
        cands.append(hermitian_part(m))
        cands.append(hermitian_part(-1j * m))
    out: list[np.ndarray] = []
    stack = np.zeros((0, d * d), dtype=complex)
    tol = tolerances.current().alg
    for c in cands:
        v = c.reshape(-1)
        r = _residual(v, stack)
        # Hermitian inputs keep Hermitian residuals because the inner products are real
        r = hermitian_part(r.reshape(d, d)).reshape(-1)
        nr = float(np.linalg.norm(r))
        if nr > tol * max(1.0, float(np.linalg.norm(v))):
            stack = np.vstack([stack, (r / nr)[None, :]])
            out.append((r / nr).reshape(d, d))
        if len(out) == q.shape[0]:
            break
    if len(out) != q.shape[0]:
        raise DegeneracyError("could not build a Hermitian basis; generated space is not *-closed")
    return out


def center(alg: StarAlgebra, generators: Sequence[np.ndarray] | None = None) -> list[np.ndarray]:
    """Hermitian basis of the elements of ``alg`` commuting with every basis element."""
    basis = list(alg.basis)
    probes = list(generators) if generators is not None else basis
    cols = []
    for b in basis:
        cols.append(np.concatenate([(b @ p - p @ b).reshape(-1) for p in probes]) if probes else np.zeros(0))
    mat = np.stack(cols, axis=1) if cols else np.zeros((0, 0))
    if mat.size == 0:
        return [np.eye(alg.ambient_dim, dtype=complex)]
    u, s, vh = np.linalg.svd(mat)
    tol = tolerances.current().alg * max(1.0, float(s.max(initial=0.0)))
    null = vh[np.sum(s > tol):].conj()
    elems = [sum(c * b for c, b in zip(coeffs, basis)) for coeffs in null]
    herm = []
    for e in elems:
        herm.extend([hermitian_part(e), hermitian_part(-1j * e)])
    return [h for h in herm if np.linalg.norm(h) > tolerances.current().alg]


def _clusters(values: np.ndarray, gap: float) -> list[np.ndarray]:
    order = np.argsort(values)
    groups: list[list[int]] = [[int(order[0])]]
    for a, b in zip(order[:-1], order[1:]):
        if values[b] - values[a] > gap:
            groups.append([])
        groups[-1].append(int(b))
    return [np.array(g) for g in groups]


@dataclasses.dataclass(frozen=True)
class Block:
    isometry: np.ndarray  # ambient_dim x (dimL * dimR), columns ordered L-major
    dimL: int
    dimR: int


@dataclasses.dataclass(frozen=True)
class BlockTensorDecomp:
    ambient_dim: int
    blocks: tuple[Block, ...]

    def unitary(self) -> np.ndarray:
        return np.concatenate([b.isometry for b in self.blocks], axis=1)

    def offsets(self) -> list[int]:
        out, acc = [], 0
        for b in self.blocks:
            out.append(acc)
            acc += b.dimL * b.dimR
        return out


def _random_hermitian_combo(rng: np.random.Generator, mats: Sequence[np.ndarray]) -> np.ndarray:
    coeffs = rng.normal(size=len(mats))
    return hermitian_part(sum(c * m for c, m in zip(coeffs, mats)))


def _gap_tol(m: np.ndarray) -> float:
    return 1e-6 * max(1.0, float(np.linalg.norm(m, 2)))


def wedderburn_decompose(alg: StarAlgebra, seed: int = SEED) -> BlockTensorDecomp:
    """Block decomposition ``C^D = sum_k L_k (x) R_k`` with the algebra acting on the ``L_k``."""
    rng = np.random.default_rng(seed)
    d = alg.ambient_dim
    tol = tolerances.current()
    cent = center(alg)
    z = _random_hermitian_combo(rng, cent) if cent else np.eye(d)
    evals, evecs = np.linalg.eigh(z)
    groups = _clusters(evals, _gap_tol(z))
    _check_separated(evals, groups, _gap_tol(z))
    blocks = []
    for grp in groups:
        sub = evecs[:, grp]  # orthonormal basis of one central block
        local = [sub.conj().T @ b @ sub for b in alg.basis]
        block_dim = _block_algebra_dim(local)
        dim_l = int(round(math.sqrt(block_dim)))
        if dim_l * dim_l != block_dim or len(grp) % dim_l:
            raise DegeneracyError(f"block algebra has dimension {block_dim}, not a square dividing {len(grp)}")
        dim_r = len(grp) // dim_l
        iso = _matrix_unit_isometry(rng, local, dim_l, dim_r)
        blocks.append(Block(sub @ iso, dim_l, dim_r))
    decomp = BlockTensorDecomp(d, tuple(blocks))
    _verify_decomposition(alg, decomp, tol.alg)
    return decomp


def _check_separated(evals: np.ndarray, groups: list[np.ndarray], gap: float) -> None:
    """Reject clusterings whose members drift apart in a chain of small steps."""
    for g in groups:
        spread = float(np.ptp(evals[g])) if len(g) > 1 else 0.0
        if spread > 10 * gap:
            raise DegeneracyError(f"eigenvalue cluster spread {spread:.3g} is not resolvable")


def _block_algebra_dim(local: Sequence[np.ndarray]) -> int:
    stack = np.stack([m.reshape(-1) for m in local])
    s = np.linalg.svd(stack, compute_uv=False)
    return int(np.sum(s > tolerances.current().alg * max(1.0, float(s.max(initial=0.0)))))


def _matrix_unit_isometry(rng: np.random.Generator, local: Sequence[np.ndarray], dim_l: int, dim_r: int) -> np.ndarray:
    """Columns ``u_l v_r`` built from a generic Hermitian element's spectral projections."""
    n = dim_l * dim_r
    if dim_l == 1:
        return np.eye(n, dtype=complex)
    h = _random_hermitian_combo(rng, local)
    evals, evecs = np.linalg.eigh(h)
    groups = _clusters(evals, _gap_tol(h))
    if len(groups) != dim_l or any(len(g) != dim_r for g in groups):
        raise DegeneracyError(
            f"expected {dim_l} eigenvalue clusters of size {dim_r}, got sizes {[len(g) for g in groups]}"
        )
    projs = [evecs[:, g] for g in groups]
    first = projs[0]
    generic = sum(rng.normal() * m for m in local) + 1j * sum(rng.normal() * m for m in local)
    cols = np.zeros((n, n), dtype=complex)
    cols[:, 0:dim_r] = first
    for i in range(1, dim_l):
        unit = projs[i] @ (projs[i].conj().T @ generic @ first)  # n x dim_r, maps E_1 into E_i
        norm = np.linalg.norm(unit) / math.sqrt(dim_r)
        if norm < 1e-8:
            raise DegeneracyError("random element failed to connect eigenspaces of the block")
        cols[:, i * dim_r:(i + 1) * dim_r] = unit / norm
    return cols


def _verify_decomposition(alg: StarAlgebra, decomp: BlockTensorDecomp, tol: float) -> None:
    u = decomp.unitary()
    if u.shape[1] != alg.ambient_dim or np.linalg.norm(u.conj().T @ u - np.eye(u.shape[1])) > 1e-8:
        raise DegeneracyError("block isometries do not form a unitary")
    for b in alg.basis:
        for blk in decomp.blocks:
            x = blk.isometry.conj().T @ b @ blk.isometry
            left = partial_trace_right(x, blk.dimL, blk.dimR) / blk.dimR
            if np.linalg.norm(x - np.kron(left, np.eye(blk.dimR))) > 1e3 * tol * max(1.0, np.linalg.norm(b)):
                raise DegeneracyError("algebra element is not of the form X (x) 1 on a block")
        off = u.conj().T @ b @ u
        for i, bi in enumerate(decomp.blocks):
            for j, bj in enumerate(decomp.blocks):
                if i != j:
                    oi, oj = decomp.offsets()[i], decomp.offsets()[j]
                    piece = off[oi:oi + bi.dimL * bi.dimR, oj:oj + bj.dimL * bj.dimR]
                    if np.linalg.norm(piece) > 1e3 * tol:
                        raise DegeneracyError("algebra element couples two blocks")


def partial_trace_right(x: np.ndarray, dim_l: int, dim_r: int) -> np.ndarray:
    """Trace out the right factor of an operator on ``C^dimL (x) C^dimR``."""
    return np.einsum("ajbj->ab", x.reshape(dim_l, dim_r, dim_l, dim_r))


def partial_trace_left(x: np.ndarray, dim_l: int, dim_r: int) -> np.ndarray:
    return np.einsum("iaib->ab", x.reshape(dim_l, dim_r, dim_l, dim_r))


# splitting commuting channels ---------------------------------------------------------

def slices(matrix: np.ndarray, d_private: int, d_shared: int) -> list[np.ndarray]:
    """Blocks ``<a| X |b>`` over the private factor of ``X`` on ``private (x) shared``."""
    t = matrix.reshape(d_private, d_shared, d_private, d_shared)
    return [t[a, :, b, :] for a in range(d_private) for b in range(d_private)]


@dataclasses.dataclass(frozen=True)
class SplitBlock:
    block: Block
    left: np.ndarray  # on first-private (x) L_k
    right: np.ndarray  # on second-private (x) R_k


@dataclasses.dataclass(frozen=True)
class SplitResult:
    decomposition: BlockTensorDecomp
    blocks: tuple[SplitBlock, ...]
    first_private: tuple[Wire, ...]
    second_private: tuple[Wire, ...]
    shared: tuple[Wire, ...]
    reconstruction_error: float


def _lift(private_dim: int, iso: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(private_dim), iso)


def split_commuting(rho1: LabeledOperator, rho2: LabeledOperator, shared: Iterable[Label | Wire] | None = None) -> SplitResult:
    """Split two commuting operators that overlap on ``shared`` wires.

    Returns a block decomposition of the shared space with ``rho1`` acting as
    ``left_k (x) 1_R`` and ``rho2`` as ``1_L (x) right_k`` on block ``k``.
    """
    tol = tolerances.current()
    overlap = set(rho1.sig.labels) & set(rho2.sig.labels)
    if shared is not None:
        want = {s.label if isinstance(s, Wire) else tuple(s) for s in shared}
        if want != overlap:
            raise PreconditionError(f"shared wires {sorted(want)} differ from the actual overlap {sorted(overlap)}")
    sh = [w for w in rho1.sig.wires if w.label in overlap]
    p1 = [w for w in rho1.sig.wires if w.label not in overlap]
    p2 = [w for w in rho2.sig.wires if w.label not in overlap]
    comm = (rho1 @ rho2 - rho2 @ rho1).norm()
    if comm > tol.num * max(1.0, rho1.norm() * rho2.norm()):
        raise PreconditionError(f"operators do not commute (commutator norm {comm:.3g})")
    d1 = math.prod(w.dim for w in p1)
    d2 = math.prod(w.dim for w in p2)
    ds = math.prod(w.dim for w in sh)
    m1 = rho1.reorder(p1 + sh)
    m2 = rho2.reorder(p2 + sh)
    alg = generate_algebra(slices(m1, d1, ds), ambient_dim=ds)
    decomp = wedderburn_decompose(alg)
    out = []
    err = 0.0
    rebuilt1 = np.zeros_like(m1)
    rebuilt2 = np.zeros_like(m2)
    for blk in decomp.blocks:
        v1 = _lift(d1, blk.isometry)
        v2 = _lift(d2, blk.isometry)
        x1 = v1.conj().T @ m1 @ v1  # private1 (x) L (x) R
        x2 = v2.conj().T @ m2 @ v2
        left = _trace_last(x1, d1 * blk.dimL, blk.dimR) / blk.dimR
        right = _trace_middle(x2, d2, blk.dimL, blk.dimR) / blk.dimL
        out.append(SplitBlock(blk, left, right))
        rebuilt1 += v1 @ np.kron(left, np.eye(blk.dimR)) @ v1.conj().T
        rebuilt2 += v2 @ _embed_middle_identity(right, d2, blk.dimL, blk.dimR) @ v2.conj().T
    err = max(float(np.linalg.norm(rebuilt1 - m1)), float(np.linalg.norm(rebuilt2 - m2)))
    if err > tol.num * max(1.0, np.linalg.norm(m1), np.linalg.norm(m2)):
        raise ConstructionError(f"split operators do not reconstruct the inputs (error {err:.3g})")
    return SplitResult(decomp, tuple(out), tuple(p1), tuple(p2), tuple(sh), err)


def _trace_last(x: np.ndarray, d_a: int, d_b: int) -> np.ndarray:
    return np.einsum("ajbj->ab", x.reshape(d_a, d_b, d_a, d_b))


def _trace_middle(x: np.ndarray, d_p: int, d_l: int, d_r: int) -> np.ndarray:
    t = x.reshape(d_p, d_l, d_r, d_p, d_l, d_r)
    return np.einsum("plrqls->prqs", t).reshape(d_p * d_r, d_p * d_r)


def _embed_middle_identity(y: np.ndarray, d_p: int, d_l: int, d_r: int) -> np.ndarray:
    t = y.reshape(d_p, d_r, d_p, d_r)
    full = np.einsum("prqs,lm->plrqms", t, np.eye(d_l))
    n = d_p * d_l * d_r
    return full.reshape(n, n)
