"""Labeled operators over node/port wires.

Every operator in the library is a dense square matrix bound to a :class:`SpaceSig`,
an ordered list of wires. Wires are kept in one canonical order: sorted by node
name (UTF-8 byte order) and then by port with ``in`` before ``out``. The composite
index is big-endian over that order, so the first wire is the most significant.

The ``out`` wire of a node stands for the dual of its input space; a channel
operator from node ``A`` to node ``B`` lives on ``B:in`` and ``A:out``.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Any, Iterable, Mapping, Sequence, Union

import numpy as np

from . import tolerances
from .errors import DimensionError, InputError, PreconditionError, SignatureMismatchError

IN = "in"
OUT = "out"
_PORT_RANK = {IN: 0, OUT: 1}

Label = tuple[str, str]


@dataclasses.dataclass(frozen=True)
class Wire:
    """One tensor factor: the ``port`` side of ``node``, of dimension ``dim``."""

    node: str
    port: str
    dim: int

    def __post_init__(self) -> None:
        if self.port not in _PORT_RANK:
            raise InputError(f"port must be 'in' or 'out', got {self.port!r}")
        if not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise InputError(f"wire {self.node}:{self.port} needs a positive integer dim")

    @property
    def label(self) -> Label:
        return (self.node, self.port)

    def sort_key(self) -> tuple[bytes, int]:
        return (self.node.encode("utf-8"), _PORT_RANK[self.port])

    def partner(self) -> "Wire":
        """The other port of the same node."""
        return Wire(self.node, OUT if self.port == IN else IN, self.dim)

    def __str__(self) -> str:
        return f"{self.node}:{self.port}[{self.dim}]"


@dataclasses.dataclass(frozen=True)
class SpaceSig:
    """Canonically ordered tuple of wires with unique labels."""

    wires: tuple[Wire, ...]

    def __post_init__(self) -> None:
        labels = [w.label for w in self.wires]
        if len(set(labels)) != len(labels):
            raise SignatureMismatchError(f"duplicate wire labels in {labels}")
        keys = [w.sort_key() for w in self.wires]
        if keys != sorted(keys):
            raise SignatureMismatchError("wires are not in canonical order; use SpaceSig.of")

    @classmethod
    def of(cls, wires: Iterable[Wire]) -> "SpaceSig":
        merged: dict[Label, Wire] = {}
        for w in wires:
            prev = merged.get(w.label)
            if prev is not None and prev.dim != w.dim:
                raise DimensionError(f"wire {w.node}:{w.port} has dims {prev.dim} and {w.dim}")
            merged[w.label] = w
        return cls(tuple(sorted(merged.values(), key=Wire.sort_key)))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(w.dim for w in self.wires)

    @property
    def dim(self) -> int:
        return math.prod(self.dims)

    @property
    def labels(self) -> tuple[Label, ...]:
        return tuple(w.label for w in self.wires)

    def nodes(self) -> list[str]:
        seen: dict[str, None] = {}
        for w in self.wires:
            seen.setdefault(w.node, None)
        return list(seen)

    def has(self, label: Label) -> bool:
        return any(w.label == label for w in self.wires)

    def get(self, label: Label) -> Wire:
        for w in self.wires:
            if w.label == label:
                return w
        raise SignatureMismatchError(f"wire {label[0]}:{label[1]} not in signature")

    def union(self, other: "SpaceSig") -> "SpaceSig":
        return SpaceSig.of(self.wires + other.wires)

    def without(self, labels: Iterable[Label]) -> "SpaceSig":
        drop = set(labels)
        return SpaceSig(tuple(w for w in self.wires if w.label not in drop))

    def __iter__(self):
        return iter(self.wires)

    def __len__(self) -> int:
        return len(self.wires)

    def __str__(self) -> str:
        return "{" + ", ".join(str(w) for w in self.wires) + "}"


WireSpec = Union[Wire, Label, str]


def resolve_labels(sig: SpaceSig, spec: Iterable[WireSpec]) -> list[Label]:
    """Turn wires, ``(node, port)`` pairs or bare node names into labels present in ``sig``.

    A bare node name stands for every wire of that node in ``sig``.
    """
    out: list[Label] = []
    for item in spec:
        if isinstance(item, Wire):
            found = sig.get(item.label)
            if found.dim != item.dim:
                raise DimensionError(f"wire {item} conflicts with {found}")
            out.append(item.label)
        elif isinstance(item, tuple):
            sig.get(item)
            out.append(item)
        elif isinstance(item, str):
            hits = [w.label for w in sig.wires if w.node == item]
            if not hits:
                raise SignatureMismatchError(f"node {item!r} has no wire in {sig}")
            out.extend(hits)
        else:
            raise InputError(f"cannot interpret {item!r} as a wire")
    seen: dict[Label, None] = {}
    for lab in out:
        seen.setdefault(lab, None)
    return list(seen)


def _permute(matrix: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors: new factor ``k`` is old factor ``perm[k]``."""
    n = len(dims)
    if list(perm) == list(range(n)):
        return matrix
    total = int(np.prod(dims)) if n else 1
    t = matrix.reshape(tuple(dims) * 2)
    axes = list(perm) + [n + p for p in perm]
    return t.transpose(axes).reshape(total, total)


class LabeledOperator:
    """Immutable dense operator on a :class:`SpaceSig`."""

    __slots__ = ("sig", "matrix")

    def __init__(self, sig: SpaceSig, matrix: Any):
        m = np.array(matrix, dtype=np.complex128)
        if m.ndim == 0:
            m = m.reshape(1, 1)
        if m.shape != (sig.dim, sig.dim):
            raise DimensionError(f"matrix shape {m.shape} does not match signature dim {sig.dim}")
        m.setflags(write=False)
        object.__setattr__(self, "sig", sig)
        object.__setattr__(self, "matrix", m)

    def __setattr__(self, key, value):  # pragma: no cover - immutability guard
        raise AttributeError("LabeledOperator is immutable")

    @classmethod
    def from_ordered(cls, matrix: Any, wires: Sequence[Wire]) -> "LabeledOperator":
        """Build from a matrix whose factors follow ``wires`` in the given order."""
        m = np.asarray(matrix, dtype=np.complex128)
        sig = SpaceSig.of(wires)
        if len(sig) != len(wires):
            raise SignatureMismatchError("repeated wire in ordered construction")
        order = [sig.labels.index(w.label) for w in wires]
        # position k of canonical order takes factor from wires.index(canonical[k])
        perm = [order.index(k) for k in range(len(wires))]
        return cls(sig, _permute(m, [w.dim for w in wires], perm))

    @classmethod
    def scalar(cls, value: complex) -> "LabeledOperator":
        return cls(SpaceSig(()), np.array([[value]]))

    @classmethod
    def identity(cls, wires: Iterable[Wire]) -> "LabeledOperator":
        sig = SpaceSig.of(wires)
        return cls(sig, np.eye(sig.dim))

    def reorder(self, wires: Sequence[Wire]) -> np.ndarray:
        """Matrix with factors in the given (non-canonical) order."""
        labels = [w.label for w in wires]
        if sorted(labels) != sorted(self.sig.labels):
            raise SignatureMismatchError("reorder needs exactly the operator's wires")
        perm = [self.sig.labels.index(lab) for lab in labels]
        return _permute(self.matrix, self.sig.dims, perm)

    # arithmetic -----------------------------------------------------------
    def _pair(self, other: "LabeledOperator") -> tuple[np.ndarray, np.ndarray, SpaceSig]:
        if self.sig == other.sig:
            return self.matrix, other.matrix, self.sig
        sig = self.sig.union(other.sig)
        return align(self, sig).matrix, align(other, sig).matrix, sig

    def __add__(self, other: "LabeledOperator") -> "LabeledOperator":
        a, b, sig = self._pair(other)
        return LabeledOperator(sig, a + b)

    def __sub__(self, other: "LabeledOperator") -> "LabeledOperator":
        a, b, sig = self._pair(other)
        return LabeledOperator(sig, a - b)

    def __matmul__(self, other: "LabeledOperator") -> "LabeledOperator":
        """Operator product after padding both sides with identities."""
        a, b, sig = self._pair(other)
        return LabeledOperator(sig, a @ b)

    def __mul__(self, factor: complex) -> "LabeledOperator":
        return LabeledOperator(self.sig, self.matrix * factor)

    __rmul__ = __mul__

    def __truediv__(self, factor: complex) -> "LabeledOperator":
        return LabeledOperator(self.sig, self.matrix / factor)

    def __neg__(self) -> "LabeledOperator":
        return LabeledOperator(self.sig, -self.matrix)

    def dagger(self) -> "LabeledOperator":
        return LabeledOperator(self.sig, self.matrix.conj().T)

    def transpose(self) -> "LabeledOperator":
        return LabeledOperator(self.sig, self.matrix.T)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix))

    def distance(self, other: "LabeledOperator") -> float:
        a, b, _ = self._pair(other)
        return float(np.linalg.norm(a - b))

    def allclose(self, other: "LabeledOperator", atol: float = 1e-9) -> bool:
        if self.sig != other.sig:
            return False
        return bool(np.allclose(self.matrix, other.matrix, atol=atol, rtol=0.0))

    def is_hermitian(self, tol: float | None = None) -> bool:
        tol = tolerances.current().herm if tol is None else tol
        m = self.matrix
        return float(np.linalg.norm(m - m.conj().T)) <= tol * max(1.0, float(np.linalg.norm(m)))

    def is_psd(self, tol: float | None = None) -> bool:
        tol = tolerances.current().herm if tol is None else tol
        if not self.is_hermitian(tol):
            return False
        evals = np.linalg.eigvalsh(hermitian_part(self.matrix))
        return bool(evals.min(initial=0.0) >= -tol * max(1.0, float(np.linalg.norm(self.matrix))))

    def __repr__(self) -> str:
        return f"LabeledOperator(sig={self.sig}, dim={self.sig.dim})"


def hermitian_part(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


def align(a: LabeledOperator, target: SpaceSig) -> LabeledOperator:
    """Pad ``a`` with identities on the wires of ``target`` it lacks."""
    for w in a.sig.wires:
        found = None
        for t in target.wires:
            if t.label == w.label:
                found = t
                break
        if found is None:
            raise SignatureMismatchError(f"wire {w} is not part of target {target}")
        if found.dim != w.dim:
            raise DimensionError(f"wire {w.node}:{w.port} has dim {w.dim} but target says {found.dim}")
    if a.sig == target:
        return a
    present = set(a.sig.labels)
    missing = [w for w in target.wires if w.label not in present]
    dmiss = math.prod(w.dim for w in missing)
    big = np.kron(a.matrix, np.eye(dmiss))
    return LabeledOperator.from_ordered(big, list(a.sig.wires) + missing)


def _right_multiply(x: np.ndarray, sig: SpaceSig, small: LabeledOperator) -> np.ndarray:
    """``x @ align(small, sig)`` without forming the padded matrix."""
    n = len(sig)
    pos = [sig.labels.index(lab) for lab in small.sig.labels]
    k = len(pos)
    if k == 0:
        return x * small.matrix[0, 0]
    t = x.reshape(sig.dims * 2)
    r = small.matrix.reshape(small.sig.dims * 2)
    out = np.tensordot(t, r, axes=([n + p for p in pos], list(range(k))))
    remaining = [a for a in range(2 * n) if a not in {n + p for p in pos}]
    # out axes: remaining original axes, then the column axes of ``small``
    where = {a: i for i, a in enumerate(remaining)}
    for j, p in enumerate(pos):
        where[n + p] = len(remaining) + j
    return out.transpose([where[a] for a in range(2 * n)]).reshape(sig.dim, sig.dim)


def padded_product(ops: Sequence[LabeledOperator], sig: SpaceSig | None = None) -> LabeledOperator:
    """Ordered product of operators each padded with identities to ``sig``."""
    if sig is None:
        sig = SpaceSig(())
        for o in ops:
            sig = sig.union(o.sig)
    for o in ops:
        for w in o.sig.wires:
            if sig.get(w.label).dim != w.dim:
                raise DimensionError(f"wire {w} conflicts with target signature")
    if not ops:
        return LabeledOperator(sig, np.eye(sig.dim))
    x = align(ops[0], sig).matrix.copy()
    for o in ops[1:]:
        x = _right_multiply(x, sig, o)
    return LabeledOperator(sig, x)


def commutator_norm(a: LabeledOperator, b: LabeledOperator) -> float:
    """Frobenius norm of ``[a, b]`` evaluated on the union of the two signatures only."""
    if not set(a.sig.labels) & set(b.sig.labels):
        return 0.0
    sig = a.sig.union(b.sig)
    am, bm = align(a, sig).matrix, align(b, sig).matrix
    return float(np.linalg.norm(am @ bm - bm @ am))


def tensor(a: LabeledOperator, b: LabeledOperator) -> LabeledOperator:
    """Kronecker product of operators on disjoint wires, in canonical order."""
    shared = set(a.sig.labels) & set(b.sig.labels)
    if shared:
        raise SignatureMismatchError(f"tensor factors share wires {sorted(shared)}")
    return LabeledOperator.from_ordered(np.kron(a.matrix, b.matrix), list(a.sig.wires) + list(b.sig.wires))


def tensor_all(ops: Iterable[LabeledOperator]) -> LabeledOperator:
    result = LabeledOperator.scalar(1.0)
    for op in ops:
        result = tensor(result, op)
    return result


def partial_trace(a: LabeledOperator, wires: Iterable[WireSpec]) -> LabeledOperator:
    """Trace out the given wires (node names expand to both ports)."""
    traced = resolve_labels(a.sig, wires)
    if not traced:
        return a
    tset = set(traced)
    keep = [w for w in a.sig.wires if w.label not in tset]
    gone = [w for w in a.sig.wires if w.label in tset]
    m = a.reorder(keep + gone)
    dk = math.prod(w.dim for w in keep)
    dt = math.prod(w.dim for w in gone)
    reduced = np.einsum("ajbj->ab", m.reshape(dk, dt, dk, dt))
    return LabeledOperator(SpaceSig(tuple(keep)), reduced)


def keep_only(a: LabeledOperator, wires: Iterable[WireSpec]) -> LabeledOperator:
    """Partial trace over everything except the given wires."""
    kept = set(resolve_labels(a.sig, wires))
    return partial_trace(a, [lab for lab in a.sig.labels if lab not in kept])


def tau_id(node: str, dim: int) -> LabeledOperator:
    """Link operator of ``node``: the unnormalized maximally entangled projector on in/out."""
    if dim < 1:
        raise InputError("dimension must be positive")
    omega = np.eye(dim).reshape(-1)
    return LabeledOperator(SpaceSig((Wire(node, IN, dim), Wire(node, OUT, dim))), np.outer(omega, omega))


def cj_of_map(
    kraus: Sequence[np.ndarray] | np.ndarray,
    in_wires: Sequence[Wire],
    out_wires: Sequence[Wire],
    *,
    check_tp: bool = False,
) -> LabeledOperator:
    """Choi-Jamiolkowski operator of the map with the given Kraus operators.

    ``in_wires`` label the dual of the input space (normally ``out`` ports of the
    source nodes) and ``out_wires`` label the output space (normally ``in`` ports).
    Each Kraus operator is a ``d_out x d_in`` matrix whose row/column factors follow
    the listed wire order.
    """
    ops = [np.asarray(kraus, dtype=np.complex128)] if np.ndim(kraus) == 2 else [
        np.asarray(k, dtype=np.complex128) for k in kraus
    ]
    d_in = math.prod(w.dim for w in in_wires)
    d_out = math.prod(w.dim for w in out_wires)
    for k in ops:
        if k.shape != (d_out, d_in):
            raise DimensionError(f"Kraus operator has shape {k.shape}, expected {(d_out, d_in)}")
    if check_tp:
        comp = sum(k.conj().T @ k for k in ops)
        tol = tolerances.current().tp
        if np.linalg.norm(comp - np.eye(d_in)) > tol * max(1.0, math.sqrt(d_in)):
            raise PreconditionError("Kraus operators are not trace preserving")
    vecs = np.stack([k.reshape(-1) for k in ops], axis=1)
    return LabeledOperator.from_ordered(vecs @ vecs.conj().T, list(out_wires) + list(in_wires))


def _link_pairs(a: LabeledOperator, labels: Sequence[tuple[Label, Label]]) -> LabeledOperator:
    m = a
    for first, second in labels:
        w1, w2 = m.sig.get(first), m.sig.get(second)
        if w1.dim != w2.dim:
            raise DimensionError(f"cannot link {w1} with {w2}")
        keep = [w for w in m.sig.wires if w.label not in (first, second)]
        dk = math.prod(w.dim for w in keep)
        d = w1.dim
        t = m.reorder(keep + [w1, w2]).reshape(dk, d, d, dk, d, d)
        m = LabeledOperator(SpaceSig(tuple(keep)), np.einsum("aiibjj->ab", t))
    return m


def link_trace(a: LabeledOperator, nodes: Iterable[str]) -> LabeledOperator:
    """Contract each named node's in and out wires against its link operator."""
    pairs = []
    for n in nodes:
        if not (a.sig.has((n, IN)) and a.sig.has((n, OUT))):
            raise SignatureMismatchError(f"node {n!r} needs both in and out wires for a link trace")
        pairs.append(((n, IN), (n, OUT)))
    return _link_pairs(a, pairs)


def apply_cj(chan: LabeledOperator, state: LabeledOperator) -> LabeledOperator:
    """Apply a channel operator to a state, pairing each state wire with its partner port."""
    pairs = []
    for w in state.sig.wires:
        partner = w.partner().label
        if not chan.sig.has(partner):
            raise SignatureMismatchError(f"channel has no wire {partner[0]}:{partner[1]} to receive {w}")
        if chan.sig.has(w.label):
            raise SignatureMismatchError(f"channel and state both carry {w}")
        pairs.append((w.label, partner))
    return _link_pairs(tensor(chan, state), pairs)


def _support(m: np.ndarray, eig_tol: float) -> tuple[np.ndarray, np.ndarray]:
    evals, evecs = np.linalg.eigh(hermitian_part(m))
    cut = eig_tol * max(1.0, float(np.abs(evals).max(initial=0.0)))
    mask = evals > cut
    return evals[mask], evecs[:, mask]


def support_projector(a: LabeledOperator) -> LabeledOperator:
    _, vecs = _support(a.matrix, tolerances.current().eig)
    return LabeledOperator(a.sig, vecs @ vecs.conj().T)


def star(a: LabeledOperator, b: LabeledOperator) -> LabeledOperator:
    """Star product ``exp(log a + log b)`` with logarithms restricted to supports.

    The exponent is formed on the intersection of the two supports, which is the
    subspace where the Lie-Trotter product has a nonzero limit.
    """
    tol = tolerances.current()
    a_m, b_m, sig = a._pair(b)
    for name, m in (("first", a_m), ("second", b_m)):
        if not LabeledOperator(sig, m).is_psd():
            raise PreconditionError(f"{name} star operand is not positive semidefinite")
    ea, va = _support(a_m, tol.eig)
    eb, vb = _support(b_m, tol.eig)
    pa = va @ va.conj().T
    pb = vb @ vb.conj().T
    evals, evecs = np.linalg.eigh(hermitian_part(pa + pb))
    common = evecs[:, evals > 2.0 - 1e-7]
    if common.shape[1] == 0:
        return LabeledOperator(sig, np.zeros_like(a_m))
    log_sum = va @ np.diag(np.log(ea)) @ va.conj().T + vb @ np.diag(np.log(eb)) @ vb.conj().T
    inner = hermitian_part(common.conj().T @ log_sum @ common)
    w, u = np.linalg.eigh(inner)
    exp_inner = (u * np.exp(w)) @ u.conj().T
    return LabeledOperator(sig, common @ exp_inner @ common.conj().T)


def entropy_bits(m: np.ndarray | LabeledOperator) -> float:
    """Von Neumann entropy in bits."""
    if isinstance(m, LabeledOperator):
        m = m.matrix
    evals = np.linalg.eigvalsh(hermitian_part(np.asarray(m)))
    p = evals[evals > tolerances.current().eig]
    return float(-(p * np.log2(p)).sum())


def normalized(a: LabeledOperator) -> LabeledOperator:
    tr = a.trace().real
    if tr <= 0:
        raise PreconditionError("operator has non-positive trace and cannot be normalized")
    return a / tr


def qcmi(
    rho_hat: LabeledOperator,
    Y: Iterable[WireSpec],
    Z: Iterable[WireSpec],
    W: Iterable[WireSpec] = (),
) -> float:
    """Quantum conditional mutual information ``I(Y:Z|W)`` in bits."""
    tol = tolerances.current()
    ys, zs, ws = (set(resolve_labels(rho_hat.sig, s)) for s in (Y, Z, W))
    if ys & zs or ys & ws or zs & ws:
        raise PreconditionError("Y, Z and W must be disjoint")
    if ys | zs | ws != set(rho_hat.sig.labels):
        raise PreconditionError("Y, Z and W must cover every wire of the operator")
    if not rho_hat.is_psd(tol.num):
        raise PreconditionError("qcmi needs a positive semidefinite operator")
    if abs(rho_hat.trace() - 1.0) > tol.num:
        raise PreconditionError(f"qcmi needs unit trace, got {rho_hat.trace().real:.3g}")

    def s(keep: set[Label]) -> float:
        if not keep:
            return 0.0
        return entropy_bits(keep_only(rho_hat, keep))

    return s(ys | ws) + s(zs | ws) - s(ws) - s(ys | zs | ws)


def matrix_units(dim: int) -> list[np.ndarray]:
    """The ``dim**2`` matrix units ``|i><j|`` in row-major order."""
    units = []
    for i in range(dim):
        for j in range(dim):
            e = np.zeros((dim, dim), dtype=np.complex128)
            e[i, j] = 1.0
            units.append(e)
    return units


# serialization ------------------------------------------------------------

def wire_to_json(w: Wire) -> dict[str, Any]:
    return {"node": w.node, "port": w.port, "dim": int(w.dim)}


def wire_from_json(obj: Mapping[str, Any]) -> Wire:
    try:
        return Wire(str(obj["node"]), str(obj["port"]), int(obj["dim"]))
    except KeyError as exc:
        raise InputError(f"wire entry missing field {exc}") from None


def operator_to_json(a: LabeledOperator) -> dict[str, Any]:
    flat = a.matrix.reshape(-1)
    return {
        "wires": [wire_to_json(w) for w in a.sig.wires],
        "matrix": [[float(z.real), float(z.imag)] for z in flat],
    }


def operator_from_json(obj: Mapping[str, Any]) -> LabeledOperator:
    if "wires" not in obj or "matrix" not in obj:
        raise InputError("operator document needs 'wires' and 'matrix'")
    wires = tuple(wire_from_json(w) for w in obj["wires"])
    try:
        sig = SpaceSig(wires)
    except SignatureMismatchError as exc:
        raise InputError(f"operator wires rejected: {exc}") from None
    entries = np.asarray(obj["matrix"], dtype=float)
    if entries.ndim != 2 or entries.shape[1] != 2 or entries.shape[0] != sig.dim**2:
        raise InputError(
            f"matrix must be a flat row-major list of {sig.dim**2} [re, im] pairs"
        )
    m = (entries[:, 0] + 1j * entries[:, 1]).reshape(sig.dim, sig.dim)
    return LabeledOperator(sig, m)
