"""Tensor-product state spaces, collective spin algebra and bosonic modes.

Conventions used throughout the package:

* Dicke factors are ordered ``M = -J .. +J`` (ascending), so index 0 is the
  all-ground state ``|0...0>`` and index ``N`` is ``|1...1>``.
* Boson factors are ordered ``n = 0 .. n_max``.
* Flat indices are factor-major with the first factor varying slowest
  (C order, the same as ``np.ravel_multi_index``).
* Operators are ``scipy.sparse.csr_matrix`` in canonical form: sorted
  indices, no duplicate entries and no stored zeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sparse

__all__ = [
    "Factor",
    "HilbertLayout",
    "dicke",
    "boson",
    "three_level",
    "canonical",
    "entries",
    "dicke_ops",
    "boson_ops",
    "three_level_ops",
    "x_basis",
    "XBasis",
    "embed",
    "basis_state",
    "TDOperator",
    "StaticFrame",
]

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class Factor:
    kind: str  # "dicke" | "boson" | "three_level"
    label: str
    size: int  # atom count for dicke, Fock cutoff for boson, unused otherwise

    @property
    def dim(self) -> int:
        if self.kind == "dicke":
            return self.size + 1
        if self.kind == "boson":
            return self.size + 1
        if self.kind == "three_level":
            return 3
        raise ValueError(f"unknown factor kind {self.kind!r}")


def dicke(label: str, n_atoms: int) -> Factor:
    if n_atoms < 1:
        raise ValueError(f"dicke factor {label!r}: empty cloud (N={n_atoms})")
    return Factor("dicke", label, int(n_atoms))


def boson(label: str, n_max: int) -> Factor:
    if n_max < 1:
        raise ValueError(f"boson factor {label!r}: Fock cutoff must be >= 1, got {n_max}")
    return Factor("boson", label, int(n_max))


def three_level(label: str) -> Factor:
    return Factor("three_level", label, 1)


@dataclass(frozen=True)
class HilbertLayout:
    """Ordered list of factor spaces; defines the tensor index arithmetic."""

    factors: tuple[Factor, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        labels = [f.label for f in self.factors]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate factor labels in {labels}")
        if not self.factors:
            raise ValueError("layout needs at least one factor")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.dim for f in self.factors)

    @property
    def total_dim(self) -> int:
        return math.prod(self.dims)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(f.label for f in self.factors)

    def __contains__(self, label: str) -> bool:
        return label in self.labels

    def position(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"no factor labelled {label!r} in layout {self.labels}") from None

    def factor(self, label: str) -> Factor:
        return self.factors[self.position(label)]

    def index(self, multi: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.dims))

    def multi_index(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.total_dim:
            raise IndexError(f"flat index {index} outside [0, {self.total_dim})")
        return tuple(int(i) for i in np.unravel_index(index, self.dims))

    def bosons(self) -> list[Factor]:
        return [f for f in self.factors if f.kind == "boson"]

    def top_occupation(self, state: np.ndarray) -> dict[str, float]:
        """Population of the highest Fock level of every boson factor.

        ``state`` may be a vector, a batch of column vectors (mean over the
        batch is *not* taken, the maximum is), or a density matrix.
        """
        out = {}
        dims = self.dims
        if state.ndim == 2 and state.shape == (self.total_dim, self.total_dim):
            diag = np.real(np.diagonal(state)).reshape(dims)
            for k, f in enumerate(self.factors):
                if f.kind == "boson":
                    out[f.label] = float(np.take(diag, f.dim - 1, axis=k).sum())
            return out
        amps = state.reshape(dims + state.shape[1:])
        probs = np.abs(amps) ** 2
        for k, f in enumerate(self.factors):
            if f.kind == "boson":
                top = np.take(probs, f.dim - 1, axis=k)
                top = top.reshape(-1, *state.shape[1:]).sum(axis=0)
                out[f.label] = float(np.max(top))
        return out


def canonical(op) -> sparse.csr_matrix:
    """Return ``op`` as a complex CSR matrix with no duplicates or stored zeros."""
    m = sparse.csr_matrix(op, dtype=complex)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return m


def entries(op) -> Iterator[tuple[int, int, complex]]:
    """Iterate the stored entries of ``op`` in (row, col) lexicographic order."""
    m = canonical(op).tocoo()
    order = np.lexsort((m.col, m.row))
    for k in order:
        yield int(m.row[k]), int(m.col[k]), complex(m.data[k])


def dicke_ops(n_atoms: int) -> dict[str, sparse.csr_matrix]:
    """Collective spin operators in the symmetric ``J = N/2`` sector.

    ``S_plus = sum_n |1_n><0_n|`` restricted to the Dicke states, so
    ``S_x = S_plus + S_minus`` has eigenvalues ``2 M_x`` and ``S_z`` is
    ``diag(M)``.
    """
    if n_atoms < 1:
        raise ValueError(f"dicke_ops: N must be >= 1 (empty cloud), got {n_atoms}")
    J = n_atoms / 2
    M = np.arange(n_atoms + 1) - J
    lower = np.sqrt(J * (J + 1) - M[:-1] * (M[:-1] + 1))
    s_plus = canonical(sparse.diags(lower, -1))
    s_minus = canonical(s_plus.conj().T)
    return {
        "S_plus": s_plus,
        "S_minus": s_minus,
        "S_z": canonical(sparse.diags(M)),
        "S_x": canonical(s_plus + s_minus),
    }


def boson_ops(n_max: int) -> dict[str, sparse.csr_matrix]:
    if n_max < 1:
        raise ValueError(f"boson_ops: n_max must be >= 1, got {n_max}")
    a = canonical(sparse.diags(np.sqrt(np.arange(1, n_max + 1)), 1))
    return {
        "a": a,
        "a_dag": canonical(a.conj().T),
        "n": canonical(sparse.diags(np.arange(n_max + 1, dtype=float))),
    }


def three_level_ops() -> dict[str, sparse.csr_matrix]:
    """Transition operators ``|i><j|`` on a single atom, basis (|0>, |1>, |e>)."""
    names = ("0", "1", "e")
    out = {}
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            m = sparse.csr_matrix(([1.0 + 0j], ([i], [j])), shape=(3, 3))
            out[f"{a}{b}"] = m
    return out


@dataclass(frozen=True)
class XBasis:
    eigenvalues: np.ndarray  # ascending, equal to 2*M_x
    vectors: np.ndarray  # columns are S_x eigenvectors in the z basis

    @property
    def coeffs(self) -> np.ndarray:
        """``coeffs[Mx, Mz] = <M_x|M_z>``."""
        return self.vectors.conj().T


def x_basis(n_atoms: int) -> XBasis:
    s_x = dicke_ops(n_atoms)["S_x"].toarray()
    w, v = np.linalg.eigh(s_x)
    # S_x has a non-degenerate integer-spaced spectrum 2*M_x; snap roundoff.
    J = n_atoms / 2
    w = 2 * (np.arange(n_atoms + 1) - J)
    for k in range(v.shape[1]):
        col = v[:, k]
        first = np.flatnonzero(np.abs(col) > 1e-12)[0]
        v[:, k] = col * (abs(col[first]) / col[first])
    return XBasis(eigenvalues=w.astype(float), vectors=v.astype(complex))


def embed(op, slot: str, layout: HilbertLayout) -> sparse.csr_matrix:
    """Kronecker-embed a single-factor operator, identity elsewhere."""
    k = layout.position(slot)
    d = layout.dims[k]
    if op.shape != (d, d):
        raise ValueError(
            f"embed: operator shape {op.shape} does not match factor {slot!r} of dim {d}"
        )
    left = math.prod(layout.dims[:k])
    right = math.prod(layout.dims[k + 1 :])
    out = sparse.csr_matrix(op, dtype=complex)
    if left > 1:
        out = sparse.kron(sparse.identity(left, dtype=complex, format="csr"), out, format="csr")
    if right > 1:
        out = sparse.kron(out, sparse.identity(right, dtype=complex, format="csr"), format="csr")
    return canonical(out)


def basis_state(layout: HilbertLayout, **levels: int) -> np.ndarray:
    """Product basis state; factors not named sit in level 0."""
    multi = [0] * len(layout.factors)
    for label, level in levels.items():
        k = layout.position(label)
        if not 0 <= level < layout.dims[k]:
            raise ValueError(f"level {level} outside factor {label!r} of dim {layout.dims[k]}")
        multi[k] = level
    psi = np.zeros(layout.total_dim, dtype=complex)
    psi[layout.index(multi)] = 1.0
    return psi


def _freq_key(w: float) -> float:
    return round(float(w), 10)


class TDOperator:
    """Operator with harmonic time dependence ``H(t) = sum_k exp(i w_k t) O_k``.

    Every Hamiltonian and collapse operator in the model is of this form, so
    the representation is exact, picklable, and cheap to evaluate.
    """

    def __init__(self, dim: int, terms=()):
        self.dim = int(dim)
        merged: dict[float, sparse.csr_matrix] = {}
        for w, op in terms:
            op = sparse.csr_matrix(op, dtype=complex)
            if op.shape != (self.dim, self.dim):
                raise ValueError(f"term shape {op.shape} does not match dim {self.dim}")
            key = _freq_key(w)
            merged[key] = merged[key] + op if key in merged else op
        self.terms: tuple[tuple[float, sparse.csr_matrix], ...] = tuple(
            (w, canonical(op)) for w, op in sorted(merged.items()) if canonical(op).nnz
        )

    @classmethod
    def static(cls, op) -> "TDOperator":
        return cls(op.shape[0], [(0.0, op)])

    @classmethod
    def zero(cls, dim: int) -> "TDOperator":
        return cls(dim, [])

    def __add__(self, other: "TDOperator") -> "TDOperator":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        return TDOperator(self.dim, self.terms + other.terms)

    def __mul__(self, scalar: complex) -> "TDOperator":
        return TDOperator(self.dim, [(w, scalar * op) for w, op in self.terms])

    __rmul__ = __mul__

    def adjoint(self) -> "TDOperator":
        return TDOperator(self.dim, [(-w, op.conj().T) for w, op in self.terms])

    def hermitian_part_plus_hc(self) -> "TDOperator":
        """``self + self^dagger``."""
        return self + self.adjoint()

    def __matmul__(self, other: "TDOperator") -> "TDOperator":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        return TDOperator(self.dim, [(w1 + w2, o1 @ o2) for w1, o1 in self.terms for w2, o2 in other.terms])

    def at(self, t: float) -> sparse.csr_matrix:
        out = sparse.csr_matrix((self.dim, self.dim), dtype=complex)
        for w, op in self.terms:
            out = out + (np.exp(1j * w * t) if w else 1.0) * op
        return canonical(out)

    @cached_property
    def _stacked(self):
        # one sparse product per call instead of one per harmonic
        freqs = np.array([w for w, _ in self.terms])
        return freqs, canonical(sparse.vstack([op for _, op in self.terms], format="csr"))

    def apply(self, t: float, psi: np.ndarray) -> np.ndarray:
        if not self.terms:
            return np.zeros_like(psi, dtype=complex)
        if len(self.terms) == 1:
            w, op = self.terms[0]
            y = op @ psi
            return y * np.exp(1j * w * t) if w else y
        freqs, stacked = self._stacked
        y = (stacked @ psi).reshape(len(freqs), -1)
        return (np.exp(1j * freqs * t) @ y).reshape(psi.shape)

    @property
    def max_frequency(self) -> float:
        return max((abs(w) for w, _ in self.terms), default=0.0)

    @property
    def norm_bound(self) -> float:
        """Upper bound on the spectral norm of ``H(t)`` for all t."""
        total = 0.0
        for _, op in self.terms:
            a = abs(op)
            total += math.sqrt(a.sum(axis=0).max() * a.sum(axis=1).max())
        return total

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        diff = self.adjoint()
        mine = {w: op for w, op in self.terms}
        theirs = {w: op for w, op in diff.terms}
        for w in set(mine) | set(theirs):
            d = mine.get(w, 0) - theirs.get(w, 0)
            if not isinstance(d, int) and d.nnz and abs(d).max() > tol:
                return False
        return True


class StaticFrame:
    """Interaction picture with respect to a static, factor-local Hamiltonian.

    ``local`` maps factor labels to Hermitian single-factor operators whose sum
    is ``H_s``.  Frame states are stored in the eigenbasis of ``H_s`` (the
    product of the local eigenbases), where rotated operators stay sparse:
    ``y(t) = exp(i E t) W^dag psi(t)``.  :meth:`interaction` rewrites a
    Hamiltonian for that representation and :meth:`to_lab` maps states back.
    """

    def __init__(self, layout: HilbertLayout, local: dict[str, object]):
        self.layout = layout
        self.local = {}
        for label, op in local.items():
            h = np.asarray(op.toarray() if sparse.issparse(op) else op, dtype=complex)
            if np.abs(h - h.conj().T).max() > HERMITIAN_TOL:
                raise ValueError(f"frame generator on {label!r} is not Hermitian")
            w, v = np.linalg.eigh(h)
            self.local[label] = (w, v)
        eig = np.zeros(layout.dims)
        mats = []
        for k, f in enumerate(layout.factors):
            if f.label in self.local:
                w, v = self.local[f.label]
                shape = [1] * len(layout.dims)
                shape[k] = f.dim
                eig = eig + w.reshape(shape)
                mats.append(sparse.csr_matrix(v))
            else:
                mats.append(sparse.identity(f.dim, dtype=complex, format="csr"))
        self.energies = eig.reshape(-1)
        W = mats[0]
        for m in mats[1:]:
            W = sparse.kron(W, m, format="csr")
        self._W = canonical(W)
        self._Wh = canonical(W.conj().T)
        # energies are sums of a handful of local levels; key on a rounded grid
        self._scale = max(1.0, float(np.abs(self.energies).max()))

    def transform(self, op: TDOperator, subtract_generator: bool = False) -> TDOperator:
        """``exp(i E t) W^dag O(t) W exp(-i E t)`` as a sum of harmonics."""
        terms = []
        E = self.energies
        gen = sparse.diags(E.astype(complex), format="csr")
        has_static = False
        for w, o in op.terms:
            rotated = self._Wh @ o @ self._W
            if subtract_generator and w == 0:
                rotated = rotated - gen
                has_static = True
            rotated = rotated.tocoo()
            keep = np.abs(rotated.data) > 1e-14 * self._scale
            rows, cols, data = rotated.row[keep], rotated.col[keep], rotated.data[keep]
            dw = np.round((E[rows] - E[cols]) / self._scale, 10) * self._scale
            for val in np.unique(dw):
                sel = dw == val
                terms.append((w + float(val), sparse.csr_matrix((data[sel], (rows[sel], cols[sel])), shape=o.shape)))
        if subtract_generator and not has_static:
            terms.append((0.0, -gen))
        return TDOperator(op.dim, terms)

    def interaction(self, H: TDOperator) -> TDOperator:
        """Generator of the frame dynamics, ``transform(H - H_s)``."""
        return self.transform(H, subtract_generator=True)

    def generator(self) -> sparse.csr_matrix:
        """``H_s`` on the full layout, in the original basis."""
        return canonical(self._W @ sparse.diags(self.energies.astype(complex)) @ self._Wh)

    def _phase(self, y: np.ndarray, t: float) -> np.ndarray:
        phase = np.exp(-1j * self.energies * t)
        return (phase * y.T).T if y.ndim == 2 else phase * y

    def to_lab(self, y: np.ndarray, t: float) -> np.ndarray:
        """Frame state (eigenbasis) to lab state; accepts a batch of columns."""
        return self._W @ self._phase(y, t)

    def to_frame(self, psi: np.ndarray, t: float) -> np.ndarray:
        return self._phase(self._Wh @ psi, -t)

    def dm_to_lab(self, rho: np.ndarray, t: float) -> np.ndarray:
        half = self.to_lab(rho, t)
        return self.to_lab(half.conj().T, t).conj().T

    def dm_to_frame(self, rho: np.ndarray, t: float) -> np.ndarray:
        half = self.to_frame(rho, t)
        return self.to_frame(half.conj().T, t).conj().T

    def local_unitary(self, labels: Sequence[str], t: float) -> np.ndarray:
        """``exp(-i H_s t)`` restricted to the named factors (dense)."""
        U = np.ones((1, 1), dtype=complex)
        for label in labels:
            d = self.layout.factor(label).dim
            if label in self.local:
                w, v = self.local[label]
                u = (v * np.exp(-1j * w * t)) @ v.conj().T
            else:
                u = np.eye(d, dtype=complex)
            U = np.kron(U, u)
        return U
