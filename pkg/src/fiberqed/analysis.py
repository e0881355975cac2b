"""Reduced states, fidelities and the branch observables plotted over a run."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hilbert import HilbertLayout

KINDS = ("psi_s", "psi_a")


def partial_trace(state: np.ndarray, layout: HilbertLayout, keep) -> np.ndarray:
    """Reduced density matrix on the factors in ``keep`` (kept in layout order).

    ``state`` is a vector, a density matrix, or a ``(dim, B)`` batch of
    vectors; for a batch the result is the average over the batch columns.
    """
    keep = [keep] if isinstance(keep, str) else list(keep)
    if not keep:
        raise ValueError("partial_trace: keep set is empty")
    axes = sorted(layout.position(label) for label in keep)
    dims = layout.dims
    n = len(dims)
    trace_out = [k for k in range(n) if k not in axes]
    dk = math.prod(dims[k] for k in axes)
    state = np.asarray(state)
    D = layout.total_dim
    if state.ndim == 2 and state.shape == (D, D):
        t = state.reshape(dims + dims)
        # move kept axes to the front on both sides, sum the rest along the diagonal
        perm = axes + trace_out
        t = t.transpose(perm + [n + k for k in perm])
        dr = D // dk
        t = t.reshape(dk, dr, dk, dr)
        return np.einsum("ajbj->ab", t)
    batch = state.reshape(D, -1)
    t = batch.reshape(dims + (batch.shape[1],))
    t = t.transpose(axes + trace_out + [n]).reshape(dk, -1)
    return (t @ t.conj().T) / batch.shape[1]


def fidelity(rho: np.ndarray, target: np.ndarray) -> float:
    """``<target| rho |target>`` for a pure target."""
    target = np.asarray(target).reshape(-1)
    if rho.shape != (target.size, target.size):
        raise ValueError(f"fidelity: rho is {rho.shape}, target has {target.size} entries")
    return float(np.real(np.vdot(target, rho @ target)))


def branches(kind: str, N1: int, N2: int) -> tuple[int, int]:
    """Flat indices on ``dicke(N1) x dicke(N2)`` of the two branch states."""
    d2 = N2 + 1
    if kind == "psi_a":
        return 0, N1 * d2 + N2
    if kind == "psi_s":
        return N2, N1 * d2
    raise ValueError(f"unknown target kind {kind!r}; expected one of {KINDS}")


def target_state(kind: str, N1: int, N2: int, phase_sign: int = 1) -> np.ndarray:
    """Equal-weight superposition of the two branches with phases ``exp(-+ i sign pi/4)``."""
    if phase_sign not in (1, -1):
        raise ValueError(f"phase_sign must be +1 or -1, got {phase_sign}")
    first, second = branches(kind, N1, N2)
    psi = np.zeros((N1 + 1) * (N2 + 1), dtype=complex)
    psi[first] = np.exp(-1j * phase_sign * math.pi / 4) / math.sqrt(2)
    psi[second] = np.exp(1j * phase_sign * math.pi / 4) / math.sqrt(2)
    return psi


OBSERVABLE_COLUMNS = ("P_ground", "P_excited", "coh_re", "coh_im", "fidelity")


def observables(rho_atoms: np.ndarray, kind: str, N1: int, N2: int, target: np.ndarray | None = None) -> np.ndarray:
    """Branch populations, the coherence ``<second|rho|first>`` and the fidelity.

    Returned in the order of :data:`OBSERVABLE_COLUMNS`.  For ``psi_a`` the
    first branch is all-ground, for ``psi_s`` it is ``|0...0>_1 |1...1>_2``.
    """
    first, second = branches(kind, N1, N2)
    if target is None:
        target = target_state(kind, N1, N2)
    coh = rho_atoms[second, first]
    return np.array(
        [rho_atoms[first, first].real, rho_atoms[second, second].real, coh.real, coh.imag, fidelity(rho_atoms, target)]
    )


@dataclass
class ObservableSeries:
    times: np.ndarray
    values: np.ndarray  # shape (len(times), 5), columns OBSERVABLE_COLUMNS
    stderr: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, OBSERVABLE_COLUMNS.index(name)]

    @property
    def final_fidelity(self) -> float:
        return float(self.values[-1, -1])

    def rows(self):
        for t, v in zip(self.times, self.values):
            yield (float(t),) + tuple(float(x) for x in v)
