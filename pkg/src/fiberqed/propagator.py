"""Coherent dynamics: direct integration, the closed-form propagator and the ideal gate.

Two eigenvalue conventions meet here.  ``S_x = S+ + S-`` has eigenvalues
``2 M_x``, and the closed-form propagator :func:`analytic_u` uses them
as they are.  :func:`ideal_gate` and :func:`protocol_final_state` instead
phase each x-basis component by ``exp(-i lambda_tau k^2)`` with
``k = M_x1 - M_x2``.  Physical dynamics generated by :func:`fiberqed.model.h_eff`
over a time ``tau`` therefore equal ``ideal_gate(4 * lambda * tau)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as la
from scipy.stats import poisson

from . import _stepping
from .errors import CutoffError, NormDriftError, TimingError
from .hilbert import HilbertLayout, StaticFrame, TDOperator, boson_ops, x_basis
from .model import DerivedConstants, ModelParams, derived_constants


@dataclass
class SchrodingerResult:
    state: np.ndarray
    times: np.ndarray
    samples: list = field(default_factory=list)
    norm_drift: float = 0.0
    top_occupation: dict = field(default_factory=dict)
    dt: float = 0.0
    n_steps: int = 0


def _as_source(H) -> TDOperator:
    if isinstance(H, TDOperator):
        return H
    return TDOperator.static(H)


def _merge_max(acc: dict, new: dict):
    for k, v in new.items():
        acc[k] = max(acc.get(k, 0.0), v)


def evolve_schrodinger(
    H,
    psi0: np.ndarray,
    t0: float,
    t1: float,
    dt: float | None = None,
    *,
    layout: HilbertLayout | None = None,
    frame: StaticFrame | None = None,
    n_samples: int = _stepping.DEFAULT_SAMPLES,
    extra_samples=(),
    observer: Callable[[float, np.ndarray], object] | None = None,
    norm_tol: float = 1e-6,
    cutoff_tol: float = 1e-4,
    check_norm: bool = True,
    check_cutoff: bool = True,
) -> SchrodingerResult:
    """Integrate ``i dpsi/dt = H(t) psi`` with classical RK4 at a fixed step.

    ``H`` is a :class:`TDOperator` or a constant sparse matrix.  With a
    ``frame`` the integration runs in that interaction picture and states are
    mapped back before being observed or returned.  ``observer(t, psi)`` is
    called on every sample time.  The returned state is renormalised; the
    largest norm deviation seen at a sample is reported and must stay below
    ``norm_tol``.  With a ``layout`` the top Fock level of every boson factor
    is watched and must stay below ``cutoff_tol``.
    """
    H = _as_source(H)
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1) > 1e-9:
        raise ValueError("evolve_schrodinger: psi0 is not normalised")
    Hi = _stepping.interaction_picture(H, frame)
    if dt is None:
        dt = _stepping.auto_dt(Hi)
    grid = _stepping.sample_grid(t0, t1, n_samples, extra_samples)

    def lab(t, y):
        return frame.to_lab(y, t) if frame is not None else y

    def f(t, y):
        return -1j * Hi.apply(t, y)

    y = frame.to_frame(psi0, t0) if frame is not None else psi0.copy()
    drift = 0.0
    tops: dict = {}
    samples = []

    def visit(t, y):
        nonlocal drift
        drift = max(drift, abs(np.linalg.norm(y) - 1))
        if check_norm and drift > norm_tol:
            raise NormDriftError("propagator", "norm drift exceeds tolerance, reduce dt", drift=drift, t=t, dt=dt)
        psi = lab(t, y)
        if layout is not None:
            top = layout.top_occupation(psi)
            _merge_max(tops, top)
            worst = max(top.values(), default=0.0)
            if check_cutoff and worst > cutoff_tol:
                raise CutoffError("propagator", "top Fock level occupied, raise the cutoff", occupation=top, t=t)
        if observer is not None:
            samples.append(observer(t, psi))

    visit(grid[0], y)
    n = 0
    for k, t, h in _stepping.steps(grid, dt):
        y = _stepping.rk4(f, t, y, h)
        n += 1
        if k >= 0:
            visit(grid[k], y)
    final = lab(grid[-1], y)
    final = final / np.linalg.norm(final)
    return SchrodingerResult(final, grid, samples, drift, tops, dt, n)


# ----------------------------------------------------------------- closed forms

@dataclass(frozen=True)
class MagnusParams:
    gamma_t: float
    alpha_t: complex


def magnus_params(t: float, d: DerivedConstants, delta: float) -> MagnusParams:
    x = delta * t
    gamma = -(d.Theta**2 / (4 * delta**2)) * (x - math.sin(x))
    alpha = (d.Theta / (2 * delta)) * (1 - np.exp(1j * x)) * np.exp(1j * d.theta0)
    return MagnusParams(float(gamma), complex(alpha))


def displacement(alpha: complex, n_max: int) -> np.ndarray:
    """``exp(alpha a^dag - alpha^* a)`` with the truncated generator (exactly unitary)."""
    ops = boson_ops(n_max)
    gen = alpha * ops["a_dag"].toarray() - np.conj(alpha) * ops["a"].toarray()
    return la.expm(gen)


def coherent_tail(alpha: complex, n_max: int) -> float:
    """Weight of the untruncated coherent state ``|alpha>`` above level ``n_max``."""
    return float(poisson.sf(n_max, abs(alpha) ** 2))


def cutoff_for(alpha_max: float, tail: float = 1e-8) -> int:
    """Smallest Fock cutoff that holds a coherent state up to ``tail``."""
    n = 1
    while coherent_tail(alpha_max, n) > tail:
        n += 1
    return n


def _x_pair(N1: int, N2: int):
    b1, b2 = x_basis(N1), x_basis(N2)
    s = (b1.eigenvalues[:, None] - b2.eigenvalues[None, :]).reshape(-1)
    V = np.kron(b1.vectors, b2.vectors)
    return s, V


def analytic_u(
    t: float,
    p: ModelParams,
    layout: HilbertLayout,
    check_tail: bool = True,
    tail_tol: float = 1e-8,
) -> np.ndarray:
    """Closed-form propagator ``exp(-i gamma X^2) D(alpha X)`` with ``X = S1_x - S2_x``.

    Built in the x-basis of both clouds, where ``X`` is diagonal with
    eigenvalues ``s = 2 (M_x1 - M_x2)``; each block gets the phase
    ``exp(-i gamma s^2)`` and the displacement of mode ``c`` by ``alpha s``.
    """
    if layout.labels != ("cloud1", "cloud2", "c") or [f.kind for f in layout.factors] != ["dicke", "dicke", "boson"]:
        raise ValueError(f"analytic_u: layout must be dicke(cloud1) x dicke(cloud2) x boson(c), got {layout.labels}")
    N1, N2, n_max = (f.size for f in layout.factors)
    d = derived_constants(p)
    m = magnus_params(t, d, p.delta)
    s, V = _x_pair(N1, N2)
    if check_tail:
        tail = coherent_tail(m.alpha_t * np.abs(s).max(), n_max)
        if tail > tail_tol:
            raise CutoffError("propagator", "displaced mode c leaks past the cutoff", tail=tail, n_max=n_max, t=t)
    nb = n_max + 1
    U = np.zeros((len(s) * nb, len(s) * nb), dtype=complex)
    for val in np.unique(s):
        cols = V[:, s == val]
        P = cols @ cols.conj().T
        block = np.exp(-1j * m.gamma_t * val**2) * displacement(m.alpha_t * val, n_max)
        U += np.kron(P, block)
    return U


def ideal_gate(N1: int, N2: int, lambda_tau: float) -> np.ndarray:
    """``exp(-i lambda_tau k^2)`` on each x-basis component, ``k = M_x1 - M_x2``."""
    s, V = _x_pair(N1, N2)
    k = s / 2
    return (V * np.exp(-1j * lambda_tau * k**2)) @ V.conj().T


def _z_levels(init, N1, N2) -> tuple[int, int]:
    d1, d2 = N1 + 1, N2 + 1
    if isinstance(init, tuple) and len(init) == 2 and all(isinstance(i, (int, np.integer)) for i in init):
        m1, m2 = int(init[0]), int(init[1])
        if not (0 <= m1 < d1 and 0 <= m2 < d2):
            raise ValueError(f"protocol_final_state: levels {init} outside dims ({d1}, {d2})")
        return m1, m2
    vec = np.asarray(init, dtype=complex).reshape(-1)
    if vec.size != d1 * d2:
        raise ValueError(f"protocol_final_state: state of size {vec.size}, expected {d1 * d2}")
    nz = np.flatnonzero(np.abs(vec) > 1e-12)
    if len(nz) != 1 or abs(abs(vec[nz[0]]) - 1) > 1e-9:
        raise ValueError("protocol_final_state: input must be a single z-basis product state")
    return divmod(int(nz[0]), d2)


def protocol_final_state(init, lambda_tau: float, N1: int, N2: int) -> np.ndarray:
    """Apply the ideal gate to ``|J1,M1>_z |J2,M2>_z`` by explicit x-basis expansion.

    ``init`` is a pair of level indices (0 is all-ground, ``N`` all-excited)
    or a basis vector on ``dicke(N1) x dicke(N2)``.
    """
    m1, m2 = _z_levels(init, N1, N2)
    b1, b2 = x_basis(N1), x_basis(N2)
    amps = np.outer(b1.coeffs[:, m1], b2.coeffs[:, m2])
    k = (b1.eigenvalues[:, None] - b2.eigenvalues[None, :]) / 2
    amps = amps * np.exp(-1j * lambda_tau * k**2)
    psi = (b1.vectors @ amps @ b2.vectors.T).reshape(-1)
    return psi / np.linalg.norm(psi)


# ----------------------------------------------------------------- timing

@dataclass(frozen=True)
class ProtocolTiming:
    tau: float
    K: int
    lambda_tau: float
    phase_mismatch: float
    phase_sign: int
    gate_phase: float  # phase that multiplies k^2 in the realised gate, 4*lambda*tau

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def phase_mismatch(lambda_tau: float) -> float:
    return abs((abs(lambda_tau) % math.pi) - math.pi / 2)


def phase_sign(lambda_tau: float) -> int:
    """+1 if ``exp(-i lambda_tau k^2)`` matches the ``lambda_tau = pi/2`` branch phases, else -1."""
    return 1 if (lambda_tau % (2 * math.pi)) < math.pi else -1


def timing_for(p: ModelParams, K: int) -> ProtocolTiming:
    if p.delta == 0:
        raise ZeroDivisionError("choose_protocol_time: delta = 0")
    lam = derived_constants(p).lam
    tau = 2 * K * math.pi / abs(p.delta)
    lt = lam * tau
    return ProtocolTiming(tau, K, lt, phase_mismatch(lt), phase_sign(lt), 4 * lt)


def choose_protocol_time(p: ModelParams, k_max: int = 100, tol: float = math.pi / 4) -> ProtocolTiming:
    """Smallest ``K`` in ``1..k_max`` whose ``tau = 2 K pi / |delta|`` brings
    ``|lambda| tau`` closest to ``pi/2`` modulo ``pi``."""
    if derived_constants(p).lam == 0:
        raise ZeroDivisionError("choose_protocol_time: lambda = 0")
    best = None
    for K in range(1, k_max + 1):
        cand = timing_for(p, K)
        if best is None or cand.phase_mismatch < best.phase_mismatch - 1e-12:
            best = cand
    if not best.phase_mismatch < tol:
        raise TimingError(
            "propagator", "no K reaches the pi/2 phase within tolerance",
            best_K=best.K, best_mismatch=best.phase_mismatch, tol=tol,
        )
    return best


# ----------------------------------------------------------------- NOON map

def noon_map(state: np.ndarray, layout: HilbertLayout) -> np.ndarray:
    """Idealised transfer ``|J,-J>|0>_j <-> |J,+J>|N_j>_j`` in each cavity.

    Layout must be ``dicke(cloud1) x dicke(cloud2) x boson(a1) x boson(a2)``.
    The map permutes basis states and is its own inverse.
    """
    expected = (("cloud1", "dicke"), ("cloud2", "dicke"), ("a1", "boson"), ("a2", "boson"))
    got = tuple((f.label, f.kind) for f in layout.factors)
    if got != expected:
        raise ValueError(f"noon_map: layout must be {expected}, got {got}")
    N1, N2, c1, c2 = (f.size for f in layout.factors)
    for j, (N, cut) in enumerate(((N1, c1), (N2, c2)), start=1):
        if cut < N:
            raise CutoffError("propagator", f"noon_map: cavity a{j} cutoff below N{j}", cutoff=cut, N=N)
    amps = np.asarray(state, dtype=complex).reshape(layout.dims).copy()
    # cloud axis j-1 paired with mode axis j+1
    for cloud_ax, mode_ax, N in ((0, 2, N1), (1, 3, N2)):
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[cloud_ax], lo[mode_ax] = 0, 0
        hi[cloud_ax], hi[mode_ax] = N, N
        a, b = amps[tuple(lo)].copy(), amps[tuple(hi)].copy()
        amps[tuple(lo)], amps[tuple(hi)] = b, a
    return amps.reshape(-1)


def protocol_cutoff(p: ModelParams, levels: tuple[int, int], top_tol: float = 1e-5, damping: float = 0.0) -> int:
    """Fock cutoff for mode ``c`` so the largest displacement of the protocol
    leaves less than ``top_tol`` at or above the top level.

    Weights come from the x-basis expansion of the initial Dicke product
    state.  The coherent amplitude of component ``s`` driven at detuning
    ``delta`` and damped at ``damping`` never exceeds
    ``Theta |s| / sqrt(damping^2 + delta^2)``.
    """
    b1, b2 = x_basis(p.N1), x_basis(p.N2)
    w = np.outer(np.abs(b1.coeffs[:, levels[0]]) ** 2, np.abs(b2.coeffs[:, levels[1]]) ** 2).reshape(-1)
    s = (b1.eigenvalues[:, None] - b2.eigenvalues[None, :]).reshape(-1)
    amp = derived_constants(p).Theta / math.hypot(damping, p.delta)
    n = 2
    while float(np.dot(w, poisson.sf(n - 1, (amp * s) ** 2))) >= top_tol:
        n += 1
    return n
