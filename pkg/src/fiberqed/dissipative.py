"""Open-system dynamics: Lindblad integration and quantum-jump trajectories.

Rates are stored bare.  A collapse ``(o, rate)`` contributes
``rate * (2 o rho o^dag - o^dag o rho - rho o^dag o)`` to the master
equation, so the jump operator of the unravelling is ``sqrt(2 rate) o``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _stepping
from .errors import CutoffError, JumpProbabilityError, PositivityError, ToleranceError, TraceError
from .hilbert import HilbertLayout, StaticFrame, TDOperator

MAX_JUMP_PROBABILITY = 0.1
_CHUNK = 4096  # uniform draws fetched per refill of a trajectory's decision stream


@dataclass(frozen=True)
class Collapse:
    operator: TDOperator
    rate: float
    label: str

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError(f"collapse {self.label!r}: negative rate {self.rate}")


class CollapseSet:
    """Named collapse channels; accepts sparse matrices or :class:`TDOperator`."""

    def __init__(self, items: Sequence = ()):
        self.items: list[Collapse] = []
        for item in items:
            if isinstance(item, Collapse):
                self.items.append(item)
            else:
                op, rate, label = item
                op = op if isinstance(op, TDOperator) else TDOperator.static(op)
                self.items.append(Collapse(op, float(rate), str(label)))

    def active(self) -> list[Collapse]:
        return [c for c in self.items if c.rate > 0 and c.operator.terms]

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def in_frame(self, frame: StaticFrame | None) -> "CollapseSet":
        if frame is None:
            return self
        return CollapseSet([Collapse(frame.transform(c.operator), c.rate, c.label) for c in self.items])

    def decay_operator(self) -> TDOperator | None:
        """``sum rate o^dag o`` (the anti-Hermitian part of the drift is ``-i`` times this)."""
        total = None
        for c in self.active():
            term = c.rate * (c.operator.adjoint() @ c.operator)
            total = term if total is None else total + term
        return total


def _lindblad_rhs(H: TDOperator, cs: list[Collapse], K: TDOperator | None):
    Heff = H if K is None else H + (-1j) * K

    def f(t, rho):
        A = Heff.apply(t, rho)
        out = -1j * A
        out = out + (-1j * A).conj().T  # rho Hermitian: -i(H_eff rho) + h.c.
        for c in cs:
            L = c.operator
            X = L.apply(t, rho)  # o rho
            Y = L.apply(t, X.conj().T)  # o (o rho)^dag = o rho o^dag
            out = out + 2 * c.rate * Y
        return out

    return f


@dataclass
class LindbladResult:
    rho: np.ndarray
    times: np.ndarray
    samples: list = field(default_factory=list)
    trace_drift: float = 0.0
    min_eigenvalue: float = 0.0
    top_occupation: dict = field(default_factory=dict)
    dt: float = 0.0
    n_steps: int = 0


def lindblad_evolve(
    rho0: np.ndarray,
    H,
    collapses: CollapseSet,
    t0: float,
    t1: float,
    dt: float | None = None,
    *,
    layout: HilbertLayout | None = None,
    frame: StaticFrame | None = None,
    n_samples: int = _stepping.DEFAULT_SAMPLES,
    extra_samples=(),
    observer: Callable[[float, np.ndarray], object] | None = None,
    trace_tol: float = 1e-7,
    negativity_tol: float = 1e-7,
    cutoff_tol: float = 1e-4,
    check_cutoff: bool = True,
) -> LindbladResult:
    """RK4 integration of the master equation on a dense density matrix."""
    rho0 = np.asarray(rho0, dtype=complex)
    if np.abs(rho0 - rho0.conj().T).max() > 1e-10 or abs(np.trace(rho0) - 1) > 1e-10:
        raise ValueError("lindblad_evolve: rho0 must be Hermitian with unit trace")
    if np.linalg.eigvalsh(rho0).min() < -1e-10:
        raise ValueError("lindblad_evolve: rho0 is not positive semidefinite")
    H = H if isinstance(H, TDOperator) else TDOperator.static(H)
    Hi = _stepping.interaction_picture(H, frame)
    cs = collapses.in_frame(frame).active()
    K = CollapseSet(cs).decay_operator()
    if dt is None:
        # commutator frequencies are energy differences, up to twice the spectral radius of H
        dt = _stepping.auto_dt(Hi, K) / 2
    grid = _stepping.sample_grid(t0, t1, n_samples, extra_samples)
    f = _lindblad_rhs(Hi, cs, K)

    rho = frame.dm_to_frame(rho0, t0) if frame is not None else rho0.copy()
    stats = {"trace": 0.0, "min_eig": 0.0}
    tops: dict = {}
    samples = []

    def visit(t, rho):
        tr = abs(np.trace(rho) - 1)
        stats["trace"] = max(stats["trace"], tr)
        if tr > trace_tol:
            raise TraceError("dissipative", "trace drift exceeds tolerance", drift=tr, t=t, dt=dt)
        lam = np.linalg.eigvalsh((rho + rho.conj().T) / 2).min()
        stats["min_eig"] = min(stats["min_eig"], lam)
        if lam < -negativity_tol:
            raise PositivityError("dissipative", "density matrix lost positivity", min_eigenvalue=lam, t=t)
        lab = frame.dm_to_lab(rho, t) if frame is not None else rho
        if layout is not None:
            top = layout.top_occupation(lab)
            for k, v in top.items():
                tops[k] = max(tops.get(k, 0.0), v)
            if check_cutoff and max(top.values(), default=0.0) > cutoff_tol:
                raise CutoffError("dissipative", "top Fock level occupied, raise the cutoff", occupation=top, t=t)
        if observer is not None:
            samples.append(observer(t, lab))

    visit(grid[0], rho)
    n = 0
    for k, t, h in _stepping.steps(grid, dt):
        rho = _stepping.rk4(f, t, rho, h)
        rho = (rho + rho.conj().T) / 2
        n += 1
        if k >= 0:
            visit(grid[k], rho)
    final = frame.dm_to_lab(rho, grid[-1]) if frame is not None else rho
    return LindbladResult(final, grid, samples, stats["trace"], stats["min_eig"], tops, dt, n)


# --------------------------------------------------------------------------- trajectories

@dataclass
class TrajectoryResult:
    times: np.ndarray
    series: np.ndarray  # (n_samples, n_obs), whatever the observer returned
    jumps: list  # [(time, label), ...]
    seed: int
    index: int = 0
    final_state: np.ndarray | None = None
    top_occupation: dict = field(default_factory=dict)

    def jump_rows(self):
        for t, label in self.jumps:
            yield self.index, repr(float(t)), label


@dataclass
class EnsembleResult:
    n_traj: int
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray | None  # None when a single trajectory makes it undefined
    base_seed: int
    trajectories: list = field(default_factory=list)

    @property
    def jump_counts(self) -> list[int]:
        return [len(t.jumps) for t in self.trajectories]

    def write_jump_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trajectory", "t", "label"])
            for tr in self.trajectories:
                w.writerows(tr.jump_rows())


def trajectory_streams(base_seed: int, index: int | None = None):
    """Decision and channel generators for one trajectory.

    A stand-alone trajectory derives its streams from ``seed`` alone;
    trajectory ``i`` of an ensemble uses ``(base_seed, i)``.
    """
    ss = np.random.SeedSequence(base_seed) if index is None else np.random.SeedSequence(base_seed, spawn_key=(index,))
    decide, channel = ss.spawn(2)
    return np.random.default_rng(decide), np.random.default_rng(channel)


class _Uniforms:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.buf = np.empty(0)
        self.pos = 0

    def next(self) -> float:
        if self.pos == len(self.buf):
            self.buf = self.rng.random(_CHUNK)
            self.pos = 0
        u = self.buf[self.pos]
        self.pos += 1
        return float(u)


@dataclass
class _Problem:
    H: TDOperator
    collapses: list
    K: TDOperator | None
    frame: StaticFrame | None
    layout: HilbertLayout | None
    grid: np.ndarray
    dt: float
    observer: Callable | None
    cutoff_tol: float
    check_cutoff: bool


def _prepare(psi0, H, collapses, t0, t1, dt, frame, layout, n_samples, extra_samples, observer, cutoff_tol, check_cutoff):
    H = H if isinstance(H, TDOperator) else TDOperator.static(H)
    Hi = _stepping.interaction_picture(H, frame)
    cs = collapses.in_frame(frame).active()
    K = CollapseSet(cs).decay_operator()
    if dt is None:
        dt = _stepping.auto_dt(Hi, K)
    grid = _stepping.sample_grid(t0, t1, n_samples, extra_samples)
    return _Problem(Hi, cs, K, frame, layout, grid, dt, observer, cutoff_tol, check_cutoff)


def _run_batch(prob: _Problem, psi0: np.ndarray, seeds: list[tuple[int, int | None]]):
    """Propagate one column per trajectory; all decisions are per column."""
    B = len(seeds)
    y = np.repeat(np.asarray(psi0, dtype=complex).reshape(-1, 1), B, axis=1)
    if prob.frame is not None:
        y = prob.frame.to_frame(y, prob.grid[0])
    y = y / np.linalg.norm(y, axis=0)
    streams = [trajectory_streams(s, i) for s, i in seeds]
    uniforms = [_Uniforms(d) for d, _ in streams]
    jumps: list[list] = [[] for _ in range(B)]
    series: list[list] = [[] for _ in range(B)]
    tops: list[dict] = [{} for _ in range(B)]
    cs = prob.collapses
    Heff = prob.H if prob.K is None else prob.H + (-1j) * prob.K

    def f(t, v):
        return -1j * Heff.apply(t, v)

    def visit(t, y):
        lab = prob.frame.to_lab(y, t) if prob.frame is not None else y
        if prob.layout is not None:
            for b in range(B):
                top = prob.layout.top_occupation(lab[:, b])
                for k, v in top.items():
                    tops[b][k] = max(tops[b].get(k, 0.0), v)
                if prob.check_cutoff and max(top.values(), default=0.0) > prob.cutoff_tol:
                    raise CutoffError(
                        "dissipative", "top Fock level occupied, raise the cutoff",
                        occupation=top, t=t, trajectory=seeds[b][1],
                    )
        if prob.observer is not None:
            obs = prob.observer(t, lab)
            for b in range(B):
                series[b].append(np.asarray(obs[b], dtype=float))

    visit(prob.grid[0], y)
    for k, t, h in _stepping.steps(prob.grid, prob.dt):
        new = _stepping.rk4(f, t, y, h)
        p_keep = np.einsum("ij,ij->j", new.conj(), new).real
        dp = 1.0 - p_keep
        if dp.max() >= MAX_JUMP_PROBABILITY:
            b = int(dp.argmax())
            raise JumpProbabilityError(
                "dissipative", "per-step jump probability too large, reduce dt",
                probability=float(dp[b]), t=t, dt=h, trajectory=seeds[b][1],
            )
        if p_keep.min() <= 1e-300:
            raise ToleranceError("dissipative", "state norm underflow", t=t)
        for b in range(B):
            if uniforms[b].next() < dp[b] and cs:
                weights = np.array(
                    [c.rate * np.linalg.norm(c.operator.apply(t, y[:, b])) ** 2 for c in cs]
                )
                total = weights.sum()
                if total <= 0:
                    new[:, b] = new[:, b] / math.sqrt(p_keep[b])
                    continue
                u = streams[b][1].random() * total
                j = min(int(np.searchsorted(np.cumsum(weights), u, side="right")), len(cs) - 1)
                v = cs[j].operator.apply(t, y[:, b])
                new[:, b] = v / np.linalg.norm(v)
                jumps[b].append((t + h, cs[j].label))
            else:
                new[:, b] = new[:, b] / math.sqrt(p_keep[b])
        y = new
        if k >= 0:
            visit(prob.grid[k], y)
    finals = prob.frame.to_lab(y, prob.grid[-1]) if prob.frame is not None else y
    out = []
    for b, (seed, idx) in enumerate(seeds):
        arr = np.array(series[b]) if series[b] else np.zeros((len(prob.grid), 0))
        out.append(TrajectoryResult(prob.grid, arr, jumps[b], seed, idx or 0, finals[:, b].copy(), tops[b]))
    return out


def mcwf_trajectory(
    psi0: np.ndarray,
    H,
    collapses: CollapseSet,
    t0: float,
    t1: float,
    dt: float | None = None,
    seed: int = 0,
    *,
    layout: HilbertLayout | None = None,
    frame: StaticFrame | None = None,
    n_samples: int = _stepping.DEFAULT_SAMPLES,
    extra_samples=(),
    observer: Callable | None = None,
    cutoff_tol: float = 1e-4,
    check_cutoff: bool = True,
) -> TrajectoryResult:
    """One quantum-jump trajectory with first-order jump sampling per step.

    ``observer(t, psi)`` receives a ``(dim, B)`` batch of lab-frame states
    and must return one row of floats per column.
    """
    prob = _prepare(psi0, H, collapses, t0, t1, dt, frame, layout, n_samples, extra_samples, observer, cutoff_tol, check_cutoff)
    return _run_batch(prob, psi0, [(int(seed), None)])[0]


def _run_chunk(args):
    prob, psi0, seeds = args
    return _run_batch(prob, psi0, seeds)


def mcwf_ensemble(
    n_traj: int,
    base_seed: int,
    psi0: np.ndarray,
    H,
    collapses: CollapseSet,
    t0: float,
    t1: float,
    dt: float | None = None,
    *,
    layout: HilbertLayout | None = None,
    frame: StaticFrame | None = None,
    n_samples: int = _stepping.DEFAULT_SAMPLES,
    extra_samples=(),
    observer: Callable | None = None,
    cutoff_tol: float = 1e-4,
    check_cutoff: bool = True,
    batch_size: int = 256,
    workers: int = 1,
    keep_trajectories: bool = True,
) -> EnsembleResult:
    """Average of ``n_traj`` trajectories; trajectory ``i`` is seeded by ``(base_seed, i)``.

    Results do not depend on ``batch_size`` or ``workers``: every trajectory
    owns its random streams and the reduction runs over an array ordered by
    trajectory index.
    """
    if n_traj < 1:
        raise ValueError(f"mcwf_ensemble: n_traj must be >= 1, got {n_traj}")
    prob = _prepare(psi0, H, collapses, t0, t1, dt, frame, layout, n_samples, extra_samples, observer, cutoff_tol, check_cutoff)
    chunks = [
        [(int(base_seed), i) for i in range(start, min(start + batch_size, n_traj))]
        for start in range(0, n_traj, batch_size)
    ]
    results: list[TrajectoryResult] = []
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for part in pool.map(_run_chunk, [(prob, psi0, c) for c in chunks]):
                    results.extend(part)
        else:
            for c in chunks:
                results.extend(_run_batch(prob, psi0, c))
    except ToleranceError as exc:
        idx = exc.diagnostics.get("trajectory")
        exc.args = (f"{exc.args[0]} [trajectory {idx}]",) if idx is not None else exc.args
        raise
    results.sort(key=lambda r: r.index)
    stack = np.stack([r.series for r in results])
    mean = stack.mean(axis=0)
    stderr = stack.std(axis=0, ddof=1) / math.sqrt(n_traj) if n_traj > 1 else None
    if not keep_trajectories:
        for r in results:
            r.final_state = None
    return EnsembleResult(n_traj, prob.grid, mean, stderr, int(base_seed), results)
