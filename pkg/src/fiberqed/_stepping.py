"""Fixed-step RK4 machinery shared by the coherent and dissipative solvers."""

from __future__ import annotations

import math
from typing import Callable, Iterator

import numpy as np

from .hilbert import StaticFrame, TDOperator

DEFAULT_SAMPLES = 200


def interaction_picture(H: TDOperator, frame: StaticFrame | None) -> TDOperator:
    if frame is None:
        return H
    return frame.interaction(H)


def auto_dt(op: TDOperator, decay: TDOperator | None = None) -> float:
    """Step ``2 pi / (50 w_max)``, with ``w_max`` the largest harmonic frequency
    or the operator norm bound, whichever is larger.

    With a decay operator ``K = sum rate o^dag o`` the step is also capped at
    ``0.05 / ||K||``, which keeps the per-step jump probability ``~2 dt <K>``
    below 0.1 for every state.  Accuracy is enforced after the fact by the
    norm and trace checks of the solvers.
    """
    w_max = max(op.max_frequency, op.norm_bound, 1e-300)
    dt = 2 * math.pi / (50 * w_max)
    if decay is not None and decay.norm_bound > 0:
        dt = min(dt, 0.05 / decay.norm_bound)
    return dt


def sample_grid(t0: float, t1: float, n_samples: int = DEFAULT_SAMPLES, extra=()) -> np.ndarray:
    if not t1 > t0:
        raise ValueError(f"need t1 > t0, got t0={t0}, t1={t1}")
    grid = np.linspace(t0, t1, n_samples)
    if extra:
        grid = np.union1d(grid, [t for t in extra if t0 <= t <= t1])
    return grid


def steps(grid: np.ndarray, dt: float) -> Iterator[tuple[int, float, float]]:
    """Yield ``(sample_index, t_start, h)`` for each step; the sample index is
    set on the last step of every interval and -1 otherwise."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    for k in range(1, len(grid)):
        a, b = grid[k - 1], grid[k]
        n = max(1, math.ceil((b - a) / dt - 1e-9))
        h = (b - a) / n
        for i in range(n):
            yield (k if i == n - 1 else -1), a + i * h, h


def count_steps(grid: np.ndarray, dt: float) -> int:
    return sum(max(1, math.ceil((b - a) / dt - 1e-9)) for a, b in zip(grid[:-1], grid[1:]))


def rk4(f: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + h / 2, y + (h / 2) * k1)
    k3 = f(t + h / 2, y + (h / 2) * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
