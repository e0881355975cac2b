import math

import numpy as np
import pytest
import scipy.sparse as sparse
from scipy import stats

from fiberqed import model
from fiberqed.analysis import partial_trace
from fiberqed.dissipative import (
    CollapseSet,
    lindblad_evolve,
    mcwf_ensemble,
    mcwf_trajectory,
    trajectory_streams,
)
from fiberqed.errors import JumpProbabilityError, PositivityError, TraceError
from fiberqed.hilbert import basis_state
from fiberqed.propagator import evolve_schrodinger

SM = sparse.csr_matrix(np.array([[0, 1], [0, 0]], dtype=complex))  # |0><1|, lowering
SX = sparse.csr_matrix(np.array([[0, 1], [1, 0]], dtype=complex))
EXCITED = np.array([0, 1], dtype=complex)


def qubit_rows(t, psi):
    """Density-matrix entries of each column as real rows."""
    return np.stack(
        [np.abs(psi[0]) ** 2, np.abs(psi[1]) ** 2, (psi[0] * psi[1].conj()).real, (psi[0] * psi[1].conj()).imag], axis=1
    )


def rho_from_row(row):
    c = row[2] + 1j * row[3]
    return np.array([[row[0], c], [np.conj(c), row[1]]])


def trace_distance(a, b):
    return 0.5 * np.abs(np.linalg.eigvalsh(a - b)).sum()


def test_no_collapse_lindblad_equals_schrodinger():
    rng = np.random.default_rng(1)
    h = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    H = sparse.csr_matrix(h + h.conj().T)
    psi = rng.normal(size=4) + 1j * rng.normal(size=4)
    psi /= np.linalg.norm(psi)
    r = lindblad_evolve(np.outer(psi, psi.conj()), H, CollapseSet(), 0, 1.5, dt=1e-3)
    s = evolve_schrodinger(H, psi, 0, 1.5, dt=1e-3)
    assert np.abs(r.rho - np.outer(s.state, s.state.conj())).max() < 1e-8


def test_lindblad_decay_rate_convention():
    rate = 0.3
    r = lindblad_evolve(np.diag([0, 1]).astype(complex), sparse.csr_matrix((2, 2), dtype=complex),
                        CollapseSet([(SM, rate, "sm")]), 0, 2.0, dt=1e-3)
    assert r.rho[1, 1].real == pytest.approx(math.exp(-2 * rate * 2.0), abs=1e-10)
    assert r.min_eigenvalue > -1e-12


def test_lindblad_input_validation_and_trace_check():
    H = sparse.csr_matrix((2, 2), dtype=complex)
    with pytest.raises(ValueError):
        lindblad_evolve(np.eye(2), H, CollapseSet(), 0, 1)
    # one RK4 step of length 4/(2 rate) overshoots the decay and leaves a negative population
    with pytest.raises(PositivityError):
        lindblad_evolve(np.diag([0, 1]).astype(complex), H, CollapseSet([(SM, 40.0, "sm")]), 0, 1, dt=0.05, n_samples=2)
    with pytest.raises(TraceError):
        lindblad_evolve(np.diag([0, 1]).astype(complex), H, CollapseSet([(SM, 0.1, "sm")]), 0, 1, trace_tol=-1)


def test_zero_rates_match_schrodinger_for_any_seed():
    H = sparse.csr_matrix(0.7 * SX)
    s = evolve_schrodinger(H, EXCITED, 0, 3.0, dt=0.01)
    for seed in (0, 1, 99):
        tr = mcwf_trajectory(EXCITED, H, CollapseSet([(SM, 0.0, "sm")]), 0, 3.0, dt=0.01, seed=seed)
        assert tr.jumps == []
        assert np.abs(tr.final_state - s.state).max() < 1e-12


def damped_rabi(n, seed, **kw):
    return mcwf_ensemble(
        n, seed, EXCITED, sparse.csr_matrix(0.5 * SX), CollapseSet([(SM, 0.2, "sm")]), 0, 4.0, dt=0.01,
        n_samples=5, observer=qubit_rows, **kw,
    )


def test_jump_log_reproducible_and_batch_independent():
    a = damped_rabi(40, 7, batch_size=64)
    b = damped_rabi(40, 7, batch_size=64)
    c = damped_rabi(40, 7, batch_size=3)
    assert [t.jumps for t in a.trajectories] == [t.jumps for t in b.trajectories]
    assert [t.jumps for t in a.trajectories] == [t.jumps for t in c.trajectories]
    assert np.abs(a.mean - c.mean).max() < 1e-12
    assert sum(a.jump_counts) > 0


def test_workers_do_not_change_results():
    a = damped_rabi(16, 3, batch_size=4, workers=1)
    b = damped_rabi(16, 3, batch_size=4, workers=2)
    assert [t.jumps for t in a.trajectories] == [t.jumps for t in b.trajectories]
    assert np.abs(a.mean - b.mean).max() < 1e-12


def test_prefix_of_larger_ensemble_is_stable():
    small = damped_rabi(10, 5)
    large = damped_rabi(20, 5)
    assert [t.jumps for t in small.trajectories] == [t.jumps for t in large.trajectories[:10]]


def test_single_trajectory_ensemble():
    ens = damped_rabi(1, 11)
    assert ens.stderr is None
    single = mcwf_ensemble(1, 11, EXCITED, sparse.csr_matrix(0.5 * SX), CollapseSet([(SM, 0.2, "sm")]), 0, 4.0,
                           dt=0.01, n_samples=5, observer=qubit_rows)
    assert np.array_equal(ens.mean, single.trajectories[0].series)


def test_streams_are_distinct_per_trajectory():
    d0, _ = trajectory_streams(1, 0)
    d1, _ = trajectory_streams(1, 1)
    assert d0.random() != d1.random()


def test_first_jump_times_are_exponential():
    rate = 0.25
    ens = mcwf_ensemble(400, 2024, EXCITED, sparse.csr_matrix((2, 2), dtype=complex),
                        CollapseSet([(SM, rate, "sm")]), 0, 30.0, dt=0.01, n_samples=2)
    times = np.array([t.jumps[0][0] for t in ens.trajectories if t.jumps])
    assert all(len(t.jumps) <= 1 for t in ens.trajectories)
    # decays at 2*rate, censored at t=30
    cdf = lambda x: stats.expon.cdf(x, scale=1 / (2 * rate)) / stats.expon.cdf(30.0, scale=1 / (2 * rate))
    assert stats.kstest(times, cdf).pvalue > 0.01


def test_ensemble_matches_lindblad_within_stderr():
    H = sparse.csr_matrix(0.5 * SX)
    cs = CollapseSet([(SM, 0.2, "sm")])
    ens = mcwf_ensemble(2000, 1, EXCITED, H, cs, 0, 4.0, dt=0.01, n_samples=5, observer=qubit_rows)
    lind = lindblad_evolve(np.diag([0, 1]).astype(complex), H, cs, 0, 4.0, dt=0.01, n_samples=5)
    exact = lind.rho[1, 1].real
    assert abs(ens.mean[-1, 1] - exact) < 4 * ens.stderr[-1, 1]


@pytest.mark.slow
def test_trace_distance_shrinks_like_inverse_sqrt():
    H = sparse.csr_matrix(0.5 * SX)
    cs = CollapseSet([(SM, 0.2, "sm")])
    exact = lindblad_evolve(np.diag([0, 1]).astype(complex), H, cs, 0, 4.0, dt=0.01, n_samples=2).rho
    dist = {}
    for n in (100, 1000, 10000):
        d = []
        for seed in range(4):
            ens = mcwf_ensemble(n, seed, EXCITED, H, cs, 0, 4.0, dt=0.01, n_samples=2, observer=qubit_rows,
                                batch_size=2048, keep_trajectories=False)
            d.append(trace_distance(rho_from_row(ens.mean[-1]), exact))
        dist[n] = float(np.sqrt(np.mean(np.square(d))))
    slope = np.polyfit(np.log10(list(dist)), np.log10(list(dist.values())), 1)[0]
    assert -1.0 < slope < -0.25, dist


def test_jump_probability_guard():
    with pytest.raises(JumpProbabilityError) as exc:
        mcwf_trajectory(EXCITED, sparse.csr_matrix((2, 2), dtype=complex), CollapseSet([(SM, 5.0, "sm")]), 0, 1, dt=0.05,
                       n_samples=2)
    assert "probability" in exc.value.diagnostics


def test_ensemble_tags_trajectory_on_error():
    with pytest.raises(JumpProbabilityError, match="trajectory"):
        mcwf_ensemble(3, 0, EXCITED, sparse.csr_matrix((2, 2), dtype=complex), CollapseSet([(SM, 5.0, "sm")]), 0, 1,
                      dt=0.05, n_samples=2)


def test_jump_log_csv(tmp_path):
    ens = damped_rabi(5, 2)
    path = tmp_path / "jumps.csv"
    ens.write_jump_log(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "trajectory,t,label"
    assert len(lines) == 1 + sum(ens.jump_counts)


def test_lossless_protocol_in_lindblad_matches_closed_system():
    p = model.PRESETS["paper-sec3"]().replace(N1=1, N2=1)
    lay = model.effective_layout(1, 1, 12)
    psi0 = basis_state(lay)
    t1 = 2 * math.pi / p.delta
    H = model.effective_source(p, lay)
    cs = CollapseSet([(model._mode(lay, "c"), 0.0, "c")])
    r = lindblad_evolve(np.outer(psi0, psi0.conj()), H, cs, 0, t1, dt=0.5, layout=lay, n_samples=3)
    s = evolve_schrodinger(H, psi0, 0, t1, dt=0.5, layout=lay, n_samples=3)
    keep = ("cloud1", "cloud2")
    assert np.abs(partial_trace(r.rho, lay, keep) - partial_trace(s.state, lay, keep)).max() < 1e-7
