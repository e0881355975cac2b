"""Command-line front end: config parsing, scenario presets and result files.

Config files are flat ``key = value`` lines grouped under ``[section]``
headers.  ``#`` starts a comment.  Numbers accept scientific notation and
complex values are written ``re+im i`` (for example ``0.5-0.1i``).  Every key
is listed in :data:`SCHEMA` with its type and default; unknown keys are
errors.

Subcommands: ``regime``, ``ideal``, ``simulate``, ``fig2 --case X``,
``noon`` and ``gauge-check``.  Each writes ``summary.json`` to ``--out`` and,
when the scenario has time dependence, ``series.csv``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, dissipative, model, propagator
from .errors import ToleranceError
from .hilbert import HilbertLayout, TDOperator, basis_state

log = logging.getLogger("fiberqed.cli")

CSV_HEADER = ("t",) + analysis.OBSERVABLE_COLUMNS
SCENARIOS = ("ideal", "effective", "full_open", "fig2", "noon", "regime", "gauge")
FIG2_CASES = {"a": (2, 0.1), "b": (2, 0.5), "c": (5, 0.1), "d": (5, 0.5)}
SUBCOMMANDS = {
    "regime": "regime",
    "ideal": "ideal",
    "simulate": None,  # scenario taken from the config, full_open by default
    "fig2": "fig2",
    "noon": "noon",
    "gauge-check": "gauge",
}


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key, self.line = key, line
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"config: {message}" + (f" ({', '.join(where)})" if where else ""))


# --------------------------------------------------------------------------- value parsers

_COMPLEX = re.compile(r"^[0-9eE.+\-]*i?$")


def parse_complex(text: str) -> complex:
    s = text.replace(" ", "")
    if not s or "j" in s.lower() or not _COMPLEX.match(s):
        raise ValueError(f"not a complex number of the form re+im i: {text!r}")
    if s.endswith("i"):
        body = s[:-1]
        if body in ("", "+", "-"):
            body += "1"
        if body[-1] in "+-" and not body[:-1].lower().endswith("e"):
            body += "1"
        s = body + "j"
    return complex(s)


def parse_int(text: str) -> int:
    s = text.strip()
    if not re.fullmatch(r"[+-]?\d+", s):
        raise ValueError(f"not an integer: {text!r}")
    return int(s)


def parse_float(text: str) -> float:
    return float(text.strip())


def parse_bool(text: str) -> bool:
    s = text.strip().lower()
    if s in ("true", "yes", "1", "on"):
        return True
    if s in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _auto_or(parser):
    def parse(text: str):
        return None if text.strip().lower() == "auto" else parser(text)

    return parse


def _choice(*options):
    def parse(text: str):
        s = text.strip()
        if s not in options:
            raise ValueError(f"expected one of {options}, got {s!r}")
        return s

    return parse


def _seed(text: str) -> int:
    v = parse_int(text)
    if not 0 <= v < 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {v}")
    return v


# key -> (parser, default, meaning)
SCHEMA: dict[str, dict[str, tuple]] = {
    "model": {
        "preset": (_choice(*model.PRESETS), None, "named parameter set applied before the other keys"),
        "g0": (parse_complex, 1.0, "cavity coupling, unit of frequency"),
        "Omega0": (parse_complex, 1.0, "Rabi frequency |0>-|e>, cavity-assisted leg"),
        "Omega1": (parse_complex, 10.0, "Rabi frequency |0>-|e>, Raman leg"),
        "Omega2": (parse_complex, 10.0, "Rabi frequency |1>-|e>, Raman leg"),
        "Omega3": (parse_complex, 0.0, "Rabi frequency |1>-|e>, compensating field"),
        "Delta0": (parse_float, 100.0, "detuning of Omega0"),
        "Delta1": (parse_float, -100.0, "detuning of Omega1 and Omega2"),
        "Delta3": (parse_float, 200.0, "detuning of Omega3"),
        "delta": (parse_float, 0.01, "two-photon detuning; Delta2 = Delta0 - delta"),
        "nu": (parse_float, 0.1, "cavity-fiber coupling"),
        "phi": (parse_float, 0.0, "fiber propagation phase"),
        "kappa_c": (parse_float, 0.0, "cavity decay rate"),
        "kappa_f": (parse_float, 0.0, "fiber decay rate"),
        "gamma_e": (parse_float, 0.0, "spontaneous emission rate"),
        "N1": (parse_int, 2, "atoms in cloud 1"),
        "N2": (parse_int, 2, "atoms in cloud 2"),
        "n_max": (parse_int, 8, "Fock cutoff for modes without an explicit cutoff"),
    },
    "scenario": {
        "scenario": (_choice(*SCENARIOS), None, "what to run"),
        "case": (_choice(*FIG2_CASES), None, "fig2 panel; pins N1=N2 and kappa_c"),
        "init": (_choice("ground", "opposite"), "ground", "ground: |0..0>|0..0>; opposite: |0..0>|1..1>"),
        "tau": (_auto_or(parse_float), None, "protocol duration; auto picks it from lambda and delta"),
        "K": (_auto_or(parse_int), None, "fix delta*tau = 2 K pi instead of searching"),
        "k_max": (parse_int, 100, "search bound for K"),
        "hamiltonian": (
            _choice("raman", "normal", "effective"), None,
            "raman (a1, a2, b), normal (c, c1, c2 with drive) or effective (c only, approximate);"
            " full_open defaults to raman, fig2 to effective",
        ),
        "n_c": (_auto_or(parse_int), None, "cutoff of mode c (normal and effective models)"),
        "n_side": (parse_int, 2, "cutoff of the fiber-split modes c1, c2"),
        "initial_photons": (parse_int, 0, "Fock level of the first mode of the layout at t=0"),
        "observe_frame": (_choice("rotating", "lab"), "rotating", "frame of the atomic observables"),
        "lossless": (parse_bool, False, "set every decay rate to zero"),
        "monitor_cutoff": (parse_bool, True, "abort when a top Fock level is occupied"),
    },
    "run": {
        "seed": (_seed, 0, "base seed of the trajectory streams"),
        "trajectories": (parse_int, 1, "number of quantum-jump trajectories"),
        "method": (_choice("auto", "schrodinger", "mcwf", "lindblad"), "auto", "solver"),
        "dt": (_auto_or(parse_float), None, "integration step"),
        "batch_size": (parse_int, 64, "trajectories propagated together"),
        "workers": (parse_int, 1, "worker processes for trajectory batches"),
    },
    "output": {
        "dir": (str.strip, "out", "output directory"),
    },
}


@dataclass
class ScenarioConfig:
    model: model.ModelParams
    scenario: str
    case: str | None = None
    init: str = "ground"
    tau: float | None = None
    K: int | None = None
    k_max: int = 100
    hamiltonian: str | None = None
    n_c: int | None = None
    n_side: int = 2
    initial_photons: int = 0
    observe_frame: str = "rotating"
    lossless: bool = False
    monitor_cutoff: bool = True
    seed: int = 0
    trajectories: int = 1
    method: str = "auto"
    dt: float | None = None
    batch_size: int = 64
    workers: int = 1
    out_dir: str = "out"
    warnings: list = field(default_factory=list)


def _read(text: str) -> dict[str, dict[str, tuple[str, int]]]:
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[([A-Za-z_]+)\]", line)
        if m:
            current = m.group(1)
            if current not in SCHEMA:
                raise ConfigError(f"unknown section [{current}]", line=lineno)
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}", line=lineno)
        if current is None:
            raise ConfigError("key outside any [section]", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA[current]:
            raise ConfigError(f"unknown key in [{current}]", key=key, line=lineno)
        if key in sections[current]:
            raise ConfigError("duplicate key", key=key, line=lineno)
        sections[current][key] = (value, lineno)
    return sections


def parse_config(text: str, scenario: str | None = None) -> ScenarioConfig:
    """Parse and validate a config; ``scenario`` supplies the scenario when the
    text does not name one (the subcommand does this)."""
    sections = _read(text)
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for sec, entries in sections.items():
        for key, (raw, lineno) in entries.items():
            parser = SCHEMA[sec][key][0]
            if raw == "" and key != "dir":
                raise ConfigError("empty value", key=key, line=lineno)
            try:
                values[key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(str(exc), key=key, line=lineno) from None
            lines[key] = lineno

    warnings: list[str] = []
    chosen = values.get("scenario", scenario)
    if chosen is None:
        raise ConfigError("no scenario given", key="scenario")
    if scenario is not None and "scenario" in values and values["scenario"] != scenario:
        warnings.append(f"scenario {values['scenario']!r} from the config replaced by {scenario!r}")
        chosen = scenario

    model_keys = [k for k in SCHEMA["model"] if k != "preset"]
    kw = {k: values[k] for k in model_keys if k in values}
    if chosen == "fig2":
        case = values.get("case")
        if case is None:
            raise ConfigError("fig2 needs a case (a, b, c or d)", key="case", line=lines.get("case"))
        N, kappa = FIG2_CASES[case]
        for key, pinned in (("N1", N), ("N2", N), ("kappa_c", kappa)):
            if key in kw and kw[key] != pinned:
                warnings.append(f"fig2 case {case} pins {key}={pinned}; overriding {kw[key]!r} from line {lines[key]}")
            kw[key] = pinned
    preset = values.get("preset")
    try:
        p = model.PRESETS[preset](**kw) if preset else model.ModelParams(**kw)
    except ValueError as exc:
        key = str(exc).split()[0]
        raise ConfigError(str(exc), key=key, line=lines.get(key)) from None
    if values.get("lossless"):
        p = p.replace(kappa_c=0.0, kappa_f=0.0, gamma_e=0.0)

    for key in ("trajectories", "batch_size", "workers", "k_max", "n_side"):
        if key in values and values[key] < 1:
            raise ConfigError("must be >= 1", key=key, line=lines[key])
    for key in ("n_c",):
        if values.get(key) is not None and values[key] < 1:
            raise ConfigError("must be >= 1", key=key, line=lines[key])
    if values.get("tau") is not None and values["tau"] <= 0:
        raise ConfigError("must be > 0", key="tau", line=lines["tau"])
    if values.get("dt") is not None and values["dt"] <= 0:
        raise ConfigError("must be > 0", key="dt", line=lines["dt"])

    cfg = ScenarioConfig(model=p, scenario=chosen, warnings=warnings)
    for key in ("case", "init", "tau", "K", "k_max", "hamiltonian", "n_c", "n_side", "initial_photons",
                "observe_frame", "lossless", "monitor_cutoff", "seed", "trajectories", "method", "dt",
                "batch_size", "workers"):
        if key in values:
            setattr(cfg, key, values[key])
    if "dir" in values:
        cfg.out_dir = values["dir"]
    for w in warnings:
        log.warning(w)
    return cfg


# --------------------------------------------------------------------------- running

@dataclass
class RunResult:
    summary: dict
    series: analysis.ObservableSeries | None = None
    csv_path: Path | None = None
    json_path: Path | None = None
    ensemble: dissipative.EnsembleResult | None = None


def _levels(cfg: ScenarioConfig) -> tuple[tuple[int, int], str]:
    p = cfg.model
    if cfg.init == "ground":
        return (0, 0), "psi_a"
    return (0, p.N2), "psi_s"


def _timing(cfg: ScenarioConfig) -> propagator.ProtocolTiming:
    p = cfg.model
    if cfg.tau is not None:
        lt = model.derived_constants(p).lam * cfg.tau
        K = cfg.tau * abs(p.delta) / (2 * math.pi)
        return propagator.ProtocolTiming(
            cfg.tau, int(round(K)), lt, propagator.phase_mismatch(lt), propagator.phase_sign(lt), 4 * lt
        )
    if cfg.K is not None:
        return propagator.timing_for(p, cfg.K)
    return propagator.choose_protocol_time(p, k_max=cfg.k_max)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _base_summary(cfg: ScenarioConfig) -> dict:
    p = cfg.model
    out = {"scenario": cfg.scenario, "case": cfg.case, "model": p.to_dict(), "warnings": list(cfg.warnings)}
    try:
        out["derived_constants"] = model.derived_constants(p).to_dict()
    except ZeroDivisionError as exc:
        out["derived_constants"] = {"error": str(exc)}
    try:
        out["regime_report"] = model.regime_report(p).to_dict()
    except ZeroDivisionError as exc:
        out["regime_report"] = {"error": str(exc)}
    return out


class _Simulation:
    """Layout, Hamiltonian, frame and collapse channels of one open-system model."""

    def __init__(self, cfg: ScenarioConfig, levels: tuple[int, int], which: str):
        p = cfg.model
        self.which = which
        n_c = cfg.n_c
        if which in ("normal", "effective") and n_c is None:
            n_c = max(p.n_max, propagator.protocol_cutoff(p, levels, damping=p.kappa_c))
        self.n_c = n_c
        if which == "raman":
            self.layout = model.raman_layout(p.N1, p.N2, p.n_max, fiber=True)
            self.H = model.raman_source(p, self.layout) + TDOperator.static(model.h_cavity_fiber(p, self.layout))
            self.frame = model.drive_frame(p, self.layout)
            emb = lambda m: model._mode(self.layout, m)  # noqa: E731
            chans = [(emb("a1"), p.kappa_c, "a1"), (emb("a2"), p.kappa_c, "a2"), (emb("b"), p.kappa_f, "b")]
        elif which == "normal":
            self.layout = model.normal_layout(p.N1, p.N2, n_c, cfg.n_side)
            self.H = model.prime_source(p, self.layout)
            self.frame = model.drive_frame(p, self.layout)
            chans = [
                (model.cavity_mode_in_normal_frame(m, p, self.layout), rate, m)
                for m, rate in (("a1", p.kappa_c), ("a2", p.kappa_c), ("b", p.kappa_f))
            ]
        elif which == "effective":
            self.layout = model.effective_layout(p.N1, p.N2, n_c)
            self.H = model.effective_source(p, self.layout)
            self.frame = None
            chans = [(model._mode(self.layout, "c"), p.kappa_c, "c")]
        else:
            raise ValueError(f"unknown hamiltonian {which!r}")
        self.collapses = dissipative.CollapseSet(chans)
        first_mode = self.layout.bosons()[0].label
        self.psi0 = basis_state(self.layout, cloud1=levels[0], cloud2=levels[1], **{first_mode: cfg.initial_photons})


def _observer(sim: _Simulation, cfg: ScenarioConfig, kind: str, target: np.ndarray):
    p = cfg.model
    atoms = ["cloud1", "cloud2"]

    def atomic(t, rho):
        if cfg.observe_frame == "rotating" and sim.frame is not None:
            U = sim.frame.local_unitary(atoms, t)
            rho = U.conj().T @ rho @ U
        return rho

    signed = [analysis.target_state(kind, p.N1, p.N2, s) for s in (1, -1)]

    def row(t, rho):
        # the two trailing columns are kept internally, the CSV gets the first five
        rho = atomic(t, rho)
        extra = [analysis.fidelity(rho, tg) for tg in signed]
        return np.concatenate([analysis.observables(rho, kind, p.N1, p.N2, target), extra])

    def one(t, psi):
        batch = psi.reshape(psi.shape[0], -1)
        return [row(t, analysis.partial_trace(batch[:, b], sim.layout, atoms)) for b in range(batch.shape[1])]

    def dm(t, rho_full):
        return row(t, analysis.partial_trace(rho_full, sim.layout, atoms))

    return one, dm


def _lab_fidelity(sim, state_or_rho, target) -> float:
    rho = analysis.partial_trace(state_or_rho, sim.layout, ["cloud1", "cloud2"])
    return analysis.fidelity(rho, target)


def _simulate(cfg: ScenarioConfig, which: str, checkpoints_K=()) -> RunResult:
    p = cfg.model
    levels, kind = _levels(cfg)
    timing = _timing(cfg)
    sign = propagator.phase_sign(timing.gate_phase)
    target = analysis.target_state(kind, p.N1, p.N2, sign)
    sim = _Simulation(cfg, levels, which)
    extra = sorted({2 * K * math.pi / abs(p.delta) for K in checkpoints_K})
    t1 = max([timing.tau] + extra)
    extra = [t for t in extra + [timing.tau] if t < t1]
    csv_times = np.linspace(0.0, t1, 200)
    one, dm = _observer(sim, cfg, kind, target)
    lossy = bool(sim.collapses.active())
    method = cfg.method
    if method == "auto":
        method = "mcwf" if lossy else "schrodinger"
    common = dict(layout=sim.layout, frame=sim.frame, extra_samples=extra, check_cutoff=cfg.monitor_cutoff)
    summary = _base_summary(cfg)
    summary.update(
        hamiltonian=which, method=method, timing=timing.to_dict(), layout={f.label: f.dim for f in sim.layout.factors},
        target={"kind": kind, "phase_sign": sign}, observe_frame=cfg.observe_frame,
    )
    if method == "schrodinger":
        if lossy:
            summary["warnings"].append("schrodinger method ignores the decay channels")
        r = propagator.evolve_schrodinger(sim.H, sim.psi0, 0.0, t1, cfg.dt, observer=lambda t, s: one(t, s)[0], **common)
        times, values, stderr = r.times, np.array(r.samples), None
        summary.update(dt=r.dt, n_steps=r.n_steps, norm_drift=r.norm_drift, cutoff_monitor=r.top_occupation)
        final_lab = {"state": r.state}
    elif method == "lindblad":
        rho0 = np.outer(sim.psi0, sim.psi0.conj())
        r = dissipative.lindblad_evolve(rho0, sim.H, sim.collapses, 0.0, t1, cfg.dt, observer=dm, **common)
        times, values, stderr = r.times, np.array(r.samples), None
        summary.update(dt=r.dt, n_steps=r.n_steps, trace_drift=r.trace_drift, min_eigenvalue=r.min_eigenvalue,
                       cutoff_monitor=r.top_occupation)
        final_lab = {"rho": r.rho}
    else:
        ens = dissipative.mcwf_ensemble(
            cfg.trajectories, cfg.seed, sim.psi0, sim.H, sim.collapses, 0.0, t1, cfg.dt, observer=one,
            batch_size=cfg.batch_size, workers=cfg.workers, **common,
        )
        times, values, stderr = ens.times, ens.mean, ens.stderr
        tops: dict = {}
        for tr in ens.trajectories:
            for k, v in tr.top_occupation.items():
                tops[k] = max(tops.get(k, 0.0), v)
        summary.update(
            seed=cfg.seed, trajectories=cfg.trajectories, jump_counts=ens.jump_counts, cutoff_monitor=tops,
            trajectory_seeds=[[cfg.seed, tr.index] for tr in ens.trajectories],
        )
        final_lab = {"ensemble": ens}
    # each checkpoint is judged against the branch phases its own gate phase produces
    lam = model.derived_constants(p).lam
    at = {}
    for t in sorted(set(extra) | {timing.tau}):
        idx = int(np.argmin(np.abs(times - t)))
        K = int(round(t * abs(p.delta) / (2 * math.pi)))
        gate = 4 * lam * times[idx]
        sgn = propagator.phase_sign(gate)
        at[f"K={K}"] = {
            "t": float(times[idx]), "gate_phase": float(gate), "phase_sign": sgn,
            "fidelity": float(values[idx, 5 if sgn == 1 else 6]),
        }
    summary["fidelity_at"] = at
    summary["gate_phase_mismatch"] = propagator.phase_mismatch(timing.gate_phase)
    tau_idx = int(np.argmin(np.abs(times - timing.tau)))
    summary["final_fidelity"] = float(values[tau_idx, 4])
    if "state" in final_lab and t1 == timing.tau:
        summary["final_fidelity_lab"] = _lab_fidelity(sim, final_lab["state"], target)
    if "ensemble" in final_lab and t1 == timing.tau:
        fids = [_lab_fidelity(sim, tr.final_state, target) for tr in final_lab["ensemble"].trajectories]
        summary["final_fidelity_lab"] = float(np.mean(fids))
    if "rho" in final_lab and t1 == timing.tau:
        summary["final_fidelity_lab"] = _lab_fidelity(sim, final_lab["rho"], target)
    summary["cutoffs"] = {"n_c": sim.n_c, "n_side": cfg.n_side, "n_max": p.n_max}
    keep = np.isin(times, csv_times)
    series = analysis.ObservableSeries(
        times[keep], values[keep, :5], None if stderr is None else stderr[keep, :5],
        meta={"all_times": times, "all_values": values},
    )
    return RunResult(summary, series, ensemble=final_lab.get("ensemble"))


def _ideal(cfg: ScenarioConfig) -> RunResult:
    p = cfg.model
    levels, kind = _levels(cfg)
    timing = _timing(cfg)
    lam = model.derived_constants(p).lam
    target = analysis.target_state(kind, p.N1, p.N2, timing.phase_sign)
    times = np.linspace(0.0, timing.tau, 200)
    rows = []
    for t in times:
        psi = propagator.protocol_final_state(levels, lam * t, p.N1, p.N2)
        rows.append(analysis.observables(np.outer(psi, psi.conj()), kind, p.N1, p.N2, target))
    values = np.array(rows)
    summary = _base_summary(cfg)
    summary.update(timing=timing.to_dict(), target={"kind": kind, "phase_sign": timing.phase_sign},
                   final_fidelity=float(values[-1, -1]))
    return RunResult(summary, analysis.ObservableSeries(times, values))


def _noon(cfg: ScenarioConfig) -> RunResult:
    p = cfg.model
    psi_s = propagator.protocol_final_state((0, p.N2), math.pi / 2, p.N1, p.N2)
    cut = max(p.N1, p.N2)
    layout = HilbertLayout(
        (model.dicke("cloud1", p.N1), model.dicke("cloud2", p.N2), model.boson("a1", cut), model.boson("a2", cut))
    )
    vac = np.zeros((cut + 1) ** 2)
    vac[0] = 1.0
    out = propagator.noon_map(np.kron(psi_s, vac), layout)
    target = (
        np.exp(-1j * math.pi / 4) * basis_state(layout, cloud1=p.N1, cloud2=p.N2, a1=p.N1)
        + np.exp(1j * math.pi / 4) * basis_state(layout, cloud1=p.N1, cloud2=p.N2, a2=p.N2)
    ) / math.sqrt(2)
    summary = _base_summary(cfg)
    summary.update(noon_fidelity=float(abs(np.vdot(target, out)) ** 2),
                   involution_error=float(np.abs(propagator.noon_map(out, layout) - np.kron(psi_s, vac)).max()))
    return RunResult(summary)


def gauge_check(p: model.ModelParams, seed: int = 0, scale: float = 1.0) -> dict:
    """Random wave vectors and positions; spectra and cavity-phase spread before and after."""
    rng = np.random.default_rng(seed)
    N1, N2 = min(p.N1, 3), min(p.N2, 3)
    layout = model.gauge_layout(N1, N2, 1)
    kv = {k: rng.normal(size=3) * scale for k in ("k1", "k2", "k3")}
    pos = {"cloud1": rng.normal(size=(N1, 3)), "cloud2": rng.normal(size=(N2, 3))}
    t = float(rng.uniform(0, 2 * math.pi / abs(p.delta)))
    g = model.gauge_reduce(p, kv, pos, layout, t=t)
    ev_b = np.linalg.eigvalsh(g.H_before.toarray())
    ev_a = np.linalg.eigvalsh(g.H_after.toarray())
    conj = g.U_gauge @ g.H_before @ g.U_gauge.conj().T
    matched = dict(kv, k3=kv["k1"] - kv["k2"])
    gm = model.gauge_reduce(p, matched, pos, layout, t=t)
    coeffs = np.array(list(gm.cavity_phases.values()))
    phases = np.angle(coeffs / coeffs[0])  # relative to the first atom, free of the +-pi wrap
    return {
        "N1": N1, "N2": N2, "seed": seed,
        "spectrum_difference": float(np.abs(ev_b - ev_a).max()),
        "conjugation_error": float(abs(conj - g.H_after).max()) if (conj - g.H_after).nnz else 0.0,
        "matched_phase_spread": float(np.abs(phases).max()),
    }


def run_scenario(cfg: ScenarioConfig, write: bool = True) -> RunResult:
    """Run the configured scenario and (by default) write its result files."""
    s = cfg.scenario
    if s == "regime":
        res = RunResult(_base_summary(cfg))
    elif s == "ideal":
        res = _ideal(cfg)
    elif s == "noon":
        res = _noon(cfg)
    elif s == "gauge":
        res = RunResult(_base_summary(cfg) | {"gauge": gauge_check(cfg.model, cfg.seed)})
    elif s == "effective":
        res = _simulate(cfg, "effective")
    elif s == "full_open":
        res = _simulate(cfg, cfg.hamiltonian or "raman")
    elif s == "fig2":
        res = _simulate(cfg, cfg.hamiltonian or "effective", checkpoints_K=(1, 2))
    else:  # pragma: no cover - parse_config guards the value
        raise ValueError(f"unknown scenario {s!r}")
    if write:
        write_outputs(res, cfg)
    return res


def write_outputs(res: RunResult, cfg: ScenarioConfig) -> None:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if res.series is not None:
        res.csv_path = out / "series.csv"
        with open(res.csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for row in res.series.rows():
                w.writerow([repr(x) for x in row])
    if res.ensemble is not None:
        res.ensemble.write_jump_log(out / "jumps.csv")
    res.json_path = out / "summary.json"
    with open(res.json_path, "w") as fh:
        json.dump(_jsonable(res.summary), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fiberqed", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="config file (key = value with [sections])")
        sp.add_argument("--seed", type=_seed, help="base seed, overrides [run] seed")
        sp.add_argument("--trajectories", type=int, help="trajectory count, overrides [run] trajectories")
        sp.add_argument("--out", type=Path, help="output directory, overrides [output] dir")
        if name == "fig2":
            sp.add_argument("--case", choices=sorted(FIG2_CASES), required=True)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    text = args.config.read_text() if args.config else ""
    if args.command == "fig2":
        text = f"{text}\n" if "[scenario]" in text else f"{text}\n[scenario]\n"
        text = _set_key(text, "scenario", "case", args.case)
        if "preset" not in text:
            text = _set_key(text, "model", "preset", "paper-sec3")
    try:
        cfg = parse_config(text, scenario=SUBCOMMANDS[args.command] or _scenario_of(text) or "full_open")
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trajectories is not None:
        if args.trajectories < 1:
            print("config: --trajectories must be >= 1", file=sys.stderr)
            return 1
        cfg.trajectories = args.trajectories
    if args.out is not None:
        cfg.out_dir = str(args.out)
    try:
        res = run_scenario(cfg)
    except ToleranceError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (ZeroDivisionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {res.json_path}" + (f" and {res.csv_path}" if res.csv_path else ""))
    return 0


def _scenario_of(text: str) -> str | None:
    m = re.search(r"^\s*scenario\s*=\s*(\S+)", text, flags=re.M)
    return m.group(1) if m else None


def _set_key(text: str, section: str, key: str, value: str) -> str:
    """Insert or replace ``key`` under ``[section]`` (used for subcommand flags)."""
    lines = text.splitlines()
    out, current, done = [], None, False
    for line in lines:
        stripped = line.split("#", 1)[0].strip()
        m = re.fullmatch(r"\[([A-Za-z_]+)\]", stripped)
        if m:
            if current == section and not done:
                out.append(f"{key} = {value}")
                done = True
            current = m.group(1)
        elif current == section and re.match(rf"{re.escape(key)}\s*=", stripped):
            out.append(f"{key} = {value}")
            done = True
            continue
        out.append(line)
    if not done:
        if current != section:
            out.append(f"[{section}]")
        out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"
