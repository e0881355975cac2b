"""Physical parameters and Hamiltonian builders for two fiber-coupled cavities.

All quantities are in units of ``|g0|`` (frequencies) and ``1/|g0|`` (time).
Each Hamiltonian is available two ways: ``*_source(p, layout)`` returns a
:class:`~fiberqed.hilbert.TDOperator` (used by the integrators) and
``h_*(t, p, layout)`` evaluates it at one time as a sparse matrix.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import scipy.sparse as sparse

from .hilbert import (
    HilbertLayout,
    TDOperator,
    StaticFrame,
    boson,
    boson_ops,
    canonical,
    dicke,
    dicke_ops,
    embed,
    three_level,
    three_level_ops,
)

CLOUDS = ("cloud1", "cloud2")


class LayoutError(ValueError):
    """The layout handed to a builder does not have the factors it needs."""


@dataclass(frozen=True)
class ModelParams:
    g0: complex = 1.0
    Omega0: complex = 1.0
    Omega1: complex = 10.0
    Omega2: complex = 10.0
    Omega3: complex = 0.0
    Delta0: float = 100.0
    Delta1: float = -100.0
    Delta3: float = 200.0
    delta: float = 0.01
    nu: float = 0.1
    phi: float = 0.0
    kappa_c: float = 0.0
    kappa_f: float = 0.0
    gamma_e: float = 0.0
    N1: int = 2
    N2: int = 2
    n_max: int = 8

    def __post_init__(self):
        for name in ("g0", "Omega0", "Omega1", "Omega2", "Omega3"):
            object.__setattr__(self, name, complex(getattr(self, name)))
        for name in ("Delta0", "Delta1", "Delta3", "delta", "nu", "phi", "kappa_c", "kappa_f", "gamma_e"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("N1", "N2", "n_max"):
            value = getattr(self, name)
            if int(value) != value:
                raise ValueError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        for name in ("kappa_c", "kappa_f", "gamma_e"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("N1", "N2"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1 (empty cloud), got {getattr(self, name)}")
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max}")

    @property
    def Delta2(self) -> float:
        """Cavity detuning, tied to the others by ``Delta2 = Delta0 - delta``."""
        return self.Delta0 - self.delta

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = [v.real, v.imag] if isinstance(v, complex) else v
        out["Delta2"] = self.Delta2
        return out


def reference_params(**overrides) -> ModelParams:
    """The reference parameter set in units of |g0|; Omega3 and Delta3 are not part of it."""
    base = dict(
        g0=1.0, Omega0=1.0, Omega1=10.0, Omega2=10.0, Omega3=0.0,
        Delta0=100.0, Delta1=-100.0, Delta3=200.0, delta=0.01, nu=0.1,
    )
    base.update(overrides)
    return ModelParams(**base)


PRESETS = {
    "paper-sec3": reference_params,
    # |Omega0| scaled by 1/sqrt2 so that the S_x = S+ + S- dynamics lands the
    # pi/2 gate phase at delta*tau = 2*pi.
    "calibrated": lambda **kw: reference_params(**{"Omega0": 1 / math.sqrt(2), **kw}),
}


@dataclass(frozen=True)
class DerivedConstants:
    beta: complex
    Lambda: complex
    Theta: float
    theta0: float
    lam: float
    Gamma_c: float
    Gamma_e: float
    Gamma_f: float

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("beta", "Lambda"):
            d[k] = [d[k].real, d[k].imag]
        d["lambda"] = d.pop("lam")
        return d


def _nonzero(name: str, value: float):
    if value == 0:
        raise ZeroDivisionError(f"derived_constants: {name} = 0 (division by zero)")


def derived_constants(p: ModelParams) -> DerivedConstants:
    _nonzero("Delta0", p.Delta0)
    _nonzero("Delta1", p.Delta1)
    _nonzero("delta", p.delta)
    beta = -p.Omega1 * p.Omega2.conjugate() / p.Delta1
    Lam = -p.Omega0 * p.g0.conjugate() / p.Delta0
    theta = math.sqrt(2) * Lam / 2
    Theta = abs(theta)
    theta0 = cmath.phase(theta) if Theta else 0.0
    lam = -Theta**2 / (4 * p.delta)
    og = abs(p.Omega0 * p.g0) ** 2
    Gamma_c = p.kappa_c * og / (8 * p.delta**2 * p.Delta0**2)
    Gamma_e = p.gamma_e * abs(p.Omega1) ** 2 / p.Delta1**2
    if p.nu == 0:
        Gamma_f = math.inf if p.kappa_f and og else 0.0
    else:
        Gamma_f = p.kappa_f * og / (p.Delta0 * p.nu) ** 2
    return DerivedConstants(beta, Lam, Theta, theta0, lam, Gamma_c, Gamma_e, Gamma_f)


@dataclass(frozen=True)
class RegimeReport:
    ratios: dict
    flags: dict
    strong_driving_ratio: float
    mode_separation_ratio: float
    stark_shift_level0: float
    stark_shift_level1: float
    stark_differential: float
    thresholds: dict

    @property
    def all_pass(self) -> bool:
        return all(self.flags.values())

    def to_dict(self) -> dict:
        return asdict(self) | {"all_pass": self.all_pass}


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return math.inf if num else math.nan
    return num / den


def regime_report(p: ModelParams, much_greater: float = 10.0, similar: float = 2.0) -> RegimeReport:
    """Check the validity conditions of the effective model.

    ``much_greater`` is the ratio that counts as "much greater than";
    ``similar`` is the largest factor two quantities may differ by and still
    count as "of the same order".  Never raises on failed conditions.
    """
    a = abs
    D0, D1, D2, D3 = p.Delta0, p.Delta1, p.Delta2, p.Delta3
    detunings = {
        "|Delta0|": a(D0), "|Delta1|": a(D1), "|Delta2|": a(D2), "|Delta3|": a(D3),
        "|Delta0-Delta1|": a(D0 - D1), "|Delta1-Delta2|": a(D1 - D2), "|Delta2-Delta3|": a(D2 - D3),
    }
    couplings = {
        "|Omega0|": a(p.Omega0), "|Omega1|": a(p.Omega1), "|Omega2|": a(p.Omega2),
        "|g0|": a(p.g0), "|delta|": a(p.delta),
    }
    ratios: dict[str, float] = {}
    for dn, dv in detunings.items():
        for cn, cv in couplings.items():
            ratios[f"{dn}/{cn}"] = _ratio(dv, cv)
    ratios["cond_i"] = _ratio(min(detunings.values()), max(couplings.values()))
    ratios["|Omega2|/|g0|"] = _ratio(a(p.Omega2), a(p.g0))
    ratios["|Omega3|/|g0|"] = _ratio(a(p.Omega3), a(p.g0))
    ratios["cond_ii"] = min(ratios["|Omega2|/|g0|"], ratios["|Omega3|/|g0|"])
    # literal reading of condition (iii): magnitudes of the paired shifts agree
    s0 = a(p.Omega0) ** 2 / a(D0)
    s1 = a(p.Omega1) ** 2 / a(D1)
    s2 = a(p.Omega2) ** 2 / a(D1)
    s3 = a(p.Omega3) ** 2 / a(D3) if D3 else math.inf
    ratios["cond_iii_level0"] = _ratio(s0, s1)
    ratios["cond_iii_level1"] = _ratio(s3, s2)

    level0 = a(p.Omega0) ** 2 / D0 + a(p.Omega1) ** 2 / D1
    level1 = a(p.Omega2) ** 2 / D1 + (a(p.Omega3) ** 2 / D3 if D3 else 0.0)
    diff = level0 - level1

    d = derived_constants(p)
    strong = _ratio(a(d.beta), max(a(p.delta), a(d.Lambda), a(p.nu)))
    separation = _ratio(a(p.nu), max(a(p.delta), a(d.Lambda)))

    def within(r):
        return 1 / similar <= r <= similar

    flags = {
        "cond_i": ratios["cond_i"] >= much_greater,
        "cond_ii": ratios["cond_ii"] >= much_greater,
        "cond_iii_literal": within(ratios["cond_iii_level0"]) and within(ratios["cond_iii_level1"]),
        "cond_iii_stark": a(diff) * much_greater <= a(p.delta),
        "strong_driving": strong >= much_greater,
        "mode_separation": separation >= much_greater,
    }
    return RegimeReport(
        ratios=ratios, flags=flags, strong_driving_ratio=strong, mode_separation_ratio=separation,
        stark_shift_level0=level0, stark_shift_level1=level1, stark_differential=diff,
        thresholds={"much_greater": much_greater, "similar": similar, "stark": "|diff| * much_greater <= |delta|"},
    )


# --------------------------------------------------------------------------- layouts

def raman_layout(N1: int, N2: int, n_max: int, fiber: bool = True) -> HilbertLayout:
    factors = [dicke("cloud1", N1), dicke("cloud2", N2), boson("a1", n_max), boson("a2", n_max)]
    if fiber:
        factors.append(boson("b", n_max))
    return HilbertLayout(tuple(factors))


def normal_layout(N1: int, N2: int, n_c: int, n_c1: int | None = None, n_c2: int | None = None) -> HilbertLayout:
    n_c1 = n_c if n_c1 is None else n_c1
    n_c2 = n_c1 if n_c2 is None else n_c2
    return HilbertLayout((dicke("cloud1", N1), dicke("cloud2", N2), boson("c", n_c), boson("c1", n_c1), boson("c2", n_c2)))


def effective_layout(N1: int, N2: int, n_c: int) -> HilbertLayout:
    return HilbertLayout((dicke("cloud1", N1), dicke("cloud2", N2), boson("c", n_c)))


def atom_labels(cloud: int, n_atoms: int) -> list[str]:
    return [f"cloud{cloud}.{n}" for n in range(1, n_atoms + 1)]


def full_layout(N1: int, N2: int, n_max: int) -> HilbertLayout:
    if N1 > 2 or N2 > 2:
        raise LayoutError("h_full supports at most 2 atoms per cloud")
    atoms = [three_level(l) for l in atom_labels(1, N1) + atom_labels(2, N2)]
    return HilbertLayout(tuple(atoms) + (boson("a1", n_max), boson("a2", n_max)))


def gauge_layout(N1: int, N2: int, n_max: int) -> HilbertLayout:
    """Individual two-level atoms (``dicke(1)`` factors) plus both cavity modes."""
    atoms = [dicke(l, 1) for l in atom_labels(1, N1) + atom_labels(2, N2)]
    return HilbertLayout(tuple(atoms) + (boson("a1", n_max), boson("a2", n_max)))


def _require(layout: HilbertLayout, labels, kinds, who: str):
    for label, kind in zip(labels, kinds):
        if label not in layout:
            raise LayoutError(f"{who}: layout lacks factor {label!r} (has {layout.labels})")
        if layout.factor(label).kind != kind:
            raise LayoutError(f"{who}: factor {label!r} must be {kind}, is {layout.factor(label).kind}")


def _mode(layout: HilbertLayout, label: str, which: str = "a"):
    return embed(boson_ops(layout.factor(label).size)[which], label, layout)


def _spin(layout: HilbertLayout, label: str, which: str):
    return embed(dicke_ops(layout.factor(label).size)[which], label, layout)


# --------------------------------------------------------------------------- Hamiltonians

def drive_operator(p: ModelParams, layout: HilbertLayout) -> sparse.csr_matrix:
    """Classical Raman drive ``sum_j beta S+_j + h.c.``."""
    beta = derived_constants(p).beta
    out = sparse.csr_matrix((layout.total_dim, layout.total_dim), dtype=complex)
    for cloud in CLOUDS:
        sp = _spin(layout, cloud, "S_plus")
        out = out + beta * sp + np.conj(beta) * sp.conj().T
    return canonical(out)


def drive_frame(p: ModelParams, layout: HilbertLayout) -> StaticFrame:
    """Interaction picture that removes the classical Raman drive exactly."""
    beta = derived_constants(p).beta
    local = {}
    for cloud in CLOUDS:
        ops = dicke_ops(layout.factor(cloud).size)
        local[cloud] = (beta * ops["S_plus"] + np.conj(beta) * ops["S_minus"]).toarray()
    return StaticFrame(layout, local)


def raman_source(p: ModelParams, layout: HilbertLayout, include_drive: bool = True) -> TDOperator:
    _require(layout, ("cloud1", "cloud2", "a1", "a2"), ("dicke",) * 2 + ("boson",) * 2, "h_raman")
    d = derived_constants(p)
    dim = layout.total_dim
    terms = []
    for cloud, mode in zip(CLOUDS, ("a1", "a2")):
        sp = _spin(layout, cloud, "S_plus")
        terms.append((p.delta, d.Lambda * (_mode(layout, mode, "a_dag") @ sp)))
    cav = TDOperator(dim, terms).hermitian_part_plus_hc()
    if include_drive:
        cav = cav + TDOperator.static(drive_operator(p, layout))
    return cav


def h_raman(t: float, p: ModelParams, layout: HilbertLayout) -> sparse.csr_matrix:
    return raman_source(p, layout).at(t)


def h_cavity_fiber(p: ModelParams, layout: HilbertLayout) -> sparse.csr_matrix:
    _require(layout, ("a1", "a2"), ("boson",) * 2, "h_cavity_fiber")
    if "b" not in layout:
        raise LayoutError("h_cavity_fiber: layout lacks the fiber mode 'b'")
    b = _mode(layout, "b")
    hop = p.nu * b @ (_mode(layout, "a1", "a_dag") + cmath.exp(1j * p.phi) * _mode(layout, "a2", "a_dag"))
    return canonical(hop + hop.conj().T)


def normal_modes(phi: float) -> np.ndarray:
    """Matrix ``T`` with ``(c, c1, c2)^T = T (a1, a2, b)^T``.

    ``c`` is the fiber-dark combination; ``c1, c2`` are split by ``+-sqrt2 nu``.
    """
    e = cmath.exp(-1j * phi)
    s = 1 / math.sqrt(2)
    return np.array(
        [
            [s, -s * e, 0.0],
            [0.5, 0.5 * e, s],
            [0.5, 0.5 * e, -s],
        ],
        dtype=complex,
    )


def prime_source(p: ModelParams, layout: HilbertLayout, include_drive: bool = True) -> TDOperator:
    """Raman + fiber Hamiltonian in the normal-mode interaction picture."""
    _require(layout, ("cloud1", "cloud2", "c", "c1", "c2"), ("dicke",) * 2 + ("boson",) * 3, "h_prime")
    d = derived_constants(p)
    w = math.sqrt(2) * p.nu
    c, c1, c2 = (_mode(layout, m) for m in ("c", "c1", "c2"))
    terms = []
    for cloud, sign, phase in (("cloud1", 1.0, 1.0), ("cloud2", -1.0, cmath.exp(1j * p.phi))):
        sm = _spin(layout, cloud, "S_minus")
        k = np.conj(d.Lambda) / 2 * phase
        terms += [
            (-w - p.delta, k * (c1 @ sm)),
            (w - p.delta, k * (c2 @ sm)),
            (-p.delta, k * sign * math.sqrt(2) * (c @ sm)),
        ]
    out = TDOperator(layout.total_dim, terms).hermitian_part_plus_hc()
    if include_drive:
        out = out + TDOperator.static(drive_operator(p, layout))
    return out


def h_prime(t: float, p: ModelParams, layout: HilbertLayout) -> sparse.csr_matrix:
    return prime_source(p, layout).at(t)


def collective_x_difference(layout: HilbertLayout) -> sparse.csr_matrix:
    """``S^1_x - S^2_x`` on the layout."""
    return canonical(_spin(layout, "cloud1", "S_x") - _spin(layout, "cloud2", "S_x"))


def effective_source(p: ModelParams, layout: HilbertLayout) -> TDOperator:
    _require(layout, ("cloud1", "cloud2", "c"), ("dicke", "dicke", "boson"), "h_eff")
    d = derived_constants(p)
    x = collective_x_difference(layout)
    up = d.Theta / 2 * cmath.exp(1j * d.theta0) * (_mode(layout, "c", "a_dag") @ x)
    return TDOperator(layout.total_dim, [(p.delta, up)]).hermitian_part_plus_hc()


def h_eff(t: float, p: ModelParams, layout: HilbertLayout) -> sparse.csr_matrix:
    return effective_source(p, layout).at(t)


def full_source(p: ModelParams, layout: HilbertLayout) -> TDOperator:
    """Three-level atom-field Hamiltonian before adiabatic elimination."""
    _require(layout, ("a1", "a2"), ("boson", "boson"), "h_full")
    tl = three_level_ops()
    terms = []
    for f in layout.factors:
        if f.kind == "boson":
            continue
        if f.kind != "three_level":
            raise LayoutError(f"h_full: factor {f.label!r} must be three_level, is {f.kind}")
        cloud = f.label.split(".")[0]
        if cloud not in CLOUDS:
            raise LayoutError(f"h_full: atom label {f.label!r} must start with cloud1./cloud2.")
        mode = "a1" if cloud == "cloud1" else "a2"
        e0 = embed(tl["e0"], f.label, layout)
        e1 = embed(tl["e1"], f.label, layout)
        terms += [
            (p.Delta0, p.Omega0 * e0),
            (p.Delta1, p.Omega1 * e0),
            (p.Delta1, p.Omega2 * e1),
            (p.Delta3, p.Omega3 * e1),
            (p.Delta2, p.g0 * (_mode(layout, mode) @ e1)),
        ]
    return TDOperator(layout.total_dim, terms).hermitian_part_plus_hc()


def h_full(t: float, p: ModelParams, layout: HilbertLayout) -> sparse.csr_matrix:
    return full_source(p, layout).at(t)


# --------------------------------------------------------------------------- gauge

@dataclass(frozen=True)
class GaugeResult:
    H_before: sparse.csr_matrix
    H_after: sparse.csr_matrix
    U_gauge: sparse.csr_matrix
    cavity_phases: dict = field(default_factory=dict)  # atom label -> coefficient of a^dag sigma+


def gauge_reduce(p: ModelParams, kvecs: dict, positions: dict, layout: HilbertLayout, t: float = 0.0) -> GaugeResult:
    """Spatial laser phases on individual atoms and their removal by a local unitary.

    ``kvecs`` holds ``k1, k2, k3``; ``positions`` maps ``"cloud1"`` and
    ``"cloud2"`` to arrays of shape ``(N_j, 3)``.  ``U_gauge`` is the diagonal
    transformation with ``H_after = U H_before U^dagger``.
    """
    k1, k2, k3 = (np.asarray(kvecs[k], dtype=float) for k in ("k1", "k2", "k3"))
    d = derived_constants(p)
    tl_up = sparse.csr_matrix(([1.0 + 0j], ([1], [0])), shape=(2, 2))  # |1><0|
    n_op = sparse.csr_matrix(([-0.5, 0.5], ([0, 1], [0, 1])), shape=(2, 2))  # (|1><1|-|0><0|)/2
    dim = layout.total_dim
    before = sparse.csr_matrix((dim, dim), dtype=complex)
    after = sparse.csr_matrix((dim, dim), dtype=complex)
    gauge_diag = np.zeros(dim)
    phases = {}
    for cloud, mode in zip(CLOUDS, ("a1", "a2")):
        r = np.atleast_2d(np.asarray(positions[cloud], dtype=float))
        labels = [f.label for f in layout.factors if f.label.startswith(cloud + ".")]
        if len(labels) != len(r):
            raise ValueError(f"gauge_reduce: {len(r)} positions for {len(labels)} atoms in {cloud}")
        a_dag = _mode(layout, mode, "a_dag")
        for label, rn in zip(labels, r):
            if layout.factor(label).kind != "dicke" or layout.factor(label).size != 1:
                raise LayoutError(f"gauge_reduce: {label!r} must be a two-level (dicke N=1) factor")
            sp = embed(tl_up, label, layout)
            drive_phase = cmath.exp(1j * float((k1 - k2) @ rn))
            cav_phase = cmath.exp(1j * float(k3 @ rn))
            cav_after = cmath.exp(1j * float((k3 - k1 + k2) @ rn))
            tdep = cmath.exp(1j * p.delta * t)
            before = before + d.beta * drive_phase * sp + d.Lambda * cav_phase * tdep * (a_dag @ sp)
            after = after + d.beta * sp + d.Lambda * cav_after * tdep * (a_dag @ sp)
            gauge_diag = gauge_diag - float((k1 - k2) @ rn) * embed(n_op, label, layout).diagonal().real
            phases[label] = d.Lambda * cav_after
    before = canonical(before + before.conj().T)
    after = canonical(after + after.conj().T)
    U = canonical(sparse.diags(np.exp(1j * gauge_diag)))
    return GaugeResult(before, after, U, phases)



def cavity_mode_in_normal_frame(label: str, p: ModelParams, layout: HilbertLayout) -> TDOperator:
    """``a1``, ``a2`` or ``b`` written in normal modes, in the frame that removes
    ``sqrt2 nu (c1^dag c1 - c2^dag c2)``."""
    _require(layout, ("c", "c1", "c2"), ("boson",) * 3, "cavity_mode_in_normal_frame")
    T = normal_modes(p.phi)
    inv = T.conj().T  # (a1, a2, b)^T = T^dag (c, c1, c2)^T
    row = {"a1": 0, "a2": 1, "b": 2}[label]
    w = math.sqrt(2) * p.nu
    ops = [(0.0, "c"), (-w, "c1"), (w, "c2")]
    terms = [(freq, inv[row, k] * _mode(layout, m)) for k, (freq, m) in enumerate(ops) if abs(inv[row, k]) > 1e-15]
    return TDOperator(layout.total_dim, terms)
