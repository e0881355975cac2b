"""Simulation of one-step multiparticle entanglement between two atomic clouds
held in separate cavities joined by an optical fiber."""

from .hilbert import HilbertLayout, TDOperator, basis_state, boson_ops, dicke_ops, embed, x_basis
from .model import ModelParams, derived_constants, regime_report

__all__ = [
    "HilbertLayout",
    "TDOperator",
    "ModelParams",
    "basis_state",
    "boson_ops",
    "derived_constants",
    "dicke_ops",
    "embed",
    "regime_report",
    "x_basis",
]

__version__ = "0.1.0"
