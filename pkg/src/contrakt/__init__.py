"""Certify contraction of switched dynamical systems and simulate their Caratheodory solutions."""

from ._backend import BACKEND
from .certify import (
    ContractionCertificate, certify_pwl_exact, certify_pwsc, certify_system, certify_tss, certify_virtual,
    jacobian, search_weight,
)
from .errors import (
    CertificationError, ContraktError, ExprError, MeasureError, ModelError, NetworkError, SimulationError,
)
from .measures import MeasureKind, induced_norm, mu, mu_batch, vector_norm
from .model import SwitchedSystemModel, SwitchingSignal, load_system, load_system_file, mode_at
from .network import NetworkModel, certify_sync, load_network, load_network_file, simulate_network, threshold_k
from .simulate import Trajectory, divergence, integrate, simulate_virtual

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ContractionCertificate", "certify_pwl_exact", "certify_pwsc", "certify_system", "certify_tss",
    "certify_virtual", "jacobian", "search_weight", "CertificationError", "ContraktError", "ExprError",
    "MeasureError", "ModelError", "NetworkError", "SimulationError", "MeasureKind", "induced_norm", "mu",
    "mu_batch", "vector_norm", "SwitchedSystemModel", "SwitchingSignal", "load_system", "load_system_file",
    "mode_at", "NetworkModel", "certify_sync", "load_network", "load_network_file", "simulate_network",
    "threshold_k", "Trajectory", "divergence", "integrate", "simulate_virtual",
]
