"""Finite-space laboratory for discounted mean-field team games."""
from .prob import FinitePmf, KernelMatrix, perturb, perturbed_mean_quadrature
from .model import DriftParams, MftgSpec, NoiseArchitecture, build_drift_model
from .reconstruction import reconstruct_xi, verify_xi
from .space import LiftedStateSpace
from .policies import Level0Policy, TeamPolicy
from .lifted import LiftedGame, best_response, enumerate_states, policy_value_dp

__version__ = "0.1.0"

__all__ = [
    "FinitePmf",
    "KernelMatrix",
    "perturb",
    "perturbed_mean_quadrature",
    "DriftParams",
    "MftgSpec",
    "NoiseArchitecture",
    "build_drift_model",
    "reconstruct_xi",
    "verify_xi",
    "LiftedStateSpace",
    "Level0Policy",
    "TeamPolicy",
    "LiftedGame",
    "best_response",
    "enumerate_states",
    "policy_value_dp",
]
