"""Adaptive output-feedback consensus for networks of identical linear agents."""

__version__ = "0.1.0"

from .engine import SimConfig, Trajectory, detect_convergence, simulate
from .graph import CommGraph, SwitchingSignal, laplacian, lambda2, signal_at
from .protocols import NetworkState, ProtocolSpec, Variant, consensus_error, initial_state
from .synthesis import GainSet, design_gains, lyapunov_params, verify_certificate
from .system import LinearSystem

__all__ = [
    "CommGraph", "GainSet", "LinearSystem", "NetworkState", "ProtocolSpec", "SimConfig",
    "SwitchingSignal", "Trajectory", "Variant", "consensus_error", "design_gains",
    "detect_convergence", "initial_state", "lambda2", "laplacian", "lyapunov_params",
    "signal_at", "simulate", "verify_certificate",
]
