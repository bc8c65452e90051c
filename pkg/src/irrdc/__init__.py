"""Direct collocation with integrated-residual regularisation for singular optimal control."""
from .benchmarks import SmibParams, aly_chan, get_problem, second_order_singular, smib
from .estimators import CollocationController
from .metrics import MetricsTable, optimality_gap, simulated_cost, total_variation
from .ocp import DomainError, Mesh, OcpDefinition, Trajectory, eval_control, eval_state
from .simulator import EmpcConfig, integrate_plant, run_empc, simulate_open_loop
from .solver import SolveResult, SolverOptions, check_derivatives, solve
from .transcription import (IrrConfig, ResidualQuadrature, TranscriptionError, integrated_residual,
                            objective_quadrature, transcribe_dc, transcribe_irrdc)

__version__ = "0.1.0"

__all__ = [
    "CollocationController", "DomainError", "EmpcConfig", "IrrConfig", "Mesh", "MetricsTable",
    "OcpDefinition", "ResidualQuadrature", "SmibParams", "SolveResult", "SolverOptions", "Trajectory",
    "TranscriptionError", "aly_chan", "check_derivatives", "eval_control", "eval_state", "get_problem",
    "integrate_plant", "integrated_residual", "objective_quadrature", "optimality_gap", "run_empc",
    "second_order_singular", "simulate_open_loop", "simulated_cost", "smib", "solve", "total_variation",
    "transcribe_dc", "transcribe_irrdc",
]
