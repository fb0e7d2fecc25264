"""Leader-follower Hegselmann-Krause opinion dynamics with time delays.

Submodules
----------
domain
    Parameters, influence functions, delay laws, kernels, histories, trajectories.
engine
    Fixed-step RK4 method-of-steps integrator for pointwise and distributed delays.
controllers
    Consensus feedback, steering and the waypoint controller.
analysis
    Certificates, Lyapunov diagnostics and run reports.
config, cli
    Scenario files, presets, sweeps and the command line.
"""

from .analysis import RunReport, analyze, certify, tau_bound_distributed, tau_bound_pointwise
from .config import ScenarioConfig, fig1_config, fig2_config
from .domain import HKSystem, History, ModelParams, Trajectory
from .engine import IntegratorConfig, ModelKind, integrate

__all__ = [
    "HKSystem",
    "History",
    "IntegratorConfig",
    "ModelKind",
    "ModelParams",
    "RunReport",
    "ScenarioConfig",
    "Trajectory",
    "analyze",
    "certify",
    "fig1_config",
    "fig2_config",
    "integrate",
    "tau_bound_distributed",
    "tau_bound_pointwise",
]
