"""Data-driven mitigation workbench for switching insider threats.

Learns optimal mitigation gains for an unknown switched linear plant purely
from trajectory data via periodic off-policy policy iteration, and verifies
the learning against a model-based Riccati oracle.
"""

from .augment import AugmentedMode, DelayBuffer, OutputReference, augment, equilibrium
from .errors import MitlearnError
from .game import (
    InsiderObjective,
    PlantMode,
    SwitchingSignal,
    TeamGameSpec,
    build_plant_mode,
    insider_best_response,
    team_optimal_solution,
)
from .learner import (
    DataBatch,
    LearnerConfig,
    PolicyIterate,
    assemble,
    dwell_feasibility,
    mixed_mode_safety_check,
    policy_iteration,
    rank_ok,
    run_schedule,
)
from .linalg import (
    care_hamiltonian,
    kleinman_iterate,
    log_norm_2,
    solve_lyapunov,
    stabilizing_gain,
    svec,
    vec,
)
from .scenario import Scenario, load_scenario
from .simulate import ExplorationNoise, GainSchedule, SimConfig, TrajectoryLog, collect_batch, simulate

__version__ = "0.1.0"

__all__ = [
    "AugmentedMode", "DelayBuffer", "OutputReference", "augment", "equilibrium",
    "MitlearnError",
    "InsiderObjective", "PlantMode", "SwitchingSignal", "TeamGameSpec",
    "build_plant_mode", "insider_best_response", "team_optimal_solution",
    "DataBatch", "LearnerConfig", "PolicyIterate", "assemble",
    "dwell_feasibility", "mixed_mode_safety_check", "policy_iteration",
    "rank_ok", "run_schedule",
    "care_hamiltonian", "kleinman_iterate", "log_norm_2", "solve_lyapunov",
    "stabilizing_gain", "svec", "vec",
    "Scenario", "load_scenario",
    "ExplorationNoise", "GainSchedule", "SimConfig", "TrajectoryLog",
    "collect_batch", "simulate",
]
