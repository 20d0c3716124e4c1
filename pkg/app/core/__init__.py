"""Planner core: topology synthesis, LP/MILP solvers, reformulations and experiments."""

from app.core.bnb import MilpSolution, MilpStatus, solve_milp
from app.core.experiments import (
    ExperimentConfig,
    ExperimentFamily,
    ReportBundle,
    ScenarioReport,
    fairness_profile,
    protection_plan,
    run_experiment,
    simulate_failures,
    write_bundle,
)
from app.core.lp import LpProblem, LpSolution, LpStatus, check_duality_gap, solve_lp
from app.core.model import (
    build_defender_lp,
    evaluate_allocation,
    solve_defender,
    validate_instance,
)
from app.core.reform import (
    MilpFormulation,
    build_duality_milp,
    build_kkt_milp,
    formulation_stats,
)
from app.core.solve import (
    Method,
    enumerate_attacks,
    solve_attacker_defender,
    solve_bilevel,
    verify_solution,
)
from app.core.topology import all_pairs_delay, generate_ba_topology, synthesize_instance

__all__ = [
    "ExperimentConfig",
    "ExperimentFamily",
    "LpProblem",
    "LpSolution",
    "LpStatus",
    "Method",
    "MilpFormulation",
    "MilpSolution",
    "MilpStatus",
    "ReportBundle",
    "ScenarioReport",
    "all_pairs_delay",
    "build_defender_lp",
    "build_duality_milp",
    "build_kkt_milp",
    "check_duality_gap",
    "enumerate_attacks",
    "evaluate_allocation",
    "fairness_profile",
    "formulation_stats",
    "generate_ba_topology",
    "protection_plan",
    "run_experiment",
    "simulate_failures",
    "solve_attacker_defender",
    "solve_bilevel",
    "solve_defender",
    "solve_lp",
    "solve_milp",
    "synthesize_instance",
    "validate_instance",
    "verify_solution",
]
