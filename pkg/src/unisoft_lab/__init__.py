"""Representation diagnostics and optimistic LSVI experiments for finite-horizon linear MDPs."""
from .agents import (BetaSchedule, LeaderState, aggregated_regression, beta, leader_plan,
                     leader_update, optimism_audit, ridge_solve)
from .bounds import (ProblemConstants, constant_regret_expressions, g_worstcase, kappa_bar_eleanor,
                     kappa_bar_lsvi)
from .features import (FeatureMap, LowRankModel, ReprDiagnostics, builtin_example,
                       empirical_covariance, find_necessity_witness, ibe_monte_carlo,
                       make_non_unisoft, min_positive_eigenvalue, optimal_covariance, unisoft_check,
                       unisoft_mixing_check, verify_low_rank)
from .harness import (ExperimentConfig, RegretTrace, confidence_width_diagnostic,
                      design_growth_diagnostic, plateau_detector, run_episode, run_experiment)
from .kernels import BACKEND_NAME
from .mdp import (DeterministicPolicy, GapTable, MdpError, NoiseModel, OccupancyMeasure, TabularMdp,
                  ValueTables, backward_induction, expected_features, occupancy, policy_evaluation,
                  reachable_sets)

__version__ = "0.1.0"
