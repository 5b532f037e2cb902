"""Randomized conjugate-gradient least-squares solvers, ridge variants, rate
theory and a benchmark harness."""

from .flops import FlopCounter, count_flops
from .linalg import (ColumnOperator, ProblemInstance, RidgeProblem, SolutionCertificate, SparseVec, as_operator,
                     direct_oracle, read_libsvm)
from .sketching import SketchDistribution, SketchKind, draw, m_matrix
from .solvers import (METHODS, SolveResult, StopRule, TraceRecord, compute_rse, efficient_init,
                      efficient_rcgls_step, efficient_solution, rcgls_init, rcgls_step, run_solver)
from .ridge import RIDGE_METHODS, AugmentedSystem, RidgeOption, build_augmented, run_ridge, select_option
from .theory import RateReport, contraction_factor, gamma_sample, rate_report, rcd_factor, verify_expected_decrease
from .bench import ExperimentConfig, RunRecord, SyntheticSpec, emit_outputs, generate_synthetic, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AugmentedSystem", "ColumnOperator", "ExperimentConfig", "FlopCounter", "METHODS", "ProblemInstance",
    "RIDGE_METHODS", "RateReport", "RidgeOption", "RidgeProblem", "RunRecord", "SketchDistribution", "SketchKind",
    "SolutionCertificate", "SolveResult", "SparseVec", "StopRule", "SyntheticSpec", "TraceRecord", "as_operator",
    "build_augmented", "compute_rse", "contraction_factor", "count_flops", "direct_oracle", "draw",
    "efficient_init", "efficient_rcgls_step", "efficient_solution", "emit_outputs", "gamma_sample",
    "generate_synthetic", "m_matrix", "rate_report", "rcd_factor", "rcgls_init", "rcgls_step", "read_libsvm",
    "run_experiment", "run_ridge", "run_solver", "select_option", "verify_expected_decrease",
]
