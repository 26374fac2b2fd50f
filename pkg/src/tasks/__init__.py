"""
Objectives, client partitions, gradient oracles and convergence constants.
"""

from src.tasks.builders import (
    FederatedTask,
    load_csv_dataset,
    logistic_from_dataset,
    make_counterexample,
    make_logistic,
    make_mlp,
    make_quadratic,
)
from src.tasks.constants import (
    ConvergenceConstants,
    HeterogeneityProfile,
    estimate_constants,
    probe_points_around,
    rate_bound,
    reference_optimum,
    tuned_eta,
)
from src.tasks.objectives import LocalObjective, counterexample_grad, counterexample_loss
from src.tasks.oracle import GradientOracle

__all__ = [
    'ConvergenceConstants', 'FederatedTask', 'GradientOracle', 'HeterogeneityProfile', 'LocalObjective',
    'counterexample_grad', 'counterexample_loss', 'estimate_constants', 'load_csv_dataset',
    'logistic_from_dataset', 'make_counterexample', 'make_logistic', 'make_mlp', 'make_quadratic',
    'probe_points_around', 'rate_bound', 'reference_optimum', 'tuned_eta',
]
