"""Toy benchmark problems, reference posteriors and the experiment runner."""

from .experiment import (
    RESULT_COLUMNS,
    ExperimentResult,
    candidate_specs,
    median_table,
    median_tv,
    observed_data,
    run_experiment,
    run_repetition,
    simulate_training,
    write_results,
)
from .lotka_volterra import MEASUREMENT_TIMES, lotka_volterra_trajectory
from .problems import PROBLEMS, ObservedDataset, ToyProblem, get_problem, simulate_discrepancy
from .reference import mc_tail_probabilities, reference_posterior

__all__ = [
    "MEASUREMENT_TIMES",
    "PROBLEMS",
    "RESULT_COLUMNS",
    "ExperimentResult",
    "ObservedDataset",
    "ToyProblem",
    "candidate_specs",
    "get_problem",
    "lotka_volterra_trajectory",
    "mc_tail_probabilities",
    "median_table",
    "median_tv",
    "observed_data",
    "reference_posterior",
    "run_experiment",
    "run_repetition",
    "simulate_discrepancy",
    "simulate_training",
    "write_results",
]
