"""Free-endpoint quadratic optimal control of inhomogeneous bilinear
systems and ensembles via iterated frozen-coefficient Riccati sweeps."""

from .model import (
    BilinearFactors,
    BilinearProblem,
    bilinear_factors,
    consistency_residual,
    frozen_drift,
    frozen_gram,
    input_gain,
)
from .numkit import GriddedTrajectory, TimeGrid
from .solver import (
    BoundarySolveError,
    IterationState,
    RiccatiEscapeError,
    SolveOptions,
    SolveResult,
    evaluate_cost,
    simulate_bilinear,
    solve,
)
from .ensemble import EnsembleSpec, SampleCoefficients, sample_uniform, stack_problem
from .stochastic import NoiseSpec, expected_reduction
from .scenarios import SCENARIO_IDS, build as build_scenario

__version__ = "0.1.0"

__all__ = [
    "BilinearFactors",
    "BilinearProblem",
    "BoundarySolveError",
    "EnsembleSpec",
    "GriddedTrajectory",
    "IterationState",
    "NoiseSpec",
    "RiccatiEscapeError",
    "SampleCoefficients",
    "SCENARIO_IDS",
    "SolveOptions",
    "SolveResult",
    "TimeGrid",
    "bilinear_factors",
    "build_scenario",
    "consistency_residual",
    "evaluate_cost",
    "expected_reduction",
    "frozen_drift",
    "frozen_gram",
    "input_gain",
    "sample_uniform",
    "simulate_bilinear",
    "solve",
    "stack_problem",
]
