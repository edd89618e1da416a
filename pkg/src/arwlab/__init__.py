"""Simulation and exact-oracle laboratory for the two-type annihilating random walk."""

__version__ = "0.1.0"

from .core import InitSpec, SimParams, init_configuration, run_to_extinction, step
from .kernel import run_trials, simulate

__all__ = ["InitSpec", "SimParams", "init_configuration", "run_to_extinction", "step", "run_trials", "simulate",
           "__version__"]
