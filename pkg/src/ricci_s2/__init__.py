"""Perelman's W and mu entropies and Ricci flow on rotationally symmetric 2-spheres."""
from . import entropy, flows, geometry, lab
from .entropy import EntropyConfig, minimize_w, mu
from .errors import (ConfigurationError, ContractError, DataQualityError, DomainError, FitError,
                     FlowError, RicciS2Error, SolverError, StepperError, TransferError, UsageError)
from .flows import StepperConfig, run_flow
from .geometry import ConformalMetric, WarpedMetric, make_grid, round_metric

__version__ = "0.1.0"

__all__ = [
    "entropy", "flows", "geometry", "lab",
    "EntropyConfig", "minimize_w", "mu", "StepperConfig", "run_flow",
    "ConformalMetric", "WarpedMetric", "make_grid", "round_metric",
    "RicciS2Error", "ConfigurationError", "ContractError", "DataQualityError", "DomainError",
    "FitError", "FlowError", "SolverError", "StepperError", "TransferError", "UsageError",
]
