"""Input-output control barrier functions learned from one trajectory.

The pipeline fits a one-step predictor on the extended input-output state,
computes the maximal control-invariant subset of the constraint set and
filters nominal inputs with a small QP.
"""
from .data import PeReport, TrajectoryDataset, build_hankel, check_pe, partition
from .errors import (
    IODCBFError,
    NotConverged,
    NumericalError,
    ValidationError,
)
from .estimators import DataDrivenPredictor, IOBarrierSafetyFilter
from .filter import FilterConfig, FilterResult, SafetyFilterSession, cbf_filter, h_value, mpsf
from .geometry import Polytope, box_polytope, extended_constraints, invariant_set, pre_set
from .model import DataDrivenModel, build_extended_dynamics, fit_predictor, step_extended
from .sim import StateSpacePlant, delayed_double_integrator, run_closed_loop

__version__ = "0.1.0"

__all__ = [
    "DataDrivenModel", "DataDrivenPredictor", "FilterConfig", "FilterResult",
    "IOBarrierSafetyFilter", "IODCBFError", "NotConverged", "NumericalError", "PeReport",
    "Polytope", "SafetyFilterSession", "StateSpacePlant", "TrajectoryDataset",
    "ValidationError", "box_polytope", "build_extended_dynamics", "build_hankel",
    "cbf_filter", "check_pe", "delayed_double_integrator", "extended_constraints",
    "fit_predictor", "h_value", "invariant_set", "mpsf", "partition", "pre_set",
    "run_closed_loop", "step_extended",
]
