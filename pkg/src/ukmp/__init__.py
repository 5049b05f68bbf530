"""Uncertainty-aware kernelized movement primitives with LQR-based variable impedance."""

from .errors import (ConvergenceError, FactorizationError, NoConfidenceError, NotDetectableError,
                     NumericalError, ParseError, UkmpError, ValidationError)
from .fusion import ControllerOutput, FusedCommand, fuse
from .gmm import Demonstration, GmmModel, ReferenceTrajectory, fit_gmm, gmr_batch, gmr_condition
from .kmp import KmpHyperparams, KmpModel, is_uncertain, predict, predict_cov, predict_mean, train
from .lqr import (ControlGains, LinearSystem, finite_horizon_gains, infinite_horizon_gains,
                  discrete_infinite_horizon_gains)
from .pipeline import learn_kmp
from .scenarios import make_scenario
from .simulator import ScenarioConfig, TraceRecord, run_scenario, run_time_driven

__version__ = "0.1.0"
