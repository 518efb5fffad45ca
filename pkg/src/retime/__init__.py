"""Time reparameterization of stiff ODE trajectories and stretched-time neural surrogates."""
from .errors import (
    DegenerateTrajectory,
    GridMismatch,
    MaxStepsExceeded,
    NonFinite,
    NonMonotoneAbscissa,
    NonMonotoneTimeMap,
    OptimizerDiverged,
    RetimeError,
    StepSizeUnderflow,
)
from .integrate import SolverConfig, Trajectory, integrate_explicit, integrate_implicit_adaptive
from .reparam import METHODS, ReparamResult, SpeedProfile, TimeMap, reparameterize
from .systems import OdeSystem, available, get_system

__version__ = "0.1.0"
