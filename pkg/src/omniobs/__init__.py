"""Distributed omniscient observers for linear multi-agent systems."""
from .exceptions import (
    BadPoleSet,
    ConfigInvalid,
    ConstraintViolation,
    DimensionMismatch,
    EmptyR,
    InconsistentAccess,
    NoConvergence,
    NoLeaders,
    NonFinite,
    NotConnected,
    NotDetectable,
    NotOrthonormal,
    OmniObsError,
    SetupMismatch,
    Singular,
    ZeroW,
)
from .graph import Graph, complete, is_connected, laplacian, path, random_connected, ring
from .nash import Game, QuadraticGame, centralized_seek, distributed_seek, quadratic_ne_oracle
from .numerics import Trajectory, integrate
from .observer_core import AdaptiveParams
from .runner import run, summarize
from .scenarios import BeeConfig, HerdingConfig, run_bee, run_herding
from .simulation import ObserverNetwork, SimulationResult, simulate
from .synthesis import (
    AgentModel,
    double_integrator,
    single_integrator,
    synth_extension,
    synth_hetero,
    synth_homo,
    verify_constraints,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveParams",
    "AgentModel",
    "BadPoleSet",
    "BeeConfig",
    "ConfigInvalid",
    "ConstraintViolation",
    "DimensionMismatch",
    "EmptyR",
    "Game",
    "Graph",
    "HerdingConfig",
    "InconsistentAccess",
    "NoConvergence",
    "NoLeaders",
    "NonFinite",
    "NotConnected",
    "NotDetectable",
    "NotOrthonormal",
    "ObserverNetwork",
    "OmniObsError",
    "QuadraticGame",
    "SetupMismatch",
    "SimulationResult",
    "Singular",
    "Trajectory",
    "ZeroW",
    "centralized_seek",
    "complete",
    "distributed_seek",
    "double_integrator",
    "integrate",
    "is_connected",
    "laplacian",
    "path",
    "quadratic_ne_oracle",
    "random_connected",
    "ring",
    "run",
    "run_bee",
    "run_herding",
    "simulate",
    "single_integrator",
    "summarize",
    "synth_extension",
    "synth_hetero",
    "synth_homo",
    "verify_constraints",
]
