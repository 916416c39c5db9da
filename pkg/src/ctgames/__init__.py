"""Continuous-time dynamic discrete games: equilibrium, simulation, estimation and identification."""

__version__ = "0.1.0"

from .equilibrium import EquilibriumSolution, GameSpec, solve_equilibrium
from .errors import (ConfigError, ConvergenceError, CTGamesError, DataError, DecompositionError,
                     EstimationError, IdentificationError, InversionDomainError, ModelStructureError,
                     PricingError, SizingError)
from .estimation import MCDesign, fit, lr_test, mc_run, standard_errors
from .jumpprocess import EventSample, IntensityMatrix, PanelSample, decompose, expm, expm_action
from .models import make_family
from .statespace import ContinuationMap, StateSpace

__all__ = [
    "__version__",
    "GameSpec", "EquilibriumSolution", "solve_equilibrium",
    "IntensityMatrix", "EventSample", "PanelSample", "decompose", "expm", "expm_action",
    "ContinuationMap", "StateSpace",
    "fit", "standard_errors", "lr_test", "MCDesign", "mc_run",
    "make_family",
    "CTGamesError", "ConfigError", "ConvergenceError", "DataError", "DecompositionError", "EstimationError",
    "IdentificationError", "InversionDomainError", "ModelStructureError", "PricingError", "SizingError",
]
