"""Pore-pressure-activated Bingham flow on staggered grids."""

from .config import RunConfig, emit_config, load_config, parse_config
from .constitutive import MaterialParams, SymTensor
from .grid import ScalarField, StaggeredGrid, VectorField
from .scenarios import build_scenario, builtin_scenarios
from .solver import ForcingSpec, SolverConfig, Walls, initial_state, step

__all__ = [
    "RunConfig",
    "parse_config",
    "emit_config",
    "load_config",
    "MaterialParams",
    "SymTensor",
    "StaggeredGrid",
    "ScalarField",
    "VectorField",
    "build_scenario",
    "builtin_scenarios",
    "ForcingSpec",
    "SolverConfig",
    "Walls",
    "initial_state",
    "step",
]
