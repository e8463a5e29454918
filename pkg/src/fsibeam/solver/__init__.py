"""Coupled channel-flow and beam solver."""
from .beam import BeamState, beam_step
from .config import (ConfigError, ContactConfig, CouplingConfig, GridConfig, InitialConfig, Params,
                     RunConfig, SweepConfig, load_config)
from .coupled import (ContactDuringStep, ContactEvent, CouplingError, Sample, SimState, StepInfo, Trajectory,
                      coupled_step, detect_contact, run)
from .fluid import FluidState, FluidStepSystem, LinearSolveError, fluid_step, traction_on_beam
from .initial import (InitialDataError, InitialTriple, initial_state, initial_triple, regularize_initial_data,
                      validate_initial_data)
from .mac import MacGrid

__all__ = [
    "BeamState", "beam_step", "ConfigError", "ContactConfig", "CouplingConfig", "GridConfig", "InitialConfig",
    "Params", "RunConfig", "SweepConfig", "load_config", "ContactDuringStep", "ContactEvent", "CouplingError",
    "Sample", "SimState", "StepInfo", "Trajectory", "coupled_step", "detect_contact", "run", "FluidState",
    "FluidStepSystem", "LinearSolveError", "fluid_step", "traction_on_beam", "InitialDataError", "InitialTriple",
    "initial_state", "initial_triple", "regularize_initial_data", "validate_initial_data", "MacGrid",
]
