"""Four-phase tumor growth with angiogenesis on simplicial meshes."""
from .mesh import SimplicialMesh, box_mesh, load_mesh, save_mesh
from .model import ModelParams, TherapySchedule, case1, case2
from .scheme import (Discretization, NumericalAbort, SchemeSettings, SimulationState,
                     advance_time_step, initial_state)

__all__ = [
    "SimplicialMesh", "box_mesh", "load_mesh", "save_mesh",
    "ModelParams", "TherapySchedule", "case1", "case2",
    "Discretization", "NumericalAbort", "SchemeSettings", "SimulationState",
    "advance_time_step", "initial_state",
]
