"""Constrained Lagrangian dynamics of tensegrity structures.

Bars are rigid (length constraints) or axially elastic; strings are
tension-only springs with optional dampers.  States are corrected after every
integration step so that constraints and the work-energy balance hold to a
threshold.
"""

from ._jit import NUMBA_AVAILABLE, backend
from .builtins import (builtin_arm, builtin_ball, builtin_forcing, builtin_pendulum,
                       builtin_tbar, builtin_tbar_equilibrium)
from .compressible import (MATERIALS, CompressibleBarProps, CompressibleDynamics, Material,
                           equilibrium_rest_lengths, linearize_compressible)
from .correction import CorrectionReport, CorrectionSettings, correct_state
from .integrator import IntegratorSettings, SimulationError, Trajectory, simulate
from .linearization import (LinearModel, OperatingPoint, find_equilibrium, linearize_rigid,
                            prestress)
from .rigid import ForceInputs, RigidDynamics, SystemState
from .structure_file import load_structure
from .topology import (AssembledModel, StructureError, TensegrityStructure, build_structure,
                       member_lengths)

__version__ = "0.1.0"

__all__ = [
    "NUMBA_AVAILABLE", "backend",
    "builtin_arm", "builtin_ball", "builtin_forcing", "builtin_pendulum", "builtin_tbar",
    "builtin_tbar_equilibrium",
    "MATERIALS", "CompressibleBarProps", "CompressibleDynamics", "Material",
    "equilibrium_rest_lengths", "linearize_compressible",
    "CorrectionReport", "CorrectionSettings", "correct_state",
    "IntegratorSettings", "SimulationError", "Trajectory", "simulate",
    "LinearModel", "OperatingPoint", "find_equilibrium", "linearize_rigid", "prestress",
    "ForceInputs", "RigidDynamics", "SystemState",
    "load_structure",
    "AssembledModel", "StructureError", "TensegrityStructure", "build_structure",
    "member_lengths",
]
