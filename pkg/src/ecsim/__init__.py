"""ecsim: open-system simulator for flux-mediated entangled coherent states."""

__version__ = "0.1.0"

from .constants import CONSTANTS_VERSION
from .errors import (
    ConfigError,
    EcsimError,
    NumericError,
    PhysicsError,
)
from .hilbert import (
    DensityMatrix,
    HilbertSpace,
    Operator,
    StateVector,
    coherent_state,
    displacement_operator,
    mode_operators,
    partial_trace,
    partial_transpose,
)
from .device import ModeSpec, TransmonSpec, thermal_occupation
from .dynamics import (
    FrameConfig,
    SystemSpec,
    Trajectory,
    build_dissipators,
    build_hamiltonian,
    evolve,
    initial_state,
    thermal_state,
)

__all__ = [
    "__version__",
    "CONSTANTS_VERSION",
    "EcsimError",
    "ConfigError",
    "PhysicsError",
    "NumericError",
    "HilbertSpace",
    "Operator",
    "DensityMatrix",
    "StateVector",
    "mode_operators",
    "coherent_state",
    "displacement_operator",
    "partial_trace",
    "partial_transpose",
    "TransmonSpec",
    "ModeSpec",
    "thermal_occupation",
    "SystemSpec",
    "FrameConfig",
    "Trajectory",
    "build_hamiltonian",
    "build_dissipators",
    "evolve",
    "initial_state",
    "thermal_state",
]
