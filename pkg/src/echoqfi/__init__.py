"""Variational quantum metrology with Loschmidt-echo QFI estimation.

Simulates a star-shaped spin register, extracts the quantum Fisher
information from echo signals, optimizes the probe with a Nelder-Mead
search and evaluates a time-reversal readout against the standard
quantum limit.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .circuits import (
    CircuitParams, PulseErrorModel, echo_circuit, engineering_unitary, generator,
)
from .errors import (
    CapacityError, DegenerateReferenceError, DomainError, NumericalContractError, OptimizerError,
)
from .metrology import (
    loschmidt_echo, optimal_probe, qfi_deviation, qfi_from_le, qfi_mixed, qfi_pure,
    select_quench, star_optimal_qfi,
)
from .noise import RelaxationParams, noisy_echo_signal
from .optimize import NmConfig, NoiseConfig, nelder_mead, optimize_probe
from .qstate import DeviationState, SpinSystem
from .readout import scaling_sweep, thermal_deviation_readout, working_point

__all__ = [
    "CapacityError", "CircuitParams", "DegenerateReferenceError", "DeviationState", "DomainError",
    "NmConfig", "NoiseConfig", "NumericalContractError", "OptimizerError", "PulseErrorModel",
    "RelaxationParams", "SpinSystem", "echo_circuit", "engineering_unitary", "generator",
    "loschmidt_echo", "nelder_mead", "noisy_echo_signal", "optimal_probe", "optimize_probe",
    "qfi_deviation", "qfi_from_le", "qfi_mixed", "qfi_pure", "scaling_sweep", "select_quench",
    "star_optimal_qfi", "thermal_deviation_readout", "working_point",
]
