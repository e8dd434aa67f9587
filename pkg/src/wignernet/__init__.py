"""Semiclassical simulation of coherent photonic circuits and an all-optical perceptron."""
from .circuit import (CircuitModel, Netlist, Nonlinearity, concatenate, elaborate,
                      feedback_reduce, CircuitError, SingularLoop, DanglingPort, NetlistError)
from .components import (KerrParams, Kerr2Params, NopoParams, GainCoefficients,
                         laser_source, phase_shifter, beamsplitter, nport_mixer,
                         kerr_cavity, kerr_cavity_2mode, nopo, kerr_reflection_coeffs,
                         kerr_bias_to_state, kerr_max_gain, detuning_for_gain,
                         quadrature_filter_coeffs, fredkin_params, nopo_threshold,
                         nopo_steady_state, nopo_fixed_point, nopo_phase_diffusion_rate)
from .sde import (InputSchedule, SimConfig, Trajectory, EnsembleStats, integrate,
                  steady_state, run_ensemble, Diverged, NoConvergence)

__version__ = "0.1.0"

__all__ = [
    "CircuitModel", "Netlist", "Nonlinearity", "concatenate", "elaborate", "feedback_reduce",
    "CircuitError", "SingularLoop", "DanglingPort", "NetlistError",
    "KerrParams", "Kerr2Params", "NopoParams", "GainCoefficients",
    "laser_source", "phase_shifter", "beamsplitter", "nport_mixer",
    "kerr_cavity", "kerr_cavity_2mode", "nopo", "kerr_reflection_coeffs",
    "kerr_bias_to_state", "kerr_max_gain", "detuning_for_gain", "quadrature_filter_coeffs",
    "fredkin_params", "nopo_threshold", "nopo_steady_state", "nopo_fixed_point",
    "nopo_phase_diffusion_rate",
    "InputSchedule", "SimConfig", "Trajectory", "EnsembleStats", "integrate",
    "steady_state", "run_ensemble", "Diverged", "NoConvergence",
]
