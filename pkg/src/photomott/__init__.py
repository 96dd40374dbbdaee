"""Entanglement spreading in a dissipative Bose-Hubbard chain of coupled cavities.

Exact Lindblad and pure-state propagation on small chains, quantum
trajectories, two-site negativity and SU(3) moment tomography, and the
propagation / dissipation-scan protocols built on them.
"""
__version__ = "0.1.0"

from .hilbert import DimensionError, FockSector, LatticeSpec, build_hamiltonian, build_jump_operators
from .dynamics import Evolution, TimeGrid, default_dt, evolve_master, evolve_pure
from .states import inject_doublon, inject_holon, mott_state, prepare_ideal, prepare_via_pulse
from .entanglement import (
    generator_basis,
    measure_moments,
    negativity,
    partial_trace_pair,
    partial_transpose,
    tomography_reconstruct,
)
from .trajectories import TrajectoryConfig, ensemble_average, run_trajectory
from .analysis import (
    extract_speed,
    find_peak,
    propagation_experiment,
    scan_dissipation,
    v_max_doublon,
    v_max_holon,
)

__all__ = [
    "DimensionError", "FockSector", "LatticeSpec", "build_hamiltonian", "build_jump_operators",
    "Evolution", "TimeGrid", "default_dt", "evolve_master", "evolve_pure",
    "inject_doublon", "inject_holon", "mott_state", "prepare_ideal", "prepare_via_pulse",
    "generator_basis", "measure_moments", "negativity", "partial_trace_pair",
    "partial_transpose", "tomography_reconstruct",
    "TrajectoryConfig", "ensemble_average", "run_trajectory",
    "extract_speed", "find_peak", "propagation_experiment", "scan_dissipation",
    "v_max_doublon", "v_max_holon",
]
