"""Exact dynamics of kinetically constrained quantum lattice models."""

from . import constrained_gas, harness, io, observables, propagator, quantum_dimers
from .constrained_gas import (
    build_gas_hamiltonian,
    build_strip,
    enumerate_sector,
    occupation,
    restrict_hamiltonian,
    translation_permutation,
)
from .harness import ConfigError, RunConfig, RunManifest, pipeline_fig, run_experiment
from .propagator import (
    Eigensystem,
    EnsembleState,
    KrylovPropagator,
    diagonal_ensemble,
    diagonalize,
    full_diagonalize,
    lanczos_ground_state,
    log_time_grid,
    momentum_diagonalize,
)
from .quantum_dimers import (
    build_flux_sector,
    build_qdm_hamiltonian,
    enumerate_coverings,
    flux_of,
)

__version__ = "0.1.0"
