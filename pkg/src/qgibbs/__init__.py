"""Quantum Hamiltonians with classical Gibbs ground states, annealing schedules and PIMC."""

__version__ = "0.1.0"

from .classical import (ClassicalModel, CouplingTerm, DiagonalObservable, SpinConfig,
                        ThermalPoint, brute_thermal, energy_table, gibbs_vector,
                        random_model)
from .errors import (CapacityError, ConfigError, ContractError, DomainError, NumericalError,
                     QGibbsError, UnsupportedModelError)
from .quantum_map import (QuantumMap, build_eqa_hamiltonian, build_plain_qa,
                          build_sa_hamiltonian, compute_map_params, gap_bound_qa, gap_bound_sa)
from .spectral import extremal_pair, verify_gibbs_ground

__all__ = [
    "CapacityError", "ClassicalModel", "ConfigError", "ContractError", "CouplingTerm",
    "DiagonalObservable", "DomainError", "NumericalError", "QGibbsError", "QuantumMap",
    "SpinConfig", "ThermalPoint", "UnsupportedModelError", "brute_thermal",
    "build_eqa_hamiltonian", "build_plain_qa", "build_sa_hamiltonian", "compute_map_params",
    "energy_table", "extremal_pair", "gap_bound_qa", "gap_bound_sa", "gibbs_vector",
    "random_model", "verify_gibbs_ground",
]
