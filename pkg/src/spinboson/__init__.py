"""Variational coherent-state dynamics of the sub-Ohmic spin-boson model.

Subpackages by task: bath (spectral-density discretization), state (trial
state and observables), eom (variational equations of motion), integrate
(time propagation), deviation (ansatz-fidelity measure), heom (independent
hierarchy cross-validator), oracle (exact small-system references),
analysis (coherent-incoherent classification and phase diagram), cli
(command-line driver).
"""

from . import errors
from .analysis import (BoundaryEstimate, CrossoverVerdict, Label,
                       PhaseDiagram, classify, classify_series, estimate_sc,
                       ingest_reference, scan_alpha)
from .bath import (DiscretizationKind, DiscretizationScheme, DiscretizedBath,
                   SpectralParams, discretize, initial_displacements,
                   spectral_density)
from .config import RunConfig, config_hash, load_config, parse_config
from .deviation import DeviationSeries, fit_sigma_max, sigma_series
from .eom import SolverConfig, assemble_and_solve, inject_noise
from .heom import (CorrelationFit, correlation_zero_t, fit_correlation,
                   heom_evolve, hierarchy_counts)
from .integrate import (IntegrationMethod, IntegratorConfig, RunSpec,
                        TrajectoryRecord, convergence_study, evolve,
                        read_trajectory_csv, run_many, run_trajectory,
                        write_trajectory_csv)
from .oracle import FockConfig, dephasing_exact, fock_evolve, free_spin_exact
from .state import (MultiD1State, ObservableSample, SystemParams,
                    initial_state, observe)

__version__ = "0.1.0"

__all__ = [
    "errors",
    "SpectralParams", "DiscretizationKind", "DiscretizationScheme",
    "DiscretizedBath", "discretize", "spectral_density",
    "initial_displacements",
    "SystemParams", "MultiD1State", "ObservableSample", "initial_state",
    "observe",
    "SolverConfig", "assemble_and_solve", "inject_noise",
    "IntegrationMethod", "IntegratorConfig", "RunSpec", "TrajectoryRecord",
    "evolve", "run_trajectory", "run_many", "convergence_study",
    "read_trajectory_csv", "write_trajectory_csv",
    "DeviationSeries", "sigma_series", "fit_sigma_max",
    "CorrelationFit", "correlation_zero_t", "fit_correlation", "heom_evolve",
    "hierarchy_counts",
    "FockConfig", "fock_evolve", "dephasing_exact", "free_spin_exact",
    "Label", "CrossoverVerdict", "BoundaryEstimate", "PhaseDiagram",
    "classify", "classify_series", "scan_alpha", "estimate_sc",
    "ingest_reference",
    "RunConfig", "load_config", "parse_config", "config_hash",
    "__version__",
]
