"""Simulation and analysis of event-driven quantum jump models.

A model is a finite set of sectors, each with its own Hilbert space and
Hamiltonian, linked by jump operators.  Between events the state in the
current sector evolves with ``-iH - Lambda/2``; an event moves it to
another sector.  The package samples such histories, integrates the
matching master equation and evaluates exact event-history densities.
"""

from .likelihood import (EventHistory, HistoryStep, chained_density, event_factors, exclusive_density,
                         joint_density, kn_apply, no_event_probability, windowed_event_probability)
from .lindblad import (DirectSumDensity, IntegrationError, integrate_master, lindblad_rhs, observable_rate,
                       sum_sectors)
from .linalg import DimensionError, apply_operator, expm_apply, gram, min_eigenvalue_hermitian
from .model import (Constant, EventModel, HistoryDependent, JumpChannel, ModelError, PiecewiseConstant,
                    SectorSpec, ValidationReport, check_model, effective_generator, lambda_of, total_rate,
                    validate_model)
from .propagator import NumericalDegeneracyError, evolve, find_jump_time, propagator_matrix
from .trajectory import (EnsembleSummary, EventRecord, RngStream, Trajectory, apply_jump, jump_distribution,
                         run_ensemble, run_trajectory)
from .zoo import (GrwLatticeConfig, ReducedModel, as_event_model, build_energy_probe, build_grw_lattice,
                  build_momentum_weighted, build_noncommuting_spin, builtin, counter_model, sequence_model)

__version__ = "0.1.0"
