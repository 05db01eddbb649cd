"""Condensed density-driven optimal control (D2OC) for multi-agent coverage."""

from .condensed import CondensedQp, condense, solve_box_qp, surrogate_cost
from .density import (DensityParams, FieldExhausted, HorizonData, SampleField,
                      build_horizon_data, decay_weights, exchange_weights,
                      make_gmm_field, select_local)
from .kkt import KktSystem, assemble_kkt, schur_reduce, solve_full
from .lti import (AgentState, ContractError, LtiModel, lift_reference, make_double_integrator,
                  make_quadrotor8, make_scalar, output, power_sequence, step)
from .stability import (ErrorState, StabilitySpec, check_lmi, iss_trace, solve_stable_qcqp,
                        stability_radius, synthesize_p)
from .swarm import SwarmConfig, comm_graph, coverage_fraction, run_sim

__version__ = "0.1.0"

__all__ = [
    "AgentState", "CondensedQp", "ContractError", "DensityParams", "ErrorState", "FieldExhausted",
    "HorizonData", "KktSystem", "LtiModel", "SampleField", "StabilitySpec", "SwarmConfig",
    "assemble_kkt", "build_horizon_data", "check_lmi", "comm_graph", "condense",
    "coverage_fraction", "decay_weights", "exchange_weights", "iss_trace", "lift_reference",
    "make_double_integrator", "make_gmm_field", "make_quadrotor8", "make_scalar", "output",
    "power_sequence", "run_sim", "schur_reduce", "select_local", "solve_box_qp",
    "solve_full", "solve_stable_qcqp", "stability_radius", "step", "surrogate_cost",
    "synthesize_p",
]
