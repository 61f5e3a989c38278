"""Contact process with avoidance: exact simulation, star analytics and experiments."""

from .block import BlockClass, block_good_probability, classify_block, op_edge_speed, op_run
from .core import (Configuration, Event, EventKind, Outcome, Params, SurvivalRecord, Topology, ValidationError,
                   apply_event, build_topology, enabled_rates, gillespie_step, initial_configuration,
                   run_to_absorption, simulate_batch)
from .harris import harris_replay, harris_sample, nonmonotone_witness_search
from .oracle import edge_drift_experiment, enumerate_state_space, exact_mean_extinction_time, generator_matrix
from .star import (critical_eta, delta_exponent, f_eta, gamma_pair, klchain_run, reduced_star_run, u_prob,
                   v_prob, zchain_run)

__version__ = "0.1.0"

__all__ = [
    "BlockClass", "Configuration", "Event", "EventKind", "Outcome", "Params", "SurvivalRecord", "Topology",
    "ValidationError", "apply_event", "block_good_probability", "build_topology", "classify_block",
    "critical_eta", "delta_exponent", "edge_drift_experiment", "enabled_rates", "enumerate_state_space",
    "exact_mean_extinction_time", "f_eta", "gamma_pair", "generator_matrix", "gillespie_step",
    "harris_replay", "harris_sample", "initial_configuration", "klchain_run", "nonmonotone_witness_search",
    "op_edge_speed", "op_run", "reduced_star_run", "run_to_absorption", "simulate_batch", "u_prob",
    "v_prob", "zchain_run",
]
