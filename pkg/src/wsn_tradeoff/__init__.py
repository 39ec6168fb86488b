"""Rate, reliability and lifetime tradeoff in energy-constrained multihop sensor networks."""

from .model import (
    DerivedSets,
    InstanceError,
    NetworkInstance,
    build_instance,
    canonical_instance,
    derive_sets,
    load_instance,
    network_lifetime,
    node_lifetime,
    node_power,
    transmit_power,
)
from .objective import PrimalState, TradeoffParams, load_params
from .oracle import (
    InfeasibleInstance,
    InfeasiblePrimal,
    OracleSolution,
    dual_function,
    duality_gap,
    network_lifetime_exact_vs_beta,
    oracle_solve,
)
from .sdd import (
    DualState,
    PriceScales,
    Problem,
    Schedules,
    SolveTrace,
    StepsizeSchedule,
    StopRule,
    initial_state,
    run_round,
    sdd_solve,
    write_trace_csv,
)

__all__ = [
    "DerivedSets",
    "DualState",
    "InfeasibleInstance",
    "InfeasiblePrimal",
    "InstanceError",
    "NetworkInstance",
    "OracleSolution",
    "PriceScales",
    "PrimalState",
    "Problem",
    "Schedules",
    "SolveTrace",
    "StepsizeSchedule",
    "StopRule",
    "TradeoffParams",
    "build_instance",
    "canonical_instance",
    "derive_sets",
    "dual_function",
    "duality_gap",
    "initial_state",
    "load_instance",
    "load_params",
    "network_lifetime",
    "network_lifetime_exact_vs_beta",
    "node_lifetime",
    "node_power",
    "oracle_solve",
    "run_round",
    "sdd_solve",
    "transmit_power",
    "write_trace_csv",
]

__version__ = "0.1.0"
