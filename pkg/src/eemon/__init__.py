"""Simulator and optimization library for energy-efficient proactive monitoring
of a suspicious link through a cooperative full-duplex relay."""

from .harness import (
    AntennaDims,
    ExperimentConfig,
    ResultRecord,
    Topology,
    dbm_to_watts,
    default_params,
    generate_channels,
    run_experiment,
    write_records,
)
from .model import (
    BeamDesign,
    ChannelSet,
    DelayMode,
    FeasibilityReport,
    NeeValue,
    SystemParams,
    ZFBasis,
    check_feasible,
    circuit_power,
    nee,
    optimal_receiver,
    rate_monitor,
    rate_secondary,
    rate_suspicious,
    transmit_power,
    zf_nullspace,
)
from .pathfollow import (
    InitializationError,
    SolverConfig,
    SolveTrace,
    StepError,
    find_initial_point,
    solve_dinkelbach_ica,
    solve_nee_perfect,
    solve_wsr,
)
from .robust import (
    AoConfig,
    DesignRule,
    DinkelbachState,
    RobustTrace,
    UncertaintyModel,
    WorstCaseStats,
    outage_probability,
    sample_perturbations,
    solve_robust,
    worst_case_check,
)
from .surrogate import (
    BoundKind,
    SurrogateDomainError,
    matrix_rate_lower_bound,
    scalar_lemma_bounds,
)

__all__ = [
    "AntennaDims",
    "AoConfig",
    "BeamDesign",
    "BoundKind",
    "ChannelSet",
    "DelayMode",
    "DesignRule",
    "DinkelbachState",
    "ExperimentConfig",
    "FeasibilityReport",
    "InitializationError",
    "NeeValue",
    "ResultRecord",
    "RobustTrace",
    "SolveTrace",
    "SolverConfig",
    "StepError",
    "SurrogateDomainError",
    "SystemParams",
    "Topology",
    "UncertaintyModel",
    "WorstCaseStats",
    "ZFBasis",
    "check_feasible",
    "circuit_power",
    "dbm_to_watts",
    "default_params",
    "find_initial_point",
    "generate_channels",
    "matrix_rate_lower_bound",
    "nee",
    "optimal_receiver",
    "outage_probability",
    "rate_monitor",
    "rate_secondary",
    "rate_suspicious",
    "run_experiment",
    "sample_perturbations",
    "scalar_lemma_bounds",
    "solve_dinkelbach_ica",
    "solve_nee_perfect",
    "solve_robust",
    "solve_wsr",
    "transmit_power",
    "worst_case_check",
    "write_records",
    "zf_nullspace",
]

__version__ = "0.1.0"
