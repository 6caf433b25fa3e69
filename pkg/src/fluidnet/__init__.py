"""Fluid models, divergent fluid paths and fluid-tracking attacks on multiclass queueing networks."""
from .network import (
    Constants,
    DistSpec,
    NetworkSpec,
    SpecError,
    StageSpec,
    TypeSpec,
    ValidationReport,
    derived_constants,
    simple_network,
    validate_network,
)
from .fluid import (
    FluidReport,
    FluidSolution,
    check_all,
    check_non_idling,
    linearize_segment,
    scale_solution,
    simulate_priority_fluid,
    station_queue,
    total_queue,
    validate_fluid_solution,
)
from .divergence import (
    DivergenceCertificate,
    Witness,
    build_divergent,
    gamma_of_witness,
    make_witness,
    normalize_witness,
    verify_linear_divergence,
)
from .fdp import Decomposition, detect_phase_sequence, fdp_bound_check, fdp_decompose
from .sim import Policy, SimState, SimTrace, builtin_policy, simulate, verify_trace
from .tracker import (
    AllocationPlan,
    EpochLog,
    SupervisorConfig,
    build_allocation_plan,
    delta_default,
    supervisor_run,
    tracker_policy,
)
from .ld import check_exptail, chernoff_rate, empirical_ld_rate, empirical_ld_time, network_ld_constants
from .analysis import closeness_report, divergence_estimate, rate_stability_estimate

__version__ = "0.1.0"
