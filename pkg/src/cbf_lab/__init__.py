from . import config
from .linear_model import (
    CbfLabError,
    Constraint,
    FilterConfig,
    HocbfChain,
    Plant,
    build_constraint,
    build_hocbf_chain,
    compute_relative_degree,
    evaluate_chain,
    is_hurwitz,
    is_stabilizable,
    make_filter_config,
)
from .filter_core import (
    FilterData,
    Mode,
    build_filter_data,
    closed_loop_field,
    closed_loop_field_batch,
    filtered_control,
    hocbf_condition,
)
from .spectral_analysis import (
    ClassificationReport,
    Verdict,
    analyze_eigenstructure,
    classify,
    classify_equilibria,
    divergence_ray,
    invariant_zeros,
    parity_check,
)
from .lmi_design import (
    LmiInfeasible,
    build_lmi_problem,
    cqlf_singularity_gamma,
    lqr_gain,
    pole_placement_gain,
    search_cqlf,
    solve_lmi_pair,
    verify_cqlf,
)
from .simulator import (
    CommandSchedule,
    Outcome,
    SimConfig,
    Trajectory,
    build_tracking_system,
    estimate_decay,
    run_tracking_scenario,
    simulate,
    simulate_batch,
    verify_forward_invariance,
)
from .problem_io import FIXTURE_NAMES, ParseError, dump_problem, load_fixture, load_problem
from .reproduce import FIGURES, AcceptanceFailure

__all__ = [
    "config",
    "CbfLabError",
    "Constraint",
    "FilterConfig",
    "HocbfChain",
    "Plant",
    "build_constraint",
    "build_hocbf_chain",
    "compute_relative_degree",
    "evaluate_chain",
    "is_hurwitz",
    "is_stabilizable",
    "make_filter_config",
    "FilterData",
    "Mode",
    "build_filter_data",
    "closed_loop_field",
    "closed_loop_field_batch",
    "filtered_control",
    "hocbf_condition",
    "ClassificationReport",
    "Verdict",
    "analyze_eigenstructure",
    "classify",
    "classify_equilibria",
    "divergence_ray",
    "invariant_zeros",
    "parity_check",
    "LmiInfeasible",
    "build_lmi_problem",
    "cqlf_singularity_gamma",
    "lqr_gain",
    "pole_placement_gain",
    "search_cqlf",
    "solve_lmi_pair",
    "verify_cqlf",
    "CommandSchedule",
    "Outcome",
    "SimConfig",
    "Trajectory",
    "build_tracking_system",
    "estimate_decay",
    "run_tracking_scenario",
    "simulate",
    "simulate_batch",
    "verify_forward_invariance",
    "FIXTURE_NAMES",
    "ParseError",
    "dump_problem",
    "load_fixture",
    "load_problem",
    "FIGURES",
    "AcceptanceFailure",
]
