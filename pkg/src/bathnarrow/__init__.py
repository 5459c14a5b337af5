"""Central-spin bath simulation with adaptive Bayesian narrowing."""

from .bathgen import (
    BathGenerationError,
    BathSpec,
    PhysicalConstants,
    diamond_lattice_sites,
    hyperfine_tensor,
    nuclear_coupling_tensor,
    sample_bath,
    secular_correction,
)
from .bayes import (
    EstimatorError,
    FourierDistribution,
    estimate_mean,
    evaluate,
    holevo_sigma_az,
    holevo_variance,
    init_prior,
    likelihood,
    update,
)
from .controller import (
    AliasingError,
    MeasurementRecord,
    ProtocolConfig,
    ProtocolTrace,
    ScheduleSegment,
    run_adaptive,
    run_nonadaptive,
    run_refocus_schedule,
    select_k,
    select_phase,
)
from .qsim import (
    BathState,
    ConditionalHamiltonians,
    HyperfineDistribution,
    RamseyOutcome,
    SimulationError,
    T2FitError,
    build_hamiltonians,
    cluster_counterexample,
    fit_t2,
    free_evolve,
    hyperfine_distribution,
    narrowing_factor,
    outcome_probability,
    propagator,
    ramsey_kraus,
    ramsey_measure,
    ramsey_signal,
    zero_intercluster,
)

__version__ = "0.1.0"
