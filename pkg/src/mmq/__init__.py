"""Markov-modulated infinite-server queueing networks.

Exact event-driven simulation of modulated networks, their fluid and
diffusion limits, and a statistical harness that verifies the limit
theorems at finite scale.
"""
from . import errors
from .config import RunConfig, parse_config, parse_config_dict, serialize_config
from .ctmc import (
    ChainPath,
    ChainSummary,
    GeneratorSpec,
    chain_summary,
    deviation_matrix,
    modulation_covariance,
    occupation_deviation,
    sample_chain_path,
    stationary_distribution,
    validate_generator,
)
from .limits import (
    FluidSolution,
    OUMoments,
    expm_fixed,
    fluid_limit,
    integral_map_H,
    ou_diffusion,
    ou_drift,
    ou_moments,
    sample_ou_path,
)
from .network import (
    AveragedRates,
    Model3Spec,
    NetworkSpec,
    RoutingView,
    averaged_rates,
    drift_matrix,
    reduce_model3,
    routing_view,
    split_arrival_classes,
    validate_network,
)
from .replication import resolve_workers, run_replications, substreams
from .simulate import (
    DecompositionPaths,
    ScaledSystem,
    TrajectoryBundle,
    beta_exponent,
    build_scaled_system,
    centered_scaled_path,
    decompose,
    initial_condition,
    simulate,
    uniform_grid,
)
from .verify import (
    CriterionResult,
    VerificationReport,
    verify_diffusion,
    verify_equivalence,
    verify_fluid,
    verify_model3,
    verify_occupation,
)

__version__ = "0.1.0"
