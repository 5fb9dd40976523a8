"""Weak KAM solutions, Hopf-Cole kernels and contraction rates for the kicked
viscous Hamilton-Jacobi equation on the torus."""

from .config import ConfigError, ExperimentConfig, load_config
from .hessian import (
    ActionPath,
    HessianAssembly,
    LogDet,
    assemble_hessian,
    build_action_path,
    det_dense,
    det_orbit_product,
    det_transfer,
    eigenvalue_interlacing_check,
    min_eigenvalue,
    perturbed_det_ratio,
)
from .markov import (
    DriftMinorizationParams,
    LyapunovEstimate,
    MarkovLayer,
    build_markov_layers,
    certify_drift,
    certify_minorization,
    hm_parameters,
    lyapunov_exponent,
    ratio_star_check,
    telescope_check,
    verify_hm_contraction,
)
from .potential import Potential
from .torus import (
    GridSpec,
    TorusField,
    TorusPoint,
    gradient_fd,
    sup_norm_mod_const,
    torus_distance,
    weighted_norm,
    weighted_norm_mod_const,
)
from .twist import (
    BackwardOrbit,
    HyperbolicData,
    PhasePoint,
    backward_orbit,
    hyperbolic_linearization,
    twist_backward,
    twist_forward,
    twist_jacobian,
)
from .variational import (
    ContractionReport,
    WeakKamSolution,
    backward_minimizer,
    contraction_report,
    generating_function,
    lax_oleinik_apply,
    periodic_action,
    semiconcavity_probe,
    solve_weak_kam,
)
from .viscous import (
    DomainPartition,
    KernelOperator,
    PartitionTrace,
    apply,
    build_domain_partition,
    build_kernel,
    laplace_hessian_crosscheck,
    partition_trace,
    stationary_log_solution,
)

__version__ = "0.1.0"
