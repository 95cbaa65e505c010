"""Interpolatory model order reduction with exact and inexact solves.

Subpackages follow the pipeline: full-order systems (lti_core), shared dense
primitives (numerics), system norms (system_norms), interpolation bases and
projection (interpolation), iterative/Petrov-Galerkin solvers
(inexact_solvers), forward and backward error analysis (forward_error,
backward_error), H2-optimal reduction (h2opt_irka), Loewner structure
(loewner), and the experiment harness (bench_cli).
"""

from . import errors
from .backward_error import (
    BackwardPerturbation,
    backward_h2_bound,
    build_f2r,
    check_pg_compatibility,
    f2r_frobenius_bound,
    perturbed_system,
    verify_backward_interpolation,
)
from .forward_error import (
    SkewProjectors,
    condition_numbers,
    global_hinf_bound,
    local_bounds,
    subspace_perturbation_bounds,
)
from .h2opt_irka import (
    H2ErrorTracker,
    IrkaResult,
    IrkaState,
    inexact_irka,
    init_shifts,
    irka,
    optimality_residuals,
)
from .inexact_solvers import (
    PGSpaces,
    SolveReport,
    SolverConfig,
    bicg_dual,
    gmres,
    pg_subspace_solve,
    shared_pg_basis_build,
)
from .interpolation import (
    InterpolationBasis,
    InterpolationData,
    ReducedModel,
    build_bases_exact,
    build_bases_inexact,
    project,
    verify_interpolation,
)
from .loewner import (
    LoewnerPair,
    LoewnerSamples,
    build_loewner,
    build_loewner_from_samples,
    sigma_minus_qb_structure,
    verify_inexact_loewner,
    verify_mayo,
)
from .lti_core import (
    CoprimeRealization,
    DelaySystem,
    DescriptorSystem,
    as_coprime,
    delay_as_coprime,
    delay_heat_surrogate,
    eval_transfer,
    eval_transfer_derivative,
    kinv_norm,
    load_system,
    poles,
    random_stable_descriptor,
    save_system,
)
from .numerics import (
    Subspace,
    lyapunov_solve,
    min_singular_scaled,
    oblique_projector_norm,
    subspace_angle_sin,
)
from .system_norms import (
    FrequencyGrid,
    difference_coprime,
    h2_norm_descriptor,
    h2_norm_quadrature,
    hinf_norm,
    system_error,
)

__version__ = "0.1.0"
