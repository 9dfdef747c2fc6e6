"""Newton-type methods for generalized equations under disturbances.

Box-constrained generalized equations, Josephy-Newton and multistep
iterations, SQP and augmented Lagrangian instances, and estimators for
input-to-state stability gains from iterate traces.
"""

from .disturbances import DisturbanceSequence, parse_disturbance
from .errors import (
    ConfigError,
    DimensionMismatch,
    DimensionTooLarge,
    InsufficientData,
    IssNewtonError,
    MaxIterExceeded,
    NonuniqueSolution,
    SingularPattern,
    SolverError,
)
from .geneq import (
    GeneralizedEquation,
    Linearization,
    NewtonConfig,
    Trace,
    gradient_perturbed_step,
    josephy_newton_step,
    run_newton,
)
from .geometry import Box, NormalConeCertificate, natural_residual, normal_cone_contains, project_box
from .iss import (
    IssEstimate,
    SolutionMapProbe,
    ball_containment,
    estimate_iss_gains,
    fit_quadratic_rate,
    probe_solution_map,
)
from .multistep import (
    Inexactness,
    MultistepConfig,
    MultistepProblem,
    inner_solve,
    outer_step,
    run_multistep,
)
from .nlp import (
    AlmConfig,
    HessianApprox,
    NlpProblem,
    SqpConfig,
    alm_inner_solve,
    assemble_kkt,
    broyden_update,
    kkt_equation,
    kkt_residual,
    licq_check,
    method_linearization,
    run_alm,
    run_linearized,
    run_sqp,
    sqp_step,
)
from .subproblem import MixedAvi, estimate_kappa, solve_avi_enumerate, solve_avi_semismooth

__version__ = "0.1.0"
