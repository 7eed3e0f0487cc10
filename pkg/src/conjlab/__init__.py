"""Numerical linearization maps between a nonautonomous linear system and its perturbation.

Typical use::

    from conjlab import get_entry, H_map, G_map
    problem = get_entry("S1").problem()
    H_map(problem, 1.0, [2.0]).value
"""
import sys

from .catalog import CatalogEntry, Expected, get_entry, list_entries
from .conjugacy import (
    ConjugacyProblem,
    ConjugacyResult,
    ContractionError,
    ConvergenceError,
    G_map,
    G_map_via_origin,
    H_map,
    HypothesisWarning,
    apply_T,
    check_equivalence,
    w_star,
    z_star,
)
from .dichotomy import (
    ConfigurationError,
    DichotomySpec,
    VerificationReport,
    sufficient_conditions,
    greens_operator,
    projector_at,
    verify_c1,
    verify_c2_c3,
    verify_c5,
)
from .flows import (
    CapabilityError,
    DomainError,
    IntegrationError,
    LinearFlow,
    LinearSystemSpec,
    NonlinearitySpec,
    Trajectory,
    first_variation,
    second_variation,
    solve_nonlinear,
    transition_matrix,
)
from .settings import DEFAULT, Settings
from .smoothness import (
    BoundLedger,
    SingularityError,
    d2w_star,
    dG,
    dH,
    dw_star,
    second_derivative_bound,
    verify_second_order_condition,
)

__version__ = "0.1.0"

__all__ = [n for n, v in list(globals().items()) if not n.startswith("_") and not isinstance(v, type(sys))]
