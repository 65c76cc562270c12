"""Numerical study of the singularly perturbed Perona-Malik energy in one dimension.

Modules
-------
profiles      closed-form staircases, cubic connections, scales
fem           C^1 Hermite cubic elements, assembly, refinement
functionals   the energy family and competitor construction
solve         nonconvex multi-start, convex and clamped-quadratic solvers
asymptotics   blow-ups, jump decompositions, staircase and cubic fits
oracles       closed-form checks of the auxiliary inequalities
cli           config-driven experiment harness
"""
from .profiles import (ALPHA0, DomainError, StaircaseKind, StaircaseParams, CubicConnectionParams,
                       JumpSet, make_scale, staircase_params, eval_staircase, cubic_connection,
                       eval_cubic_connection, lambda_from_V, j_half)
from .fem import (ContractError, NumericError, RefinementError, Mesh, HermiteFunction,
                  EnergyBreakdown, GradientVector, RefinePolicy, assemble, interpolate, refine)
from .functionals import (Kind, ForcingSpec, FunctionalSpec, eval_energy, psi_n, rescale_to_blowup,
                          build_competitor)
from .solve import (SolverOptions, SolveResult, InitCandidate, DirichletBC, init_candidates, minimize,
                    minimize_convex, minimize_clamped_quadratic, solve_staircase)
from .asymptotics import (BlowupTrace, JumpDecomposition, StaircaseFit, CubicFit, blowup,
                          jump_decomposition, fit_staircase, fit_cubic, flatness_metrics, offset_metric)
from .oracles import (optimal_clamped_cubic, check_sqrt_subadditivity, check_log_lipschitz,
                      transition_lower_bound, c_constant, optimal_transition_energy)

__version__ = "0.1.0"
