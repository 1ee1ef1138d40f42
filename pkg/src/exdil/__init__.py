"""exdil: exciton diffusion length estimation on randomly perturbed films.

The package solves a screened diffusion equation over a thin film whose
absorbing interface fluctuates randomly, computes expected
photoluminescence either by collocation over the coefficient space or by a
perturbation expansion in the roughness size, and estimates the diffusion
length from photoluminescence curves by Newton iteration on a least-squares
misfit.
"""

__version__ = "0.1.0"

from .interface import (InterfaceModel, InterfaceSample, Interface1D,
                        ThetaMoments, UniformDist, covariance, evaluate,
                        evaluate_dz, evaluate_dzz, moments, sample)
from .fd_core import (EllipticOperator, Field2D, Grid2D, PdeCoefficients,
                      SolverError, SparseSystem, assemble, solve,
                      solution_field, one_sided_dx_at_boundary, stencil_values,
                      trapezoid_1d, trapezoid_2d)
from .forward_mapped import (DeviceConfig, DomainValidityError,
                             GenerationProfile, MappedSolution, Solution1D,
                             pl_of_sample, solve_mapped_1d, solve_mapped_2d,
                             solve_mapped_profile)
from .collocation import (MONTE_CARLO, SMOLYAK, TENSOR_GL, CollocationError,
                          ExpectationResult, QuadratureRule, build_rule,
                          expect, expect_field)
from .asymptotic import (AsymptoticBasis, PLApproximant, assemble_approximant,
                         base_operator, build_basis, expansion_grid,
                         expected_pl, sampled_pl, solve_w0, solve_w1k,
                         solve_w2jk)
from .inverse import (CENTRAL_FD, SENSITIVITY_PDE, AsymptoticForward,
                      DeviceFamily, EstimationError, EstimationTrace,
                      MappedCollocationForward, NewtonOptions,
                      OneDimensionalForward, PLCurve, derivative_plan,
                      newton_estimate, objective, objective_with_derivatives,
                      sensitivities_1d, sensitivities_mapped)
from .experiments import (ConvergenceResult, SlopeFit, TimingResult,
                          ValidationResult, convergence_study,
                          estimation_study, fit_slope,
                          generate_synthetic_curve, timing_study,
                          validation_study)
