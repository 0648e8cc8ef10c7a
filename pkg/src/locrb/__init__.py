"""Certified localized reduced basis solver for parametric parabolic diffusion."""

__version__ = "0.1.0"

from .errors import (ConfigurationError, DataError, LocrbError, NumericalError,
                     ParameterError, ParameterIncompatibleError)
from .grid import Mesh, build_mesh
from .space import DGFunction, DGSpace, dg_prolongation, interpolate, \
    nonconforming_part, oswald_interpolate
from .forms import (AffineForm, CoefficientField, ParameterSpec, assemble_affine_operator,
                    assemble_mass_and_rhs, block_mass_inverse, evaluate_at, swipdg_weights,
                    two_component_channel)
from .truth import (ConformingSpace, Trajectory, build_reference, elliptic_reconstruction,
                    riesz_representative, solve_parabolic, time_residual)
from .estimator import (ErrorEstimator, EstimatorBreakdown, NormEvaluator,
                        energy_and_dg_norm, min_theta_constants, poincare_and_ceps,
                        spacetime_dg_error)
from .reduction import (LocalBasis, ReducedModel, gram_schmidt, initialize_bases, lift,
                        lift_trajectory, load_model, local_h1_products, online_estimate,
                        project_model, save_model, solve_reduced)
from .greedy import GreedyRecord, GreedyState, greedy_step, pod_dominant_mode, run_greedy
