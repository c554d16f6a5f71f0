"""Score-matching density estimation in kernel exponential families.

A model is ``p(x) ∝ exp(f(x)) q0(x)`` with ``f`` in the RKHS of a kernel and
``q0`` a fixed base measure.  ``f`` is fitted by minimizing a regularized
empirical Fisher divergence, which never needs the normalizing constant.
"""

from ._backend import BACKEND
from .base import BaseMeasure, Custom, IsotropicGaussian, UniformBox, base_from_config
from .errors import (ConfigError, ConvergenceError, DegenerateCorrelationError, DimensionCapError,
                     EmptyInputError, FoldSizeError, InfeasibleClipError, InvalidInputError,
                     KexpfamError, NumericError, OutOfSupportError, ParseError,
                     SingularSystemError, SizeCapError, UnsupportedOrderError)
from .evaluation import (CVResult, GaussianMixture, Grid, KdeModel, TrueDensity, correlation,
                         cross_validate, fold_indices, kde_cross_validate, kde_fit,
                         kl_sup_norm_bound, quadrature_divergences, score_objective)
from .experiment import (ExperimentConfig, MethodSpec, ResultRow, Target, determinism_hash,
                         load_samples_csv, run_experiment, sample_target, save_samples_csv,
                         write_results)
from .fit import (FittedModel, ScoreSystem, assemble, eval_f, eval_grad_f, model_from_system,
                  eval_laplacian_diag_f, fit, log_unnormalized_density, solve_clipped,
                  solve_tikhonov, solve_tikhonov_reduced)
from .kernels import (DerivOrder, KernelSpec, check_kernel_derivatives, finite_diff_check,
                      gram, kernel_deriv, kernel_eval)
from .spectral import FILTERS, FilterSpec, filter_diagnostics, filter_value, solve_spectral

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
