"""NML stochastic complexity for sparse non-smooth estimators.

Level-set geometry of sparse estimators (Lasso, soft-threshold), a
propose-and-project MCMC sampler over those level sets, closed-form and
Monte Carlo estimators of the estimator's pushforward density, and the
resulting codelength criteria along a regularization path.
"""

from .model import (ConfigurationError, ConservativeJacobian, Dataset,
                    EstimatorResult, LassoLevelSet, LassoModel, LikelihoodSpec,
                    LinearGaussianModel, MeanHyperplane, SingularityError,
                    SoftThresholdModel, SolverError, SphereLevelSet, SphereModel,
                    gen_toeplitz_data, jacobian_factor, lasso_fit,
                    lasso_jacobian, lasso_solve, load_dataset, log_likelihood,
                    save_dataset, soft_threshold_estimate)
from .oracle import (OracleConfig, OracleFailure, TangentFrame, gtp, sjo_gs,
                     stca, tangent_basis)
from .projection import (KKTMatrix, ProjectionConfig, ProjectionResult,
                         SingularKKTError, affine_projection, kkt_matrix,
                         lasso_affine_projection, project, project_alm,
                         project_newton, projection_jacobian)
from .sampler import (Chain, ChainState, SamplerConfig, StepInfo,
                      hausdorff_uniform_target, init_state,
                      make_likelihood_target, ppmh_step, run_chain)
from .nml import (ComplexityConfig, ComplexityRecord, DensityEstimate,
                  PathResult, SlopeFit, asymptotic_slope_check,
                  asymptotic_slope_study, bias_diagnostic, complexity_path,
                  cv_select, heldout_mse, inner_density_ambient_is,
                  inner_density_analytic_affine, inner_density_mcmc_bridge,
                  inner_density_thickened, stochastic_complexity_local)
from .diagnostics import (ChainReport, ScalingReport, acf, chain_report, ess,
                          lambda_for_k, scaling_benchmark, tolerance_bias_study)

__version__ = "0.1.0"
