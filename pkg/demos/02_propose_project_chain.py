"""Propose-and-project MCMC on a Lasso level set.

Fits a Lasso at a mid-path regularization level, freezes the level set of
the fitted coefficients, and runs the transition kernel: tangent-space
Gaussian proposals, closed-form projection back to the level set, and
volume-corrected acceptance.  Every retained sample satisfies the level-set
constraint to the projection tolerance, and the chain report summarizes
mixing and the rejection causes.
"""

import numpy as np

from nmlsc import (LassoModel, LikelihoodSpec, SamplerConfig, chain_report,
                   gen_toeplitz_data, lambda_for_k, make_likelihood_target,
                   run_chain)

data = gen_toeplitz_data(60, 80, 0.3, [3.0, -2.0, 2.0], 3.0, seed=11)
lam, fit = lambda_for_k(data, 3)
print(f"N={data.n}, P={data.p}; lambda={lam:.4f} selects k={fit.k} "
      f"actives {fit.active_set}")

model = LassoModel(data, lam)
chart = model.chart(fit)
spec = LikelihoodSpec(kind="gaussian_regression", theta0=fit.dense(data.p),
                      sigma=data.noise_sd, design=data.design)
target = make_likelihood_target(spec, chart)

# short dual-averaging pre-run picks a usable step size, then freezes it
cfg = SamplerConfig(n_samples=4000, burn_in=500, seed=3, adapt_steps=600,
                    target="likelihood_over_jacobian")
chain = run_chain(model, chart, chart.anchor(), target, cfg)

feas = np.abs(chart.A @ chain.samples.T + chart.offset[:, None]
              - chart.theta[:, None]).max()
print(f"samples kept: {len(chain)}; worst level-set residual: {feas:.2e}")
print(f"acceptance rate: {chain.acceptance_rate:.3f}")

rep = chain_report(chain, max_lag=25)
# a random-walk proposal in ~N-k effective dimensions decorrelates at O(1/d):
# the global log-target functional is the slowest-mixing summary
print(f"log-target ESS: {rep.ess:.0f} of {len(chain)} "
      f"(tangent dimension {data.n - fit.k})")
print(f"ACF(log target) first lags: {np.round(rep.acf_log_target[:5], 3)}")
print(f"rejection breakdown: {rep.rejection_breakdown}")

chain.export_csv("/tmp/nmlsc_demo_chain.csv")
print("per-step log written to /tmp/nmlsc_demo_chain.csv")
