"""Cost scaling and robustness studies (reduced sizes for a quick run).

1. Step-cost growth with the sample size N (the KKT factorization is the
   cubic bottleneck) and invariance to the feature dimension P.
2. Stationary bias of the chain as a function of the projection tolerance,
   on a curved constraint where the iterative solver's stopping genuinely
   perturbs the states.
3. The dimensional growth of the complexity with log N at fixed k.
"""

from nmlsc import SamplerConfig, SphereModel, scaling_benchmark, tolerance_bias_study
from nmlsc.nml import asymptotic_slope_study

print("-- step-cost scaling (reduced grid) --")
rep = scaling_benchmark([dict(n=n, p=100, k=3) for n in (100, 200, 400)],
                        steps_per_cell=15, seed=0)
for n, p, k, mean_s, sd in rep.grid:
    print(f"  N={n:4d} P={p} k={k}: {mean_s * 1e3:7.2f} ms/step")
print(f"  fitted exponent vs N: {rep.fitted_exponent_vs_n:.2f}")

rep_p = scaling_benchmark([dict(n=100, p=p, k=5) for p in (100, 400, 1600)],
                          steps_per_cell=40, seed=0, seeds_per_cell=2,
                          min_batch_seconds=1e-2, rounds=6)
times = [r[3] for r in rep_p.grid]
print(f"  P-sweep times (ms): {[round(t * 1e3, 2) for t in times]}; "
      f"max/min = {rep_p.dimension_invariance_ratio:.3f}")

print("\n-- stationary bias vs projection tolerance (sphere, ALM) --")
model = SphereModel(6)
chart = model.chart(4.0)
cfg = SamplerConfig(n_samples=1200, burn_in=200, seed=1, step_scale=0.4)
study = tolerance_bias_study(model, chart, [1e-4, 1e-5, 1e-6, 1e-9],
                             lambda x: float(x @ x), cfg, solver="alm")
for eps, dev in study.points:
    print(f"  eps_feas={eps:.0e}: |bias| = {dev:.3e}")
print(f"  fitted linear coefficient: {study.fitted_c:.3f}")

print("\n-- complexity growth with log N at k = 2 --")
s = asymptotic_slope_study(sample_sizes=(100, 200, 400), n_seeds=10)
for n, m in zip(s.sample_sizes, s.mean_log_c):
    print(f"  N={n:4d}: mean log C = {m:7.3f}")
print(f"  fitted slope: {s.fit.slope:.3f} (dimensional prediction: {s.k / 2:.1f})")
