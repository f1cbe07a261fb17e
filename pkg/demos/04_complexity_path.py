"""Codelength criteria along a regularization path.

Computes the exact finite-sample complexity of the active family at each
regularization level, assembles the codelength (fit + complexity), and
compares the selected level against BIC, AIC, the asymptotic formula, and
5-fold cross-validation on held-out error.
"""

import numpy as np

from nmlsc import complexity_path, cv_select, gen_toeplitz_data, heldout_mse

data = gen_toeplitz_data(100, 200, 0.5, [3, -2, 2, -1, 1], 3.0, seed=7)
lam_max = float(np.max(np.abs(data.design.T @ data.response)))
lambdas = np.geomspace(0.02 * lam_max, 1.05 * lam_max, 30)

path = complexity_path(data, lambdas)
print(f"{'lambda':>9} {'k':>3} {'logC':>8} {'codelen':>9} {'bic':>9} {'aic':>9}")
for rec, status in zip(path.records, path.statuses):
    if rec is None:
        print(f"{'?':>9}  failed: {status}")
        continue
    print(f"{rec.lam:9.4f} {rec.k:3d} {rec.log_complexity:8.2f} "
          f"{rec.codelength:9.2f} {rec.bic:9.2f} {rec.aic:9.2f}")

cv_lam, _, _ = cv_select(data, lambdas, fold_seed=0)
test = gen_toeplitz_data(500, 200, 0.5, [3, -2, 2, -1, 1], 3.0, seed=7 + 10_000)
print("\nselected regularization levels and held-out MSE:")
for name, lam in {**path.selected, "cv_5fold": cv_lam}.items():
    mse, se = heldout_mse(data, test.design, test.response, lam)
    print(f"  {name:>15}: lambda={lam:8.4f}  heldout mse={mse:.5f} ± {se:.5f}")
