import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from nmlsc.model import Dataset, gen_toeplitz_data, lasso_fit


@pytest.fixture(scope="session", autouse=True)
def single_thread_blas():
    """Small dense kernels: the BLAS pool costs more than it saves here."""
    with threadpool_limits(limits=1):
        yield


@pytest.fixture(scope="session")
def tiny_lasso():
    """N=3, P=2, k=1 instance with a genuinely truncating inactive constraint."""
    rng = np.random.default_rng(42)
    design = rng.standard_normal((3, 2))
    design /= np.linalg.norm(design, axis=0)
    beta0 = np.array([1.5, 0.0])
    sigma = 0.5
    y = design @ beta0 + sigma * np.array([0.1, -0.2, 0.05])
    data = Dataset(design=design, response=y, noise_sd=sigma, seed=0,
                   meta={"beta_star": beta0, "snr": 3.0, "rho": 0.0})
    lam = 0.25
    fit = lasso_fit(data, lam)
    assert fit.active_set == (0,) and fit.k == 1
    return data, lam, fit, beta0, sigma


@pytest.fixture(scope="session")
def small_dataset():
    return gen_toeplitz_data(30, 8, 0.5, [3.0, -2.0, 2.0], 3.0, seed=1)
