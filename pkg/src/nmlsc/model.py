"""Sparse estimator models: data generation, Lasso and soft-threshold fits,
conservative Jacobians and the level-set charts the samplers walk on.

Conventions used throughout:
  N  ambient data dimension (rows of the design / length of the response),
  P  feature dimension (columns of the design),
  k  active dimension (number of nonzero fitted coefficients).

The Lasso objective is (1/2)||y - X theta||^2 + lam * ||theta||_1, so the
stationarity conditions read X_S^T (y - X_S theta_S) = lam * signs on the
active set and |X_j^T r| <= lam off it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ZERO_COEF = 1e-12       # coefficients below this are structural zeros
GRAM_COND_CAP = 1e12    # refuse Jacobians on worse-conditioned active Grams
DEFAULT_FIT_TOL = 1e-10


class ConfigurationError(ValueError):
    """Invalid sizes, tolerances or options."""


class SingularityError(RuntimeError):
    """Rank-deficient matrix where full rank is required."""


class SolverError(RuntimeError):
    """Iterative solver ran out of budget; carries the best residual seen."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """A regression instance: fixed design, observed response, generation info."""

    design: np.ndarray      # (N, P)
    response: np.ndarray    # (N,)
    noise_sd: float
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.design, dtype=float)
        y = np.asarray(self.response, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ConfigurationError("design must be (N, P) with response of length N")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ConfigurationError("design/response must be finite")
        if not self.noise_sd > 0:
            raise ConfigurationError("noise_sd must be positive")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "response", y)

    @property
    def n(self):
        return self.design.shape[0]

    @property
    def p(self):
        return self.design.shape[1]


@dataclass(frozen=True)
class EstimatorResult:
    """A fitted sparse coefficient vector, stored in active-set coordinates."""

    theta_hat: np.ndarray   # (k,) nonzero coefficients
    active_set: tuple       # column indices, ascending
    signs: np.ndarray       # (k,) entries of +-1
    lam: float
    kkt_residual: float

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta_hat, dtype=float))
        sg = np.atleast_1d(np.asarray(self.signs, dtype=float))
        object.__setattr__(self, "theta_hat", th)
        object.__setattr__(self, "signs", sg)
        object.__setattr__(self, "active_set", tuple(int(j) for j in self.active_set))
        if th.shape != sg.shape or len(self.active_set) != th.size:
            raise ConfigurationError("inconsistent active set / coefficient shapes")
        if th.size and np.any(np.abs(th) <= 0):
            raise ConfigurationError("theta_hat must contain only nonzeros")
        if th.size and np.any(np.sign(th) != sg):
            raise ConfigurationError("signs must match sign(theta_hat)")

    @property
    def k(self):
        return len(self.active_set)

    def dense(self, p):
        """Embed into a length-p vector with zeros off the active set."""
        out = np.zeros(p)
        if self.k:
            out[list(self.active_set)] = self.theta_hat
        return out


@dataclass(frozen=True)
class ConservativeJacobian:
    """A selected generalized Jacobian of the estimator map, k rows by N columns."""

    matrix: np.ndarray
    source: str = "frechet"   # frechet | sjo_selection | manual

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        object.__setattr__(self, "matrix", M)
        if self.source not in ("frechet", "sjo_selection", "manual"):
            raise ConfigurationError(f"unknown Jacobian source {self.source!r}")

    @property
    def k(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class LikelihoodSpec:
    """Gaussian data likelihood p(x | theta0).

    kind = "gaussian_regression": x ~ N(design @ theta0, sigma^2 I).
    kind = "gaussian_scalar":     x ~ N(theta0 * 1,       sigma^2 I).
    """

    kind: str
    theta0: np.ndarray
    sigma: float
    design: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian_regression", "gaussian_scalar"):
            raise ConfigurationError(f"unknown likelihood kind {self.kind!r}")
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")
        th = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        object.__setattr__(self, "theta0", th)
        if self.kind == "gaussian_regression":
            if self.design is None:
                raise ConfigurationError("gaussian_regression needs a design matrix")
            X = np.asarray(self.design, dtype=float)
            if X.shape[1] != th.size:
                raise ConfigurationError("theta0 length must match design columns")
            object.__setattr__(self, "design", X)
        elif th.size != 1:
            raise ConfigurationError("gaussian_scalar takes a scalar theta0")

    def mean_vector(self, n=None):
        if self.kind == "gaussian_regression":
            return self.design @ self.theta0
        if n is None:
            raise ConfigurationError("gaussian_scalar mean needs the ambient dimension")
        return np.full(n, float(self.theta0[0]))


def log_likelihood(spec, data_point):
    """Exact Gaussian log-density (full normalizing constant included)."""
    x = np.asarray(data_point, dtype=float)
    mu = spec.mean_vector(x.size)
    if mu.shape != x.shape:
        raise ConfigurationError("data point dimension does not match the likelihood")
    n = x.size
    return float(-0.5 * n * math.log(2.0 * math.pi * spec.sigma**2)
                 - 0.5 * np.sum((x - mu) ** 2) / spec.sigma**2)


def log_likelihood_batch(spec, points):
    """Vectorized log-density over rows of `points` (B, N)."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    mu = spec.mean_vector(X.shape[1])
    n = X.shape[1]
    const = -0.5 * n * math.log(2.0 * math.pi * spec.sigma**2)
    return const - 0.5 * np.sum((X - mu[None, :]) ** 2, axis=1) / spec.sigma**2


# ---------------------------------------------------------------------------
# Data generation and serialization
# ---------------------------------------------------------------------------

def gen_toeplitz_data(n, p, rho, beta_star, snr, seed):
    """Toeplitz-correlated Gaussian design with unit-L2 columns and SNR-calibrated noise.

    Rows are drawn from N(0, Sigma) with Sigma_ij = rho^|i-j| (sampled exactly by
    the AR(1) recursion), columns are then L2-normalized, and the noise level is
    set so that var(X beta*) / noise_sd^2 = snr.  With unit-norm columns the
    per-coordinate signal variance shrinks like 1/N, so noise_sd ~ 1/sqrt(N):
    this is what makes the complexity grow like (k/2) log N downstream.
    """
    beta = np.zeros(p)
    b = np.atleast_1d(np.asarray(beta_star, dtype=float))
    if n < 1 or p < 1:
        raise ConfigurationError("n and p must be positive")
    if b.size > p:
        raise ConfigurationError("beta_star longer than the number of features")
    if not 0.0 <= rho < 1.0:
        raise ConfigurationError("rho must lie in [0, 1)")
    if not snr > 0:
        raise ConfigurationError("snr must be positive")
    beta[: b.size] = b

    rng = np.random.default_rng(seed)
    X = np.empty((n, p))
    X[:, 0] = rng.standard_normal(n)
    if p > 1:
        innov = rng.standard_normal((n, p - 1))
        c = math.sqrt(1.0 - rho**2)
        for j in range(1, p):
            X[:, j] = rho * X[:, j - 1] + c * innov[:, j - 1]
    X /= np.linalg.norm(X, axis=0, keepdims=True)

    signal = X @ beta
    sig_var = float(np.var(signal))
    if sig_var <= 0:
        raise ConfigurationError("beta_star produces a zero signal; cannot calibrate SNR")
    noise_sd = math.sqrt(sig_var / snr)
    y = signal + noise_sd * rng.standard_normal(n)

    meta = {
        "rho": float(rho),
        "snr": float(snr),
        "beta_star": beta.copy(),
        "true_support": tuple(int(j) for j in np.flatnonzero(np.abs(beta) > 0)),
    }
    return Dataset(design=X, response=y, noise_sd=noise_sd, seed=int(seed), meta=meta)


def save_dataset(dataset, csv_path, meta_path):
    """CSV with header col_0..col_{P-1},y plus a key=value metadata sidecar."""
    csv_path, meta_path = Path(csv_path), Path(meta_path)
    p = dataset.p
    header = [f"col_{j}" for j in range(p)] + ["y"]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.design[i]]
            row.append(repr(float(dataset.response[i])))
            writer.writerow(row)
    beta = dataset.meta.get("beta_star", np.zeros(p))
    lines = [
        f"n={dataset.n}",
        f"p={p}",
        f"rho={dataset.meta.get('rho', 0.0)}",
        f"snr={dataset.meta.get('snr', 0.0)}",
        f"seed={dataset.seed}",
        "beta_star=" + ",".join(repr(float(v)) for v in np.asarray(beta)),
    ]
    meta_path.write_text("\n".join(lines) + "\n")


def load_dataset(csv_path, meta_path):
    csv_path, meta_path = Path(csv_path), Path(meta_path)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    arr = np.asarray(rows)
    p = len(header) - 1
    if header[-1] != "y" or header[:p] != [f"col_{j}" for j in range(p)]:
        raise ConfigurationError(f"unexpected dataset header in {csv_path}")
    X, y = arr[:, :p], arr[:, p]
    kv = {}
    for line in meta_path.read_text().splitlines():
        line = line.strip()
        if line:
            key, _, val = line.partition("=")
            kv[key] = val
    beta = np.array([float(v) for v in kv["beta_star"].split(",")]) if kv.get("beta_star") else np.zeros(p)
    snr = float(kv.get("snr", 1.0))
    signal = X @ beta
    sig_var = float(np.var(signal))
    noise_sd = math.sqrt(sig_var / snr) if sig_var > 0 and snr > 0 else 1.0
    meta = {
        "rho": float(kv.get("rho", 0.0)),
        "snr": snr,
        "beta_star": beta,
        "true_support": tuple(int(j) for j in np.flatnonzero(np.abs(beta) > 0)),
    }
    return Dataset(design=X, response=y, noise_sd=noise_sd, seed=int(kv.get("seed", 0)), meta=meta)


# ---------------------------------------------------------------------------
# Lasso solver (cyclic coordinate descent, KKT-residual stopping)
# ---------------------------------------------------------------------------

def _result_from_dense(w, lam, kkt_res):
    active = np.flatnonzero(np.abs(w) > ZERO_COEF)
    return EstimatorResult(
        theta_hat=w[active],
        active_set=tuple(int(j) for j in active),
        signs=np.sign(w[active]),
        lam=float(lam),
        kkt_residual=float(kkt_res),
    )


def _kkt_residual(X, y, w, lam):
    corr = X.T @ (y - X @ w)
    active = np.abs(w) > ZERO_COEF
    res = 0.0
    if np.any(active):
        res = float(np.max(np.abs(corr[active] - lam * np.sign(w[active]))))
    if np.any(~active):
        res = max(res, float(np.max(np.maximum(np.abs(corr[~active]) - lam, 0.0))))
    return res


def lasso_solve(X, y, lam, tol=DEFAULT_FIT_TOL, w0=None, max_sweeps=100_000):
    """Solve the Lasso at an arbitrary response vector; returns an EstimatorResult."""
    if not lam > 0:
        raise ConfigurationError("lambda must be positive")
    if not tol > 0:
        raise ConfigurationError("tol must be positive")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    col_sq = np.einsum("ij,ij->j", X, X)
    w = np.zeros(p) if w0 is None else np.array(w0, dtype=float)
    r = y - X @ w
    best = np.inf
    for sweep in range(max_sweeps):
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            old = w[j]
            rho_j = X[:, j] @ r + col_sq[j] * old
            new = math.copysign(max(abs(rho_j) - lam, 0.0), rho_j) / col_sq[j]
            if new != old:
                r += X[:, j] * (old - new)
                w[j] = new
        res = _kkt_residual(X, y, w, lam)
        best = min(best, res)
        if res <= tol:
            return _result_from_dense(w, lam, res)
    raise SolverError(f"coordinate descent did not reach tol={tol}", residual=best)


def lasso_fit(data, lam, tol=DEFAULT_FIT_TOL):
    """Lasso fit at the dataset's observed response."""
    return lasso_solve(data.design, data.response, lam, tol=tol)


def lasso_solve_batch(X, Y, lam, tol=1e-9, max_sweeps=2000):
    """Coordinate descent over a batch of responses at once.

    Y is (B, N); returns the dense coefficient matrix W of shape (B, P).
    Used by the Monte Carlo density estimators, which refit at 1e5+ draws.
    """
    X = np.asarray(X, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n, p = X.shape
    bsz = Y.shape[0]
    col_sq = np.einsum("ij,ij->j", X, X)
    W = np.zeros((bsz, p))
    R = Y.copy()
    for sweep in range(max_sweeps):
        delta = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            old = W[:, j].copy()
            rho_j = R @ X[:, j] + col_sq[j] * old
            new = np.sign(rho_j) * np.maximum(np.abs(rho_j) - lam, 0.0) / col_sq[j]
            step = old - new
            if np.any(step != 0.0):
                R += np.outer(step, X[:, j])
                W[:, j] = new
                delta = max(delta, float(np.max(np.abs(step))))
        if delta <= tol * 0.1:
            corr = R @ X
            act = np.abs(W) > ZERO_COEF
            err_a = np.abs(corr - lam * np.sign(W)) * act
            err_i = np.maximum(np.abs(corr) - lam, 0.0) * ~act
            if float(np.max(err_a + err_i)) <= tol:
                break
    return W


def lasso_jacobian(data, fit):
    """Derivative of the Lasso map w.r.t. the response on the fit's smooth piece.

    With active design X_S this is (X_S^T X_S)^{-1} X_S^T, the classical
    derivative wherever the active set and signs are locally constant.
    """
    if fit.k == 0:
        return ConservativeJacobian(matrix=np.zeros((0, data.n)), source="frechet")
    Xs = data.design[:, list(fit.active_set)]
    gram = Xs.T @ Xs
    if np.linalg.cond(gram) > GRAM_COND_CAP:
        raise SingularityError("active Gram matrix is numerically rank deficient")
    G = np.linalg.solve(gram, Xs.T)
    return ConservativeJacobian(matrix=G, source="frechet")


def jacobian_factor(jac):
    """sqrt(det(G G^T)) evaluated as the product of singular values of G."""
    G = jac.matrix if isinstance(jac, ConservativeJacobian) else np.atleast_2d(np.asarray(jac, dtype=float))
    if G.shape[0] == 0:
        return 1.0
    svals = np.linalg.svd(G, compute_uv=False)
    if svals[-1] <= max(G.shape) * np.finfo(float).eps * svals[0] or svals[-1] == 0.0:
        raise SingularityError("rank-deficient Jacobian: zero singular value")
    return float(np.prod(svals))


# ---------------------------------------------------------------------------
# Soft-threshold toy estimator
# ---------------------------------------------------------------------------

def soft_threshold_estimate(x, lam):
    """1-D toy estimator theta = S_lam(mean(x)); exact kinks classify as k = 0."""
    if not lam > 0:
        raise ConfigurationError("lambda must be positive")
    x = np.asarray(x, dtype=float)
    m = float(np.mean(x))
    mag = abs(m) - lam
    if mag > 0:
        theta = math.copysign(mag, m)
        return EstimatorResult(theta_hat=np.array([theta]), active_set=(0,),
                               signs=np.array([math.copysign(1.0, m)]),
                               lam=float(lam), kkt_residual=0.0)
    return EstimatorResult(theta_hat=np.zeros(0), active_set=(), signs=np.zeros(0),
                           lam=float(lam), kkt_residual=0.0)


# ---------------------------------------------------------------------------
# Level-set charts: the constraint view the projection solvers and the
# sampler operate on.  A chart fixes a smooth extension m(x) of the estimator
# coordinates around one level set, plus the inequality region where that
# extension actually coincides with the estimator.
# ---------------------------------------------------------------------------

class LevelSetChart:
    """Base interface.  Subclasses define value/jacobian/in_region/anchor."""

    affine = False
    n = None       # ambient dimension
    k = None       # chart dimension
    theta = None   # (k,) level

    def value(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def curvature(self, x, multipliers):
        """sum_i lambda_i H_i, the constraint part of the KKT Hessian (None = 0)."""
        return None

    def in_region(self, x):
        return True

    def in_region_batch(self, X):
        return np.array([self.in_region(row) for row in np.atleast_2d(X)])

    def residual(self, x):
        return self.value(x) - self.theta

    def anchor(self):
        raise NotImplementedError


class AffineChart(LevelSetChart):
    """Level set {x : A x + c = theta}, optionally truncated by a region test."""

    affine = True
    region_is_trivial = True   # no inequality truncation unless a subclass adds one

    def __init__(self, A, offset, theta):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.offset = np.atleast_1d(np.asarray(offset, dtype=float))
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float))
        self.k, self.n = self.A.shape

    def value(self, x):
        return self.A @ np.asarray(x, dtype=float) + self.offset

    def jacobian(self, x):
        return self.A

    def anchor(self):
        # minimum-norm solution of A x = theta - offset
        rhs = self.theta - self.offset
        return self.A.T @ np.linalg.solve(self.A @ self.A.T, rhs)


class LassoLevelSet(AffineChart):
    """Lasso level set of theta' within a fixed active-set/sign region.

    The affine part is X_S^T x = X_S^T X_S theta' + lam * signs; the region is
    the inactive-feature band |X_j^T (x - X_S theta')| <= lam together with the
    sign pattern of theta'.
    """

    def __init__(self, data, active_set, signs, theta_prime, lam):
        self.data = data
        self.active_set = tuple(int(j) for j in active_set)
        self.signs = np.atleast_1d(np.asarray(signs, dtype=float))
        self.lam = float(lam)
        X = data.design
        cols = list(self.active_set)
        self.Xs = X[:, cols]
        self.gram = self.Xs.T @ self.Xs
        if np.linalg.cond(self.gram) > GRAM_COND_CAP:
            raise SingularityError("active Gram matrix is numerically rank deficient")
        self._gram_inv = np.linalg.inv(self.gram)
        inactive = [j for j in range(data.p) if j not in self.active_set]
        self.inactive = tuple(inactive)
        self.Xi = X[:, inactive]
        G = self._gram_inv @ self.Xs.T
        offset = -self._gram_inv @ (self.lam * self.signs)
        super().__init__(A=G, offset=offset, theta=theta_prime)
        theta = np.atleast_1d(np.asarray(theta_prime, dtype=float))
        if theta.size and np.any(np.sign(theta) != self.signs):
            raise ConfigurationError("theta_prime signs do not match the chart signs")
        self._fit_center = self.Xs @ theta

    @classmethod
    def from_fit(cls, data, fit, theta_prime=None):
        theta = fit.theta_hat if theta_prime is None else theta_prime
        return cls(data, fit.active_set, fit.signs, theta, fit.lam)

    @property
    def region_is_trivial(self):
        return self.Xi.shape[1] == 0

    def in_region(self, x):
        return bool(self.in_region_batch(np.asarray(x)[None, :])[0])

    def in_region_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ok = np.ones(X.shape[0], dtype=bool)
        if self.Xi.shape[1]:
            corr = (X - self._fit_center) @ self.Xi
            ok &= np.max(np.abs(corr), axis=1) <= self.lam * (1 + 1e-12) + 1e-12
        return ok

    def inactive_corr(self, x):
        """X_j^T (x - X_S theta') for inactive j; the one O(NP) product per point."""
        if not self.Xi.shape[1]:
            return np.zeros(0)
        return self.Xi.T @ (np.asarray(x, dtype=float) - self._fit_center)

    def in_region_from_corr(self, corr):
        if corr.size == 0:
            return True
        return bool(np.max(np.abs(corr)) <= self.lam * (1 + 1e-12) + 1e-12)

    def inactive_slacks(self, x, corr=None):
        """lam - |X_j^T (x - X_S theta')| for inactive j; negative = violated."""
        if not self.Xi.shape[1]:
            return np.zeros(0)
        if corr is None:
            corr = self.inactive_corr(x)
        return self.lam - np.abs(corr)

    def anchor(self):
        # conditional-mean anchor: level point whose residual is the ridge offset
        return self._fit_center + self.Xs @ (self._gram_inv @ (self.lam * self.signs))


class MeanHyperplane(AffineChart):
    """Soft-threshold toy level set {x : mean(x) = theta' + lam*sign(theta')}."""

    def __init__(self, n, lam, theta_prime):
        t = float(np.atleast_1d(theta_prime)[0])
        if t == 0.0:
            raise ConfigurationError("theta' = 0 indexes the flat piece, not a hyperplane")
        self.lam = float(lam)
        self.sign = math.copysign(1.0, t)
        A = np.full((1, n), 1.0 / n)
        super().__init__(A=A, offset=np.array([-self.lam * self.sign]), theta=np.array([t]))

    def anchor(self):
        return np.full(self.n, self.theta[0] + self.lam * self.sign)


class SphereLevelSet(LevelSetChart):
    """Quadratic benchmark constraint m(x) = ||x||^2 (k = 1, genuinely curved)."""

    def __init__(self, n, level):
        self.n = int(n)
        self.k = 1
        self.theta = np.array([float(level)])
        if not self.theta[0] > 0:
            raise ConfigurationError("sphere level must be positive")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([x @ x])

    def jacobian(self, x):
        return 2.0 * np.asarray(x, dtype=float)[None, :]

    def curvature(self, x, multipliers):
        return 2.0 * float(multipliers[0]) * np.eye(self.n)

    def anchor(self):
        a = np.zeros(self.n)
        a[0] = math.sqrt(self.theta[0])
        return a


# ---------------------------------------------------------------------------
# Estimator models: bundle the estimator map, its piecewise Jacobians and
# chart construction for the oracle / sampler layers.
# ---------------------------------------------------------------------------

class SoftThresholdModel:
    """theta(x) = S_lam(mean(x)) on R^N."""

    def __init__(self, n, lam):
        self.n = int(n)
        self.lam = float(lam)
        self._row = np.full((1, n), 1.0 / n)

    @property
    def ambient_dim(self):
        return self.n

    def estimate(self, x):
        return soft_threshold_estimate(x, self.lam)

    def estimate_batch(self, X):
        """Returns (theta values (B,), active flags (B,)) for rows of X."""
        m = np.mean(np.atleast_2d(X), axis=1)
        mag = np.abs(m) - self.lam
        active = mag > 0
        theta = np.where(active, np.sign(m) * np.maximum(mag, 0.0), 0.0)
        return theta, active

    def chart(self, theta_prime):
        return MeanHyperplane(self.n, self.lam, theta_prime)

    def chart_jacobian(self, x, chart=None):
        """Frechet derivative of the scalar estimator at x, with a piece label."""
        m = float(np.mean(x))
        if abs(m) > self.lam:
            label = "active+" if m > 0 else "active-"
            return self._row.copy(), label
        return np.zeros((1, self.n)), "flat"


class LassoModel:
    """Lasso estimator map y -> theta_hat(y) at a fixed design and lambda."""

    def __init__(self, data, lam, tol=DEFAULT_FIT_TOL):
        self.data = data
        self.lam = float(lam)
        self.tol = float(tol)

    @property
    def ambient_dim(self):
        return self.data.n

    def estimate(self, y):
        return lasso_solve(self.data.design, y, self.lam, tol=self.tol)

    def chart(self, fit, theta_prime=None):
        return LassoLevelSet.from_fit(self.data, fit, theta_prime)

    def chart_jacobian(self, y, chart):
        """Derivative of the chart coordinates (theta_S for the chart's S) at y.

        Refits at y; coordinates active there contribute their row of the local
        classical derivative, coordinates inactive at y contribute zero rows.
        """
        fit = lasso_solve(self.data.design, y, self.lam, tol=max(self.tol, 1e-9))
        rows = np.zeros((len(chart.active_set), self.data.n))
        if fit.k:
            Xs = self.data.design[:, list(fit.active_set)]
            gram = Xs.T @ Xs
            Gy = np.linalg.solve(gram, Xs.T)
            pos = {j: i for i, j in enumerate(fit.active_set)}
            for out_i, j in enumerate(chart.active_set):
                if j in pos:
                    rows[out_i] = Gy[pos[j]]
        label = (fit.active_set, tuple(int(s) for s in fit.signs))
        return rows, label

    def jacobian_sampler(self, x0, chart, eps, corr0=None):
        """Fast per-sample Jacobian evaluation for points inside B(x0, eps).

        Precomputes the inactive-constraint slacks at x0 once (O(NP), or reuses
        a caller-supplied correlation vector); ball samples then only re-examine
        constraints whose slack could flip within the ball (unit-norm columns
        give Lipschitz constant ~1 per constraint).  Falls back to a full refit
        when anything is ambiguous.
        """
        slacks = chart.inactive_slacks(x0, corr=corr0)
        margin = 4.0 * eps
        risky = np.flatnonzero(slacks < margin) if slacks.size else np.zeros(0, dtype=int)
        Xi_risky = chart.Xi[:, risky] if risky.size else None
        row_norms = np.linalg.norm(chart.A, axis=1)
        coord0 = np.abs(chart.value(x0))
        # chart signs cannot flip inside the ball when every active coordinate
        # clears its Lipschitz bound; inactive slacks move by at most eps per
        # unit-norm column, so only the risky ones need a per-sample check
        signs_safe = bool(np.all(coord0 > margin * row_norms)) if coord0.size else True
        base_label = (chart.active_set, tuple(int(s) for s in chart.signs))
        fit_center = chart._fit_center

        def at(x):
            if signs_safe:
                if Xi_risky is None:
                    return chart.A, base_label
                corr = Xi_risky.T @ (x - fit_center)
                if np.all(np.abs(corr) <= chart.lam):
                    return chart.A, base_label
            return self.chart_jacobian(x, chart)

        return at


class LinearGaussianModel:
    """Unpenalized least-squares reference model (smooth everywhere, k = P)."""

    def __init__(self, design):
        X = np.asarray(design, dtype=float)
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise SingularityError("design must have full column rank")
        self.design = X
        self.gram = X.T @ X
        self._G = np.linalg.solve(self.gram, X.T)

    @property
    def ambient_dim(self):
        return self.design.shape[0]

    def estimate(self, y):
        theta = self._G @ np.asarray(y, dtype=float)
        return EstimatorResult(theta_hat=theta,
                               active_set=tuple(range(self.design.shape[1])),
                               signs=np.sign(theta), lam=0.0, kkt_residual=0.0)

    def estimate_batch(self, Y):
        return np.atleast_2d(Y) @ self._G.T

    def chart(self, theta_prime):
        offset = np.zeros(self.design.shape[1])
        return AffineChart(A=self._G, offset=offset, theta=theta_prime)

    def chart_jacobian(self, y, chart=None):
        return self._G.copy(), "smooth"


class SphereModel:
    """m(x) = ||x||^2 wrapped as a (smooth, nonlinear) one-parameter model."""

    def __init__(self, n):
        self.n = int(n)

    @property
    def ambient_dim(self):
        return self.n

    def estimate(self, x):
        v = float(np.asarray(x) @ np.asarray(x))
        return EstimatorResult(theta_hat=np.array([v]), active_set=(0,),
                               signs=np.array([1.0]), lam=0.0, kkt_residual=0.0)

    def chart(self, level):
        return SphereLevelSet(self.n, float(np.atleast_1d(level)[0]))

    def chart_jacobian(self, x, chart=None):
        return 2.0 * np.asarray(x, dtype=float)[None, :], "smooth"
