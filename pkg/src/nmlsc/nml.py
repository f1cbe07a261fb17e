"""Inner level-set densities and the stochastic-complexity assembly.

f(theta') is the density of the estimator at theta' — the Hausdorff integral
of likelihood/Jacobian-factor over the level set.  Four estimators of it are
provided: a closed form on affine charts (exact up to region-mass Monte
Carlo), kernel-mollified ambient importance sampling, the thickened-slab
estimator (scalar charts), and chain + bridge normalization.  The complexity
at a given regularization level integrates the diagonal density f_{theta'}
(theta') over a box in the active chart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .model import (ConfigurationError, LassoLevelSet, LikelihoodSpec,
                    jacobian_factor, lasso_fit, lasso_solve, lasso_solve_batch,
                    log_likelihood_batch, ZERO_COEF)
from .oracle import _nullspace
from .sampler import SamplerConfig, make_likelihood_target, run_chain


class InefficiencyError(RuntimeError):
    """Rejection sampler acceptance fell below the usable floor."""


@dataclass(frozen=True)
class DensityEstimate:
    value: float
    std_err: float
    method: str        # mcmc_bridge | ambient_is | thickened | analytic_affine
    n_used: int
    bandwidth_or_delta: float | None = None
    status: str = "ok"
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ComplexityRecord:
    lam: float
    k: int
    log_complexity: float
    log_complexity_se: float
    nll_fit: float
    codelength: float
    bic: float
    aic: float
    asymptotic_nml: float

    def __post_init__(self):
        if np.isfinite(self.log_complexity):
            expected = self.nll_fit + self.log_complexity
            if not (self.codelength == expected):
                raise ConfigurationError("codelength must equal nll_fit + log_complexity")


@dataclass
class PathResult:
    records: list              # ComplexityRecord per successful lambda
    lambdas: np.ndarray        # all requested lambdas, ascending
    statuses: list             # per-lambda "ok" or error text
    selected: dict             # criterion -> selected lambda
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Chart coordinate extraction (batched) for the Monte Carlo estimators
# ---------------------------------------------------------------------------

def chart_coords_batch(model, chart, X):
    """Chart coordinates of the estimator at each row of X plus a region match flag.

    A row matches when the refitted support and signs equal the chart's, i.e.
    the point lies in the chart's smooth piece.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    name = type(model).__name__
    if name == "SoftThresholdModel":
        theta, active = model.estimate_batch(X)
        sign = math.copysign(1.0, chart.theta[0])
        match = active & (np.sign(theta) == sign)
        return theta[:, None], match
    if name == "LinearGaussianModel":
        coords = model.estimate_batch(X)
        return coords, np.ones(X.shape[0], dtype=bool)
    if name == "LassoModel":
        W = lasso_solve_batch(model.data.design, X, model.lam,
                              tol=max(model.tol, 1e-9))
        S = list(chart.active_set)
        inactive = [j for j in range(model.data.p) if j not in chart.active_set]
        act = np.abs(W[:, S]) > ZERO_COEF if S else np.ones((X.shape[0], 0), dtype=bool)
        match = np.all(act, axis=1)
        if S:
            match &= np.all(np.sign(W[:, S]) == chart.signs[None, :], axis=1)
        if inactive:
            match &= np.all(np.abs(W[:, inactive]) <= ZERO_COEF, axis=1)
        return W[:, S], match
    # generic fallback: per-row estimate()
    coords = np.zeros((X.shape[0], chart.k))
    match = np.zeros(X.shape[0], dtype=bool)
    for i, row in enumerate(X):
        fit = model.estimate(row)
        if fit.active_set == tuple(chart.active_set) and np.all(fit.signs == chart.signs):
            coords[i] = fit.theta_hat
            match[i] = True
    return coords, match


# ---------------------------------------------------------------------------
# Closed form on affine charts
# ---------------------------------------------------------------------------

def _gaussian_spec_check(spec):
    if spec.kind not in ("gaussian_regression", "gaussian_scalar"):
        raise ConfigurationError("analytic affine densities require a Gaussian likelihood")


def region_mass(chart, lik_spec, n_mass, rng):
    """Gaussian mass of the chart's inequality region on the affine slice.

    Samples the conditional law of the data given the level (spherical
    Gaussian conditioned on an affine constraint) and counts region hits.
    """
    mu0 = lik_spec.mean_vector(chart.n)
    A = chart.A
    r = chart.residual(mu0)
    x_c = mu0 - A.T @ np.linalg.solve(A @ A.T, r)
    d = chart.n - chart.k
    if getattr(chart, "region_is_trivial", False):
        return 1.0, 0.0, x_c
    if d == 0:
        m = float(chart.in_region(x_c))
        return m, 0.0, x_c
    B = _nullspace(A, chart.n)
    U = lik_spec.sigma * rng.standard_normal((n_mass, d))
    pts = x_c[None, :] + U @ B.T
    hits = chart.in_region_batch(pts)
    m = float(np.mean(hits))
    se = math.sqrt(max(m * (1.0 - m), 0.0) / n_mass)
    return m, se, x_c


def inner_density_analytic_affine(chart, lik_spec, n_mass=2048, rng=None,
                                  mass=None):
    """Exact Hausdorff-integral density on an affine chart.

    The Gaussian integral over the affine slice is closed-form; the
    inequality-region truncation is estimated by Monte Carlo (pass `mass` as
    a precomputed (value, se) pair to share draws across quadrature nodes).
    """
    if not chart.affine:
        raise ConfigurationError("analytic density requires an affine chart")
    _gaussian_spec_check(lik_spec)
    sigma = lik_spec.sigma
    mu0 = lik_spec.mean_vector(chart.n)
    A = chart.A
    r = chart.residual(mu0)
    z = np.linalg.solve(A @ A.T, r)
    x_c = mu0 - A.T @ z
    d2 = float(np.sum((x_c - mu0) ** 2))
    k = chart.k
    log_hausdorff = -0.5 * k * math.log(2.0 * math.pi * sigma**2) - 0.5 * d2 / sigma**2
    J = jacobian_factor(A)
    if mass is not None:
        m, m_se = mass
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        m, m_se, _ = region_mass(chart, lik_spec, n_mass, rng)
    log_value = log_hausdorff - math.log(J) + (math.log(m) if m > 0 else -np.inf)
    value = math.exp(log_hausdorff) / J * m
    se = math.exp(log_hausdorff) / J * m_se
    return DensityEstimate(value=value, std_err=se, method="analytic_affine",
                           n_used=0 if mass is not None else n_mass,
                           diagnostics={"log_value": log_value, "mass": m,
                                        "mass_se": m_se, "anchor_distance": math.sqrt(d2)})


# ---------------------------------------------------------------------------
# Ambient importance sampling with kernel mollification
# ---------------------------------------------------------------------------

def _gaussian_kernel_log(d2, sigma_k, k):
    return -0.5 * k * math.log(2.0 * math.pi * sigma_k**2) - 0.5 * d2 / sigma_k**2


def inner_density_ambient_is(model, chart, lik_spec, bandwidths, n, rng,
                             proposal=None):
    """Kernel-smoothed pushforward density with optional bandwidth extrapolation.

    Default proposal is the likelihood itself (unit weights).  With several
    bandwidths the sigma -> 0 limit is taken by fitting value = a + b*sigma^2
    and reporting a; mollification bias for a C^2 target is O(sigma^2).
    """
    _gaussian_spec_check(lik_spec)
    bws = np.atleast_1d(np.asarray(bandwidths, dtype=float))
    if np.any(bws <= 0):
        raise ConfigurationError("bandwidths must be positive")
    mu0 = lik_spec.mean_vector(chart.n)
    if proposal is None:
        X = mu0[None, :] + lik_spec.sigma * rng.standard_normal((n, chart.n))
        log_w = np.zeros(n)
    else:
        X = proposal.sample(rng, n)
        log_w = log_likelihood_batch(lik_spec, X) - proposal.log_density(X)
    coords, match = chart_coords_batch(model, chart, X)
    theta = np.atleast_1d(chart.theta)
    d2 = np.sum((coords - theta[None, :]) ** 2, axis=1)
    w = np.exp(log_w)

    ests, ses = [], []
    for s_k in bws:
        vals = np.where(match, np.exp(_gaussian_kernel_log(d2, s_k, chart.k)), 0.0) * w
        ests.append(float(np.mean(vals)))
        ses.append(float(np.std(vals, ddof=1) / math.sqrt(n)))
    contrib = np.where(match, np.exp(_gaussian_kernel_log(d2, float(bws.min()), chart.k)), 0.0) * w
    tot, tot2 = float(np.sum(contrib)), float(np.sum(contrib**2))
    ess = tot**2 / tot2 if tot2 > 0 else 0.0
    status = "variance_warning" if ess < 10 else "ok"

    if bws.size == 1:
        return DensityEstimate(value=ests[0], std_err=ses[0], method="ambient_is",
                               n_used=n, bandwidth_or_delta=float(bws[0]),
                               status=status,
                               diagnostics={"ess": ess, "per_bandwidth": list(zip(bws, ests, ses))})
    # weighted LS fit of value(s) = a + b s^2
    Xd = np.column_stack([np.ones(bws.size), bws**2])
    Wd = np.diag(1.0 / np.maximum(np.asarray(ses), 1e-300) ** 2)
    cov = np.linalg.inv(Xd.T @ Wd @ Xd)
    coef = cov @ (Xd.T @ Wd @ np.asarray(ests))
    a = float(coef[0])
    se_a = float(math.sqrt(max(cov[0, 0], 0.0)))
    return DensityEstimate(value=a, std_err=se_a, method="ambient_is", n_used=n,
                           bandwidth_or_delta=float(bws.min()), status=status,
                           diagnostics={"ess": ess, "slope": float(coef[1]),
                                        "per_bandwidth": list(zip(bws, ests, ses))})


# ---------------------------------------------------------------------------
# Thickened-slab estimator (scalar charts)
# ---------------------------------------------------------------------------

def default_slab_box(chart, lik_spec, widths=8.0):
    """Axis-aligned box covering the likelihood mass around the level set."""
    mu0 = lik_spec.mean_vector(chart.n)
    A = chart.A
    r = chart.residual(mu0)
    x_c = mu0 - A.T @ np.linalg.solve(A @ A.T, r)
    half = widths * lik_spec.sigma + float(np.linalg.norm(x_c - mu0))
    lo = x_c - half
    hi = x_c + half
    return lo, hi


def inner_density_thickened(model, chart, lik_spec, delta, n, rng, box=None,
                            min_acceptance=1e-4, chunk_size=500_000):
    """Uniform-slab estimator Vol * mean(likelihood) / (2 delta), k = 1 only.

    Draws are processed in chunks so large n stays memory-bounded.
    """
    if chart.k != 1:
        raise ConfigurationError("thickened estimator is defined for scalar charts")
    if not delta > 0:
        raise ConfigurationError("delta must be positive")
    _gaussian_spec_check(lik_spec)
    if box is None:
        lo, hi = default_slab_box(chart, lik_spec)
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in box)
    vol = float(np.prod(hi - lo))
    total = 0.0
    total_sq = 0.0
    hits = 0
    remaining = int(n)
    while remaining > 0:
        m = min(remaining, chunk_size)
        X = lo[None, :] + (hi - lo)[None, :] * rng.uniform(size=(m, chart.n))
        coords, match = chart_coords_batch(model, chart, X)
        hit = match & (np.abs(coords[:, 0] - chart.theta[0]) < delta)
        vals = np.where(hit, np.exp(log_likelihood_batch(lik_spec, X)), 0.0)
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals**2))
        hits += int(np.sum(hit))
        remaining -= m
    acceptance = hits / n
    if acceptance < min_acceptance:
        raise InefficiencyError(
            f"slab acceptance {acceptance:.2e} below {min_acceptance:.0e}; shrink the box")
    mean = total / n
    var = max(total_sq / n - mean**2, 0.0) * n / max(n - 1, 1)
    value = vol * mean / (2.0 * delta)
    se = vol * math.sqrt(var / n) / (2.0 * delta)
    return DensityEstimate(value=value, std_err=se, method="thickened", n_used=n,
                           bandwidth_or_delta=float(delta),
                           diagnostics={"acceptance": acceptance, "volume": vol})


# ---------------------------------------------------------------------------
# Chain + bridge normalization
# ---------------------------------------------------------------------------

def inner_density_mcmc_bridge(chain, chart, lik_spec, rng, n_ref=4000,
                              n_batches=20, split=True):
    """Normalizing constant of the chain's target via an optimal two-sample bridge.

    The chain targets p(x|theta0)/J on the level set; the reference is a
    Gaussian in the orthonormal frame coordinates of the affine chart, whose
    Hausdorff normalization is analytic.  Out-of-region reference draws carry
    zero target density, so region truncation is handled by the bridge itself.

    With split=True the reference is fitted on the first half of the chain
    and the bridge evaluated on the second: reusing the same samples for both
    overfits the reference to the empirical draw and biases the estimate in a
    way batch errors cannot see.
    """
    if not chart.affine:
        raise ConfigurationError("bridge reference requires an affine chart")
    _gaussian_spec_check(lik_spec)
    samples = chain.samples if hasattr(chain, "samples") else np.atleast_2d(chain)
    n_all = samples.shape[0]
    if n_all < 4:
        return DensityEstimate(value=np.nan, std_err=np.inf, method="mcmc_bridge",
                               n_used=n_all, status="degenerate_chain")
    if split:
        fit_samples = samples[: n_all // 2]
        samples = samples[n_all // 2:]
    else:
        fit_samples = samples
    n1 = samples.shape[0]
    A = chart.A
    d = chart.n - chart.k
    B = _nullspace(A, chart.n)
    xbar = fit_samples.mean(axis=0)
    r = chart.residual(xbar)
    x_c = xbar - A.T @ np.linalg.solve(A @ A.T, r)
    U_fit = (fit_samples - x_c[None, :]) @ B
    U = (samples - x_c[None, :]) @ B
    mean_u = U_fit.mean(axis=0)
    cov_u = (np.atleast_2d(np.cov(U_fit.T)) if d > 1
             else np.array([[float(np.var(U_fit, ddof=1))]]))
    cov_u = cov_u + 1e-12 * np.trace(cov_u) / max(d, 1) * np.eye(d)
    L = np.linalg.cholesky(cov_u)
    log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
    log_J = math.log(jacobian_factor(A))

    def log_gamma(X):
        ll = log_likelihood_batch(lik_spec, X)
        out = ll - log_J
        out = np.where(chart.in_region_batch(X), out, -np.inf)
        return out

    def log_ref_from_u(Uq):
        z = np.linalg.solve(L, Uq.T).T
        return (-0.5 * d * math.log(2.0 * math.pi) - 0.5 * log_det
                - 0.5 * np.sum(z**2, axis=1))

    u_ref = mean_u[None, :] + rng.standard_normal((n_ref, d)) @ L.T
    x_ref = x_c[None, :] + u_ref @ B.T
    lg_ref = log_gamma(x_ref)
    lr_ref = log_ref_from_u(u_ref - mean_u[None, :])
    lg_ch = log_gamma(samples)
    lr_ch = log_ref_from_u(U - mean_u[None, :])

    def bridge(lg_c, lr_c, lg_r, lr_r, iters=60):
        m1, m2 = lg_c.size, lg_r.size
        ls1, ls2 = math.log(m1 / (m1 + m2)), math.log(m2 / (m1 + m2))
        log_z = float(-(logsumexp(lr_c - lg_c) - math.log(m1)))  # reciprocal IS init
        for _ in range(iters):
            num = logsumexp(lg_r - np.logaddexp(ls1 + lg_r, ls2 + log_z + lr_r)) - math.log(m2)
            den = logsumexp(lr_c - np.logaddexp(ls1 + lg_c, ls2 + log_z + lr_c)) - math.log(m1)
            new = num - den
            if abs(new - log_z) < 1e-12:
                log_z = new
                break
            log_z = new
        return log_z

    log_z = bridge(lg_ch, lr_ch, lg_ref, lr_ref)
    # batch-means SE with both noise sources visible: batch length respects
    # the chain's integrated autocorrelation, and each batch gets its own
    # slice of reference draws (a shared reference would hide its MC noise)
    from .diagnostics import ess as _ess

    ls1 = math.log(n1 / (n1 + n_ref))
    ls2 = math.log(n_ref / (n1 + n_ref))
    h = np.exp(lr_ch - np.logaddexp(ls1 + lg_ch, ls2 + log_z + lr_ch))
    tau = n1 / max(_ess(h), 1.0)
    batch_len = max(n1 // n_batches, int(math.ceil(5.0 * tau)), 1)
    nb = n1 // batch_len
    if nb >= 2:
        ref_len = max(n_ref // nb, 1)
        batch_vals = []
        for b in range(nb):
            sl = slice(b * batch_len, (b + 1) * batch_len)
            sl_r = slice(b * ref_len, (b + 1) * ref_len)
            batch_vals.append(bridge(lg_ch[sl], lr_ch[sl],
                                     lg_ref[sl_r], lr_ref[sl_r]))
        batch_vals = np.asarray(batch_vals)
        se_log = float(np.std(batch_vals, ddof=1) / math.sqrt(nb))
    else:
        se_log = np.inf
    w = np.exp(lr_ch - lg_ch - np.max(lr_ch - lg_ch))
    overlap = float(np.sum(w) ** 2 / (w.size * np.sum(w**2)))
    status = "unreliable_bridge" if overlap < 0.01 else "ok"
    value = math.exp(log_z)
    return DensityEstimate(value=value, std_err=value * se_log, method="mcmc_bridge",
                           n_used=n1, status=status,
                           diagnostics={"log_value": log_z, "log_se": se_log,
                                        "overlap": overlap, "n_ref": n_ref})


# ---------------------------------------------------------------------------
# Stochastic complexity along the path
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComplexityConfig:
    fit_tol: float = 1e-10
    box_sd: float = 6.0
    fixed_box: object = None          # (k, 2) array overriding the +-box_sd box
    gl_nodes: int = 16                # per-dimension Gauss-Legendre order (k <= 3)
    mc_nodes: int = 256               # uniform box nodes (k > 3)
    mass_nodes: int = 2048
    density: str = "analytic"         # analytic | bridge
    sigma: float | None = None        # likelihood sigma; default dataset noise_sd
    bridge_sampler: SamplerConfig | None = None
    bridge_n_ref: int = 4000
    seed: int = 0
    include_region_mass: bool = False

    # include_region_mass=False reports the complexity of the k-dimensional
    # active family without the single-stratum truncation factor.  A fitted
    # support is one of combinatorially many same-dimension strata whose
    # truncation masses sum to ~1; keeping one stratum's mass (astronomically
    # small in dense regimes, where the support is unstable) would measure the
    # stratum, not the selected model dimension.  The mass factor always stays
    # part of the level-set density f itself.

    def __post_init__(self):
        if self.density not in ("analytic", "bridge"):
            raise ConfigurationError(f"unknown density route {self.density!r}")


def _gauss_legendre_tensor(box, nodes_per_dim):
    t, w = np.polynomial.legendre.leggauss(nodes_per_dim)
    axes_pts, axes_wts = [], []
    for lo, hi in box:
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        axes_pts.append(mid + half * t)
        axes_wts.append(half * w)
    grids = np.meshgrid(*axes_pts, indexing="ij")
    pts = np.column_stack([g.ravel() for g in grids])
    wgrids = np.meshgrid(*axes_wts, indexing="ij")
    wts = np.ones(pts.shape[0])
    for g in wgrids:
        wts *= g.ravel()
    return pts, wts


def _chart_box(fit, gram_inv, sigma, box_sd, fixed_box):
    if fixed_box is not None:
        box = np.atleast_2d(np.asarray(fixed_box, dtype=float))
        if box.shape != (fit.k, 2):
            raise ConfigurationError("fixed_box must be (k, 2)")
    else:
        sd = sigma * np.sqrt(np.diag(gram_inv))
        box = np.column_stack([fit.theta_hat - box_sd * sd, fit.theta_hat + box_sd * sd])
    # clip to the sign orthant of the chart (stay strictly inside)
    tiny = 1e-8 * np.maximum(np.abs(fit.theta_hat), 1.0)
    lo, hi = box[:, 0].copy(), box[:, 1].copy()
    pos = fit.signs > 0
    lo[pos] = np.maximum(lo[pos], tiny[pos])
    hi[~pos] = np.minimum(hi[~pos], -tiny[~pos])
    if np.any(lo >= hi):
        raise ConfigurationError("sign-clipped integration box is empty")
    return np.column_stack([lo, hi])


def _nll_fit(data, fit, sigma):
    resid = data.response - data.design @ fit.dense(data.p)
    n = data.n
    return float(0.5 * n * math.log(2.0 * math.pi * sigma**2)
                 + 0.5 * np.sum(resid**2) / sigma**2)


def stochastic_complexity_local(data, lam, cfg=None, rng=None):
    """ComplexityRecord at one regularization level.

    Integrates the diagonal inner density f_{theta'}(theta') over the active
    chart's sign-consistent box: tensor Gauss-Legendre for k <= 3, uniform-box
    Monte Carlo above.  The analytic route reuses one set of region-mass draws
    across nodes (the conditional residual law on a Lasso chart does not
    depend on the level).
    """
    cfg = cfg or ComplexityConfig()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    sigma = cfg.sigma if cfg.sigma is not None else data.noise_sd
    fit = lasso_fit(data, lam, tol=cfg.fit_tol)
    nll = _nll_fit(data, fit, sigma)
    n = data.n
    k = fit.k
    if k == 0:
        return ComplexityRecord(lam=float(lam), k=0, log_complexity=0.0,
                                log_complexity_se=0.0, nll_fit=nll, codelength=nll,
                                bic=nll, aic=nll, asymptotic_nml=nll)
    Xs = data.design[:, list(fit.active_set)]
    gram = Xs.T @ Xs
    gram_inv = np.linalg.inv(gram)
    box = _chart_box(fit, gram_inv, sigma, cfg.box_sd, cfg.fixed_box)

    if cfg.density == "bridge":
        # one chain at the chart center: the diagonal integrand of a Gaussian
        # family on an affine chart does not depend on the level, so the box
        # integral is value-at-center times volume
        pts = np.mean(box, axis=1)[None, :]
        wts = np.array([float(np.prod(box[:, 1] - box[:, 0]))])
    elif k <= 3:
        pts, wts = _gauss_legendre_tensor(box, cfg.gl_nodes)
    else:
        vol = float(np.prod(box[:, 1] - box[:, 0]))
        pts = box[:, 0][None, :] + (box[:, 1] - box[:, 0])[None, :] * rng.uniform(
            size=(cfg.mc_nodes, k))
        wts = np.full(cfg.mc_nodes, vol / cfg.mc_nodes)

    shared_mass = None
    log_g = np.full(pts.shape[0], -np.inf)
    se_rel = 0.0
    for i, theta in enumerate(pts):
        chart = LassoLevelSet(data, fit.active_set, fit.signs, theta, lam)
        dense = np.zeros(data.p)
        dense[list(fit.active_set)] = theta
        spec = LikelihoodSpec(kind="gaussian_regression", theta0=dense, sigma=sigma,
                              design=data.design)
        if cfg.density == "analytic":
            if shared_mass is None:
                if cfg.include_region_mass:
                    m, m_se, _ = region_mass(chart, spec, cfg.mass_nodes, rng)
                else:
                    m, m_se = 1.0, 0.0
                shared_mass = (m, m_se)
                se_rel = m_se / m if m > 0 else np.inf
            est = inner_density_analytic_affine(chart, spec, mass=shared_mass)
            log_g[i] = est.diagnostics["log_value"]
        else:
            est = _bridge_density(chart, spec, cfg, data, fit, rng)
            log_g[i] = math.log(est.value) if est.value > 0 else -np.inf
            se_rel = max(se_rel, est.std_err / est.value if est.value > 0 else np.inf)
    finite = np.isfinite(log_g)
    if not np.any(finite):
        raise ConfigurationError("complexity quadrature produced no finite values")
    log_c = float(logsumexp(log_g[finite], b=wts[finite]))
    log_c_se = float(se_rel)

    vol_box = float(np.prod(box[:, 1] - box[:, 0]))
    sign, logdet_gram = np.linalg.slogdet(gram)
    fisher_vol_log = math.log(vol_box) + 0.5 * logdet_gram - k * math.log(sigma)
    asym = nll + 0.5 * k * math.log(n / (2.0 * math.pi)) + fisher_vol_log
    return ComplexityRecord(lam=float(lam), k=k, log_complexity=log_c,
                            log_complexity_se=log_c_se, nll_fit=nll,
                            codelength=nll + log_c,
                            bic=nll + 0.5 * k * math.log(n),
                            aic=nll + float(k),
                            asymptotic_nml=asym)


def _bridge_density(chart, spec, cfg, data, fit, rng):
    """One chain at the node's level set, normalized by the bridge.

    The diagonal Lasso integrand is exactly level-free, so callers evaluate
    this at the chart center only; see the path assembly below.
    """
    from .model import LassoModel

    model = LassoModel(data, fit.lam, tol=cfg.fit_tol)
    scfg = cfg.bridge_sampler or SamplerConfig(n_samples=4000, burn_in=1000,
                                               seed=cfg.seed)
    target = make_likelihood_target(spec, chart)
    chain = run_chain(model, chart, chart.anchor(), target, scfg)
    return inner_density_mcmc_bridge(chain, chart, spec, rng, n_ref=cfg.bridge_n_ref)


def complexity_path(data, lambdas, cfg=None, rng=None):
    """Records along an ascending lambda grid with per-cell failure isolation."""
    lambdas = np.sort(np.asarray(lambdas, dtype=float))
    if np.any(np.diff(lambdas) <= 0):
        raise ConfigurationError("lambda grid must be strictly increasing")
    cfg = cfg or ComplexityConfig()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    records, statuses = [], []
    for lam in lambdas:
        try:
            records.append(stochastic_complexity_local(data, lam, cfg, rng))
            statuses.append("ok")
        except Exception as exc:  # per-row isolation: one bad cell must not kill the path
            records.append(None)
            statuses.append(f"{type(exc).__name__}: {exc}")
    ok = [r for r in records if r is not None]
    selected = {}
    if ok:
        for crit, keyf in (("nml", lambda r: r.codelength),
                           ("bic", lambda r: r.bic),
                           ("aic", lambda r: r.aic),
                           ("asymptotic_nml", lambda r: r.asymptotic_nml)):
            selected[crit] = min(ok, key=keyf).lam
    return PathResult(records=records, lambdas=lambdas, statuses=statuses,
                      selected=selected, meta=dict(data.meta))


# ---------------------------------------------------------------------------
# Cross-validation baseline and held-out evaluation
# ---------------------------------------------------------------------------

def cv_select(data, lambdas, n_folds=5, fold_seed=0, tol=1e-8):
    """5-fold CV curve and the minimizing lambda (fixed fold assignment)."""
    lambdas = np.sort(np.asarray(lambdas, dtype=float))[::-1]  # warm start downward
    rng = np.random.default_rng(fold_seed)
    idx = rng.permutation(data.n)
    folds = np.array_split(idx, n_folds)
    mse = np.zeros(lambdas.size)
    for f in folds:
        mask = np.ones(data.n, dtype=bool)
        mask[f] = False
        Xtr, ytr = data.design[mask], data.response[mask]
        Xva, yva = data.design[~mask], data.response[~mask]
        w = np.zeros(data.p)
        for i, lam in enumerate(lambdas):
            fit = lasso_solve(Xtr, ytr, lam, tol=tol, w0=w)
            w = fit.dense(data.p)
            pred = Xva @ w
            mse[i] += float(np.mean((yva - pred) ** 2)) / n_folds
    order = np.argsort(lambdas)
    lam_sorted = lambdas[order]
    mse_sorted = mse[order]
    best = float(lam_sorted[np.argmin(mse_sorted)])
    return best, lam_sorted, mse_sorted


def heldout_mse(data, test_design, test_response, lam, tol=1e-8):
    """Held-out squared errors of the model fitted on `data` at `lam`."""
    fit = lasso_fit(data, lam, tol=tol)
    pred = test_design @ fit.dense(data.p)
    err = (test_response - pred) ** 2
    return float(np.mean(err)), float(np.std(err, ddof=1) / math.sqrt(err.size))


# ---------------------------------------------------------------------------
# Asymptotic slope check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    residuals: np.ndarray    # log C - (k/2) log N per input
    sample_sizes: np.ndarray


@dataclass(frozen=True)
class SlopeStudy:
    fit: SlopeFit
    mean_log_c: np.ndarray
    se_log_c: np.ndarray
    n_used: np.ndarray
    sample_sizes: np.ndarray
    k: int


def asymptotic_slope_study(sample_sizes=(50, 100, 200, 400), p=6,
                           beta=(3.0, 2.0), snr=3.0, rho=0.0,
                           lam_over_sigma=2.6, fixed_box=None, n_seeds=16,
                           base_seed=300, mass_nodes=2048):
    """Replicated complexity-vs-N study at fixed active dimension.

    Protocol: at each sample size, draw fresh instances, fit at
    lambda = lam_over_sigma * noise_sd (the regularization level must track
    the noise level for the dimensional penalty to be the only N-dependence),
    keep replicates whose support is exactly the true support, and integrate
    the complexity over a box held fixed across N.  Returns per-N means with
    replicate standard errors and the least-squares slope of log C vs log N.
    """
    beta = np.asarray(beta, dtype=float)
    k = beta.size
    if fixed_box is None:
        half = 2.0
        fixed_box = np.column_stack([beta - half, beta + half])
        pos = beta > 0
        fixed_box[pos, 0] = np.maximum(fixed_box[pos, 0], 0.25 * beta[pos])
        fixed_box[~pos, 1] = np.minimum(fixed_box[~pos, 1], 0.25 * beta[~pos])
    from .model import gen_toeplitz_data

    means, ses, counts = [], [], []
    for n_val in sample_sizes:
        vals = []
        for s in range(n_seeds):
            data = gen_toeplitz_data(n_val, p, rho, beta, snr, seed=base_seed + s)
            lam = lam_over_sigma * data.noise_sd
            fit = lasso_fit(data, lam, tol=1e-9)
            if fit.active_set != tuple(range(k)):
                continue
            cfg = ComplexityConfig(fixed_box=fixed_box, mass_nodes=mass_nodes)
            rec = stochastic_complexity_local(data, lam, cfg)
            vals.append(rec.log_complexity)
        if len(vals) < 2:
            raise ConfigurationError(
                f"support recovery failed at N={n_val}; raise lam_over_sigma")
        means.append(float(np.mean(vals)))
        ses.append(float(np.std(vals, ddof=1) / math.sqrt(len(vals))))
        counts.append(len(vals))
    fit = asymptotic_slope_check(list(zip(sample_sizes, means)), k=k)
    return SlopeStudy(fit=fit, mean_log_c=np.asarray(means), se_log_c=np.asarray(ses),
                      n_used=np.asarray(counts), sample_sizes=np.asarray(sample_sizes),
                      k=k)


def asymptotic_slope_check(records_by_n, k):
    """Least-squares slope of log C against log N at fixed active dimension."""
    pts = []
    for item in records_by_n:
        if isinstance(item, tuple):
            n_val, rec = item
            if isinstance(rec, ComplexityRecord):
                if rec.k != k:
                    raise ConfigurationError(f"record has k={rec.k}, expected {k}")
                pts.append((float(n_val), rec.log_complexity))
            else:
                pts.append((float(n_val), float(rec)))
        else:
            raise ConfigurationError("records_by_n items must be (N, log_complexity)")
    if len(pts) < 3:
        raise ConfigurationError("need at least 3 sample sizes")
    ns = np.array([p[0] for p in pts])
    logc = np.array([p[1] for p in pts])
    Xd = np.column_stack([np.log(ns), np.ones(ns.size)])
    coef, *_ = np.linalg.lstsq(Xd, logc, rcond=None)
    residuals = logc - 0.5 * k * np.log(ns)
    return SlopeFit(slope=float(coef[0]), intercept=float(coef[1]),
                    residuals=residuals, sample_sizes=ns)


# ---------------------------------------------------------------------------
# Jacobian-selection bias diagnostic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BiasDiagnostic:
    value: float
    std_err: float
    n_used: int


def bias_diagnostic(model, chart, lik_spec, policy_a, policy_b, n, rng,
                    bandwidth=None):
    """Difference of J-weighted mollified estimates under two selection policies.

    Policies are callables (x, rng) -> scalar Jacobian factor.  With honest
    policies the factors agree away from kinks, which ambient draws hit with
    probability zero, so the paired difference vanishes; a corruption on a
    positive-measure band shows up at many standard errors.
    """
    _gaussian_spec_check(lik_spec)
    mu0 = lik_spec.mean_vector(chart.n)
    X = mu0[None, :] + lik_spec.sigma * rng.standard_normal((n, chart.n))
    coords, match = chart_coords_batch(model, chart, X)
    theta = np.atleast_1d(chart.theta)
    d2 = np.sum((coords - theta[None, :]) ** 2, axis=1)
    if bandwidth is None:
        bandwidth = 0.5 * lik_spec.sigma
    # draws come from the likelihood itself, so p/q = 1 and H is the kernel alone
    H = np.where(match, np.exp(_gaussian_kernel_log(d2, bandwidth, chart.k)), 0.0)
    J_K = jacobian_factor(chart.A) if chart.affine else None
    contrib = np.zeros(n)
    live = np.flatnonzero(H > 0)
    for i in live:
        x = X[i]
        jk = J_K if J_K is not None else jacobian_factor(chart.jacobian(x))
        ja = policy_a(x, rng)
        jb = policy_b(x, rng)
        inv_a = 1.0 / ja if ja > 0 else np.inf
        inv_b = 1.0 / jb if jb > 0 else np.inf
        contrib[i] = H[i] * jk * (inv_a - inv_b)
    value = float(np.mean(contrib))
    se = float(np.std(contrib, ddof=1) / math.sqrt(n))
    return BiasDiagnostic(value=value, std_err=se, n_used=n)


def sjo_policy_factor(model, chart, oracle_cfg):
    """Policy adapter: evaluate the SJO at x and return its Jacobian factor."""
    from .oracle import sjo_gs

    def factor(x, rng):
        cj, _ = sjo_gs(model, x, oracle_cfg, rng, chart=chart)
        sv = np.linalg.svd(cj.matrix, compute_uv=False)
        if sv.size == 0 or sv[-1] <= 0:
            return 0.0
        return float(np.prod(sv))

    return factor


def corrupted_policy(base_policy, band_test, scale=0.5):
    """Planted defect: multiply the selected factor by `scale` on a band."""

    def factor(x, rng):
        j = base_policy(x, rng)
        return scale * j if band_test(x) else j

    return factor
