"""Euclidean projection onto estimator level sets.

Three routes, tried in order of cost: a closed form for affine charts (exact
for the Lasso within a fixed active-set/sign region), a semismooth Newton
iteration on the KKT system, and an augmented Lagrangian fallback.  The same
symmetric-indefinite KKT factorization also yields the derivative of the
projection map, which the sampler needs for its volume corrections.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import get_lapack_funcs

from .model import ConfigurationError, SingularityError


class SingularKKTError(RuntimeError):
    """KKT matrix condition estimate exceeded the configured cap."""


class InitializationError(RuntimeError):
    """Starting point could not be placed on the level set."""


@dataclass(frozen=True)
class ProjectionConfig:
    eps_feas: float = 1e-9
    max_newton_iter: int = 50
    max_alm_iter: int = 100
    rho0: float = 10.0
    cond_cap: float = 1e12
    route: str | None = None   # None = auto; "affine" | "newton" | "alm" pin a solver

    def __post_init__(self):
        if not self.eps_feas > 0:
            raise ConfigurationError("eps_feas must be positive")
        if self.max_newton_iter < 1 or self.max_alm_iter < 1:
            raise ConfigurationError("iteration caps must be at least 1")
        if self.route not in (None, "affine", "newton", "alm"):
            raise ConfigurationError(f"unknown projection route {self.route!r}")


@dataclass
class ProjectionResult:
    x_star: np.ndarray
    multipliers: np.ndarray
    feas_residual: float
    stat_residual: float
    iterations: int
    method: str     # affine_closed_form | newton | alm
    status: str     # converged | infeasible_region | max_iter | singular_kkt
    trace: list = field(default_factory=list)   # (iteration, feas, stat)
    region_corr: np.ndarray | None = None       # inactive correlations at x_star


@dataclass(frozen=True)
class KKTMatrix:
    matrix: np.ndarray
    cond_estimate: float


def write_trace_csv(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "feasibility", "stationarity"])
        for row in result.trace:
            w.writerow(row)


# ---------------------------------------------------------------------------
# KKT factorization kernel: one well-characterized O((N+k)^3) operation
# ---------------------------------------------------------------------------

class KKTFactor:
    """LDL^T factorization of [[H, M^T], [M, 0]] with a 1-norm condition estimate."""

    def __init__(self, H, M, cond_cap):
        n = H.shape[0]
        k = M.shape[0]
        V = np.zeros((n + k, n + k))
        V[:n, :n] = H
        V[:n, n:] = M.T
        V[n:, :n] = M
        self.matrix = V
        self.n, self.k = n, k
        sytrf, sycon, sytrs = get_lapack_funcs(("sytrf", "sycon", "sytrs"), (V,))
        anorm = np.linalg.norm(V, 1)
        ldu, ipiv, info = sytrf(V, lower=1)
        if info != 0:
            raise SingularKKTError(f"KKT factorization failed (info={info})")
        rcond, info = sycon(ldu, ipiv, anorm, lower=1)
        if info != 0:
            raise SingularKKTError(f"KKT condition estimate failed (info={info})")
        self.cond_estimate = 1.0 / rcond if rcond > 0 else np.inf
        if self.cond_estimate > cond_cap:
            raise SingularKKTError(
                f"KKT condition estimate {self.cond_estimate:.3e} exceeds cap {cond_cap:.3e}")
        self._ldu, self._ipiv, self._sytrs = ldu, ipiv, sytrs

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        b = rhs[:, None] if rhs.ndim == 1 else rhs
        x, info = self._sytrs(self._ldu, self._ipiv, b, lower=1)
        if info != 0:
            raise SingularKKTError(f"KKT solve failed (info={info})")
        return x[:, 0] if rhs.ndim == 1 else x

    def as_kkt_matrix(self):
        return KKTMatrix(matrix=self.matrix, cond_estimate=self.cond_estimate)


def _lagrangian_hessian(chart, x, lam):
    n = chart.n
    H = np.eye(n)
    C = chart.curvature(x, lam)
    if C is not None:
        H = H + C
    return H


def kkt_matrix(chart, x, multipliers, cfg=None):
    """The generalized KKT matrix at a primal-dual point, with condition estimate."""
    cond_cap = np.inf if cfg is None else cfg.cond_cap
    M = chart.jacobian(x)
    H = _lagrangian_hessian(chart, x, multipliers)
    try:
        fac = KKTFactor(H, M, cond_cap)
    except SingularKKTError:
        raise
    return fac.as_kkt_matrix()


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

def affine_projection(chart, y0, known_member=None):
    """Orthogonal projection onto an affine chart {A x + c = theta}.

    `known_member` is an optional point already known to lie inside the chart
    region: when the projection reproduces it to machine precision the region
    check is inherited instead of recomputed (the membership test is the only
    O(N P) operation here).
    """
    if not chart.affine:
        raise ConfigurationError("affine projection requires an affine chart")
    y0 = np.asarray(y0, dtype=float)
    A = chart.A
    r = chart.residual(y0)
    gram = A @ A.T
    try:
        z = np.linalg.solve(gram, r)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("affine constraint matrix is rank deficient") from exc
    x_star = y0 - A.T @ z
    feas = float(np.linalg.norm(chart.residual(x_star)))
    stat = float(np.linalg.norm(x_star - y0 + A.T @ z))
    corr = None
    if known_member is not None and (
            float(np.linalg.norm(x_star - known_member))
            <= 1e-8 * (1.0 + float(np.linalg.norm(known_member)))):
        in_region = True
    elif hasattr(chart, "inactive_corr"):
        corr = chart.inactive_corr(x_star)
        in_region = chart.in_region_from_corr(corr)
    else:
        in_region = chart.in_region(x_star)
    status = "converged" if in_region else "infeasible_region"
    return ProjectionResult(x_star=x_star, multipliers=z, feas_residual=feas,
                            stat_residual=stat, iterations=0,
                            method="affine_closed_form", status=status,
                            region_corr=corr)


def lasso_affine_projection(data, active_set, signs, theta_prime, lam, y0):
    """Closed-form projection onto a Lasso level set's affine piece.

    Verifies the inactive-feature inequalities at the projected point and
    reports infeasible_region when the point leaves the sign region.
    """
    from .model import LassoLevelSet

    chart = LassoLevelSet(data, active_set, signs, theta_prime, lam)
    return affine_projection(chart, y0)


def project_newton(chart, y0, cfg, x0=None, lam0=None, record_trace=False):
    """Semismooth Newton on F(z; y0) = (x - y0 + M(x)^T lam, m(x) - theta)."""
    y0 = np.asarray(y0, dtype=float)
    n = y0.size
    x = y0.copy() if x0 is None else np.array(x0, dtype=float)
    k = chart.k
    lam = np.zeros(k) if lam0 is None else np.array(lam0, dtype=float)
    scale = 1.0 + float(np.linalg.norm(y0))
    trace = []
    status = "max_iter"
    it = 0
    for it in range(1, cfg.max_newton_iter + 1):
        M = chart.jacobian(x)
        res = chart.residual(x)
        Fx = x - y0 + M.T @ lam
        feas = float(np.linalg.norm(res))
        stat = float(np.linalg.norm(Fx))
        if record_trace:
            trace.append((it - 1, feas, stat))
        if feas <= cfg.eps_feas and stat <= 10.0 * cfg.eps_feas * scale:
            status = "converged"
            break
        H = _lagrangian_hessian(chart, x, lam)
        try:
            fac = KKTFactor(H, M, cfg.cond_cap)
        except SingularKKTError:
            status = "singular_kkt"
            break
        step = fac.solve(-np.concatenate([Fx, res]))
        x = x + step[:n]
        lam = lam + step[n:]
        if not np.all(np.isfinite(x)):
            status = "max_iter"
            break
    res = chart.residual(x) if np.all(np.isfinite(x)) else np.full(k, np.inf)
    M = chart.jacobian(x) if np.all(np.isfinite(x)) else np.zeros((k, n))
    feas = float(np.linalg.norm(res))
    stat = float(np.linalg.norm(x - y0 + M.T @ lam)) if np.all(np.isfinite(x)) else np.inf
    if status == "converged" and not chart.in_region(x):
        status = "infeasible_region"
    if record_trace:
        trace.append((it, feas, stat))
    return ProjectionResult(x_star=x, multipliers=lam, feas_residual=feas,
                            stat_residual=stat, iterations=it, method="newton",
                            status=status, trace=trace)


def project_alm(chart, y0, cfg, x0=None, inner_max=50):
    """Augmented Lagrangian projection with doubling penalty.

    Stops as soon as the feasibility residual drops below eps_feas, so the
    returned point genuinely carries an O(eps_feas) constraint violation;
    the tolerance-bias study depends on that behavior.
    """
    y0 = np.asarray(y0, dtype=float)
    n = y0.size
    k = chart.k
    lam = np.zeros(k)
    scale = 1.0 + float(np.linalg.norm(y0))
    feas0 = float(np.linalg.norm(chart.residual(y0)))
    if feas0 <= cfg.eps_feas:
        # the point being projected is already feasible: it is its own projection
        return ProjectionResult(x_star=y0.copy(), multipliers=lam, feas_residual=feas0,
                                stat_residual=0.0, iterations=0, method="alm",
                                status="converged" if chart.in_region(y0) else "infeasible_region")
    x = y0.copy() if x0 is None else np.array(x0, dtype=float)
    res = chart.residual(x)
    feas = float(np.linalg.norm(res))
    rho = cfg.rho0
    best = (x.copy(), lam.copy(), feas)
    status = "max_iter"
    outer = 0
    for outer in range(1, cfg.max_alm_iter + 1):
        # inner Gauss-Newton minimization of the augmented Lagrangian
        for _ in range(inner_max):
            M = chart.jacobian(x)
            res = chart.residual(x)
            mult_eff = lam + rho * res
            grad = (x - y0) + M.T @ mult_eff
            if float(np.linalg.norm(grad)) <= 0.1 * cfg.eps_feas * scale:
                break
            H = _lagrangian_hessian(chart, x, mult_eff) + rho * (M.T @ M)
            try:
                step = np.linalg.solve(H, -grad)
            except np.linalg.LinAlgError:
                step = -grad
            x = x + step
        res = chart.residual(x)
        feas_new = float(np.linalg.norm(res))
        if feas_new < best[2]:
            best = (x.copy(), lam.copy(), feas_new)
        if feas_new <= cfg.eps_feas:
            status = "converged"
            feas = feas_new
            break
        if feas_new > 0.25 * feas:
            rho *= 2.0
        lam = lam + rho * res
        feas = feas_new
    else:
        x, lam, feas = best
    M = chart.jacobian(x)
    stat = float(np.linalg.norm(x - y0 + M.T @ lam))
    if status == "converged" and not chart.in_region(x):
        status = "infeasible_region"
    return ProjectionResult(x_star=x, multipliers=lam, feas_residual=feas,
                            stat_residual=stat, iterations=outer, method="alm",
                            status=status)


def project(chart, y0, cfg, warm=None, use_affine=True, solver=None,
            known_member=None):
    """Projection orchestrator: affine fast path, then Newton, then ALM.

    `solver` forces a route ("affine", "newton", "alm").  An affine chart's
    region violation is final (the point left the sign region, the caller
    rejects); Newton failures fall back to the ALM route.
    """
    if solver is None:
        solver = cfg.route
    if solver == "affine" or (solver is None and use_affine and chart.affine):
        return affine_projection(chart, y0, known_member=known_member)
    if solver == "alm":
        return project_alm(chart, y0, cfg, x0=warm)
    res = project_newton(chart, y0, cfg, x0=warm)
    if solver == "newton":
        return res
    if res.status in ("max_iter", "singular_kkt"):
        alm_res = project_alm(chart, y0, cfg, x0=warm)
        if alm_res.status == "converged":
            return alm_res
    return res


def projection_jacobian(chart, result, cfg=None):
    """Derivative of the projection map at a converged projection.

    Solves [[H, M^T], [M, 0]] [dP; dlam] = [I; 0] and returns dP (N x N).
    """
    if result.status != "converged":
        raise ConfigurationError("projection Jacobian requires a converged result")
    cond_cap = 1e12 if cfg is None else cfg.cond_cap
    x = result.x_star
    n = x.size
    M = chart.jacobian(x)
    H = _lagrangian_hessian(chart, x, result.multipliers)
    fac = KKTFactor(H, M, cond_cap)
    rhs = np.zeros((n + chart.k, n))
    rhs[:n, :] = np.eye(n)
    sol = fac.solve(rhs)
    return sol[:n, :]
