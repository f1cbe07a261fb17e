"""Stochastic Jacobian oracle and tangent-frame construction.

At a kink the estimator's generalized Jacobian is set-valued; sampling
Fréchet Jacobians from an epsilon-ball and applying a selection policy gives
a stable single matrix to build proposal frames from.  Two alternative frame
constructions are provided as diagnostics: the kernel intersection of all
sampled Jacobians, and direct geometric probing of the level set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ConfigurationError, ConservativeJacobian, SingularityError


class OracleFailure(RuntimeError):
    """Every ball sample produced a rank-deficient Jacobian."""


class DegenerateConeError(RuntimeError):
    """Kernel intersection of the sampled Jacobians is trivial."""


class ProbingError(RuntimeError):
    """Too many level-set projections failed while probing."""


@dataclass(frozen=True)
class OracleConfig:
    radius_eps: float = 1e-6
    num_samples: int = 5
    policy: str = "random_element"   # random_element | mean_element
    relative_radius: bool = True     # ball radius = radius_eps * (1 + ||x0||)

    def __post_init__(self):
        if not self.radius_eps > 0:
            raise ConfigurationError("radius_eps must be positive")
        if self.num_samples < 1:
            raise ConfigurationError("num_samples must be at least 1")
        if self.policy not in ("random_element", "mean_element"):
            raise ConfigurationError(f"unknown selection policy {self.policy!r}")

    def radius_at(self, x0):
        if self.relative_radius:
            return self.radius_eps * (1.0 + float(np.linalg.norm(x0)))
        return self.radius_eps


@dataclass(frozen=True)
class TangentFrame:
    basis: np.ndarray    # (N, N-k), orthonormal columns
    anchor: np.ndarray   # (N,)
    source: str          # kernel_of_selection | stca | gtp

    def __post_init__(self):
        if self.source not in ("kernel_of_selection", "stca", "gtp"):
            raise ConfigurationError(f"unknown frame source {self.source!r}")

    @property
    def dim(self):
        return self.basis.shape[1]


def write_labels_csv(labels_per_call, path):
    """Per-sample piece labels of repeated oracle calls, one row per call.

    Feeds the kink-frequency analysis: columns are call, sample, piece.
    """
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["call", "sample", "piece"])
        for i, labels in enumerate(labels_per_call):
            for j, label in enumerate(labels):
                w.writerow([i, j, str(label)])


def sample_ball(rng, center, radius, size=1):
    """Exact uniform draws from the ball B(center, radius)."""
    center = np.asarray(center, dtype=float)
    n = center.size
    d = rng.standard_normal((size, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(size=size) ** (1.0 / n)
    return center[None, :] + r[:, None] * d


def _full_rank(G):
    if G.shape[0] == 0:
        return True
    sv = np.linalg.svd(G, compute_uv=False)
    return sv[-1] > max(G.shape) * np.finfo(float).eps * max(sv[0], 1.0)


def sjo_gs(model, x0, cfg, rng, chart=None, jac_at=None):
    """Gradient-sampling Jacobian oracle.

    Draws num_samples points uniformly in the ball around x0, evaluates the
    Fréchet Jacobian at each (well defined with probability 1), and applies
    the selection policy over the evaluated samples.  Rank-deficient pieces
    (e.g. the flat side of a kink) are legitimate selections; only evaluation
    failures (SingularityError from an ill-conditioned active Gram) are
    dropped, and the oracle fails when every sample failed that way.

    Returns the selected ConservativeJacobian and the per-sample piece labels.
    """
    x0 = np.asarray(x0, dtype=float)
    eps = cfg.radius_at(x0)
    if jac_at is None:
        jac_at = lambda x: model.chart_jacobian(x, chart)
    pts = sample_ball(rng, x0, eps, size=cfg.num_samples)
    jacs, labels = [], []
    for x in pts:
        try:
            G, label = jac_at(x)
        except SingularityError:
            continue
        jacs.append(np.atleast_2d(np.asarray(G, dtype=float)))
        labels.append(label)
    if not jacs:
        raise OracleFailure("every ball sample failed Jacobian evaluation")
    if cfg.policy == "random_element":
        out = jacs[rng.integers(len(jacs))]
    else:
        out = np.mean(jacs, axis=0)
    return ConservativeJacobian(matrix=out, source="sjo_selection"), labels


def _fix_column_signs(B):
    """Flip columns so the first above-tolerance entry of each is positive."""
    if B.size == 0:
        return B
    absB = np.abs(B)
    tol = 1e-12 * np.maximum(absB.max(axis=0), 1e-300)
    first = np.argmax(absB > tol[None, :], axis=0)
    lead = B[first, np.arange(B.shape[1])]
    signs = np.where(lead < 0, -1.0, 1.0)
    return B * signs[None, :]


def _nullspace(M, n):
    """Orthonormal null-space basis with a deterministic sign convention."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] == 0:
        B = np.eye(n)
    else:
        u, s, vh = np.linalg.svd(M)
        tol = max(M.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
        rank = int(np.sum(s > tol))
        B = vh[rank:].T
    return _fix_column_signs(B)


def tangent_basis(jac, anchor=None):
    """Orthonormal basis of Ker(G) for a full-row-rank selection G."""
    G = jac.matrix if isinstance(jac, ConservativeJacobian) else np.atleast_2d(np.asarray(jac, dtype=float))
    if not _full_rank(G):
        raise SingularityError("tangent basis requires a full-row-rank Jacobian")
    n = G.shape[1]
    B = _nullspace(G, n)
    if G.shape[0] and B.shape[1] != n - G.shape[0]:
        raise SingularityError("kernel dimension does not match N - k")
    anc = np.zeros(n) if anchor is None else np.asarray(anchor, dtype=float)
    return TangentFrame(basis=B, anchor=anc, source="kernel_of_selection")


def stca(model, x0, cfg, rng, chart=None, jac_at=None):
    """Tangent-cone approximation: intersection of the sampled kernels."""
    x0 = np.asarray(x0, dtype=float)
    eps = cfg.radius_at(x0)
    if jac_at is None:
        jac_at = lambda x: model.chart_jacobian(x, chart)
    pts = sample_ball(rng, x0, eps, size=cfg.num_samples)
    jacs = []
    for x in pts:
        try:
            G, _ = jac_at(x)
        except SingularityError:
            continue
        jacs.append(np.atleast_2d(np.asarray(G, dtype=float)))
    if not jacs:
        raise OracleFailure("every ball sample failed Jacobian evaluation")
    stack = np.vstack(jacs)
    n = stack.shape[1]
    B = _nullspace(stack, n)
    if B.shape[1] == 0:
        raise DegenerateConeError("sampled kernels intersect trivially")
    return TangentFrame(basis=B, anchor=x0, source="stca")


def gtp(model, x0, level_theta, cfg, rng, projector, n_probe=None, k=None):
    """Geometric tangent probing: project ball samples, PCA the deviations.

    `projector` maps an ambient point to a ProjectionResult on the level set
    of `level_theta`; `k` is the level-set codimension (defaults to the size
    of level_theta).
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    if k is None:
        k = np.atleast_1d(np.asarray(level_theta)).size
    d = n - k
    if n_probe is None:
        n_probe = 10 * d
    if n_probe < d:
        raise ConfigurationError("need at least N - k probe points")
    eps = cfg.radius_at(x0)
    pts = sample_ball(rng, x0, eps, size=n_probe)
    devs = []
    failures = 0
    for y in pts:
        res = projector(y)
        if getattr(res, "status", "converged") != "converged":
            failures += 1
            continue
        devs.append(np.asarray(res.x_star, dtype=float) - x0)
    if failures > 0.5 * n_probe:
        raise ProbingError(f"{failures}/{n_probe} projections failed while probing")
    D = np.asarray(devs)
    _, _, vh = np.linalg.svd(D, full_matrices=False)
    B = _fix_column_signs(vh[:d].T)
    return TangentFrame(basis=B, anchor=x0, source="gtp")
