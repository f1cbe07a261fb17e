"""Propose-and-project Metropolis-Hastings on estimator level sets.

One transition: sample a Gaussian step in the tangent frame of the current
selected Jacobian, project the ambient candidate back onto the level set,
form the forward and reverse volume-change factors from the projection-map
derivative restricted to the frames, and accept with the usual ratio.  Any
failure along the way (projection, singular KKT, oracle, region exit) leaves
the chain where it is, with the cause recorded.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .model import ConfigurationError, SingularityError, log_likelihood
from .oracle import OracleConfig, OracleFailure, sjo_gs, tangent_basis
from .projection import (InitializationError, ProjectionConfig, SingularKKTError,
                         project, projection_jacobian)

REJECT_REASONS = ("mh_reject", "projection_fail", "singular_kkt", "region_exit",
                  "oracle_fail")


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 1000
    burn_in: int = 0
    thin: int = 1
    step_scale: float | None = None     # None -> 0.5 / sqrt(N - k)
    oracle_cfg: OracleConfig = field(default_factory=OracleConfig)
    proj_cfg: ProjectionConfig = field(default_factory=ProjectionConfig)
    target: str = "hausdorff_uniform"   # hausdorff_uniform | likelihood_over_jacobian
    seed: int = 0
    reverse_move: str = "verbatim"      # verbatim | symmetric
    check_reverse: bool = False
    adapt_steps: int = 0                # pre-run dual averaging toward 0.3 acceptance
    record_samples: bool = True

    def __post_init__(self):
        if self.step_scale is not None and not self.step_scale >= 0:
            raise ConfigurationError("step_scale must be nonnegative")
        if self.thin < 1:
            raise ConfigurationError("thin must be at least 1")
        if self.burn_in >= self.n_samples:
            raise ConfigurationError("burn_in must be smaller than n_samples")
        if self.target not in ("hausdorff_uniform", "likelihood_over_jacobian"):
            raise ConfigurationError(f"unknown target {self.target!r}")
        if self.reverse_move not in ("verbatim", "symmetric"):
            raise ConfigurationError(f"unknown reverse_move {self.reverse_move!r}")


@dataclass
class ChainState:
    x: np.ndarray
    jacobian: object          # ConservativeJacobian selected at x
    frame: object             # TangentFrame for Ker(jacobian)
    log_target: float
    k: int


@dataclass
class StepInfo:
    accepted: bool
    reason: str | None
    j_fwd: float
    j_rev: float
    log_alpha: float
    elapsed: float = 0.0


@dataclass
class Chain:
    samples: np.ndarray            # (n_kept, N) or (0, N) when not recorded
    accept_flags: np.ndarray       # (n_kept,)
    k_trace: np.ndarray
    log_target_trace: np.ndarray
    rn_factors: np.ndarray         # (n_kept, 2) forward/reverse factors
    reasons: list
    step_seconds: np.ndarray
    config: SamplerConfig
    acceptance_rate: float

    def __len__(self):
        return self.accept_flags.size

    def export_csv(self, path, samples_path=None, max_sample_rows=100_000):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "accepted", "k", "log_target", "j_fwd", "j_rev", "reason"])
            for i in range(len(self)):
                w.writerow([i, int(self.accept_flags[i]), int(self.k_trace[i]),
                            repr(float(self.log_target_trace[i])),
                            repr(float(self.rn_factors[i, 0])),
                            repr(float(self.rn_factors[i, 1])),
                            self.reasons[i] or ""])
        if samples_path is not None and self.samples.size:
            if self.samples.shape[0] > max_sample_rows:
                raise ConfigurationError(
                    f"refusing to write {self.samples.shape[0]} sample rows "
                    f"(cap {max_sample_rows}); raise max_sample_rows to override")
            np.savetxt(samples_path, self.samples, delimiter=",")


def hausdorff_uniform_target(x):
    return 0.0


def make_likelihood_target(lik_spec, chart, model=None):
    """log A(x) = log p(x | theta0) - log J_cons(x) for the level-set density."""

    def log_target(x):
        ll = log_likelihood(lik_spec, x)
        if chart.affine:
            G = chart.A
        else:
            G = chart.jacobian(x)
        sv = np.linalg.svd(np.atleast_2d(G), compute_uv=False)
        return ll - float(np.sum(np.log(sv)))

    return log_target


def _frame_at(model, chart, x, cfg, rng, corr0=None):
    jac_at = None
    if hasattr(model, "jacobian_sampler"):
        jac_at = model.jacobian_sampler(x, chart, cfg.oracle_cfg.radius_at(x),
                                        corr0=corr0)
    cj, _ = sjo_gs(model, x, cfg.oracle_cfg, rng, chart=chart, jac_at=jac_at)
    frame = tangent_basis(cj, anchor=x)
    return cj, frame


def init_state(model, chart, x_init, target_log_density, cfg, rng):
    """Project the starting point onto the level set and cache its geometry."""
    res = project(chart, np.asarray(x_init, dtype=float), cfg.proj_cfg)
    if res.status != "converged":
        raise InitializationError(f"initial projection failed with status {res.status}")
    x = res.x_star
    cj, frame = _frame_at(model, chart, x, cfg, rng)
    return ChainState(x=x, jacobian=cj, frame=frame,
                      log_target=float(target_log_density(x)), k=chart.k)


def _rn_factor(D, B):
    """sqrt(det((D B)^T (D B))) via QR of D B: the product |prod R_ii|.

    Equals the product of singular values of D B; 0-dim frames give 1.
    """
    if B.shape[1] == 0:
        return 1.0
    R = np.linalg.qr(D @ B, mode="r")
    return float(np.abs(np.prod(np.diag(R))))


def ppmh_step(state, model, chart, target_log_density, cfg, rng,
              step_scale=None, v_coord=None):
    """One propose-and-project transition.  Returns (new_state, StepInfo).

    `v_coord`, when given, replaces the tangent draw (replay-style tests);
    the RNG is then not consumed for the proposal.
    """
    t0 = time.perf_counter()
    sv = cfg.step_scale if step_scale is None else step_scale
    if sv is None:
        d = max(state.frame.dim, 1)
        sv = 0.5 / math.sqrt(d)
    B = state.frame.basis
    v = rng.standard_normal(B.shape[1]) if v_coord is None else np.asarray(v_coord, dtype=float)

    def rejected(reason):
        return state, StepInfo(accepted=False, reason=reason, j_fwd=np.nan,
                               j_rev=np.nan, log_alpha=-np.inf,
                               elapsed=time.perf_counter() - t0)

    y_cand = state.x + sv * (B @ v)
    fwd = project(chart, y_cand, cfg.proj_cfg, warm=state.x)
    if fwd.status == "infeasible_region":
        return rejected("region_exit")
    if fwd.status != "converged":
        return rejected("projection_fail")
    x_prop = fwd.x_star

    try:
        D_fwd = projection_jacobian(chart, fwd, cfg.proj_cfg)
    except SingularKKTError:
        return rejected("singular_kkt")
    j_fwd = _rn_factor(D_fwd, B)

    try:
        cj_prop, frame_prop = _frame_at(model, chart, x_prop, cfg, rng,
                                        corr0=fwd.region_corr)
    except (OracleFailure, SingularityError):
        return rejected("oracle_fail")
    B_prop = frame_prop.basis

    if cfg.reverse_move == "verbatim":
        y_rev = x_prop - sv * (B @ v)
    else:
        y_rev = x_prop + B_prop @ (B_prop.T @ (state.x - x_prop))
    # the reverse projection reproduces the (region-interior) current state on
    # affine charts, so its membership check can be inherited from it
    rev = project(chart, y_rev, cfg.proj_cfg, warm=state.x, known_member=state.x)
    if rev.status == "infeasible_region":
        return rejected("region_exit")
    if rev.status != "converged":
        return rejected("projection_fail")
    if cfg.check_reverse:
        tol = 10.0 * cfg.proj_cfg.eps_feas * (1.0 + float(np.linalg.norm(state.x)))
        if float(np.linalg.norm(rev.x_star - state.x)) > tol:
            return rejected("projection_fail")

    try:
        D_rev = projection_jacobian(chart, rev, cfg.proj_cfg)
    except SingularKKTError:
        return rejected("singular_kkt")
    j_rev = _rn_factor(D_rev, B_prop)

    if not (np.isfinite(j_fwd) and np.isfinite(j_rev)) or j_fwd <= 0 or j_rev <= 0:
        return rejected("singular_kkt")

    log_t_prop = float(target_log_density(x_prop))
    log_alpha = (log_t_prop - state.log_target) + math.log(j_fwd) - math.log(j_rev)
    u = rng.uniform()
    info = StepInfo(accepted=False, reason="mh_reject", j_fwd=j_fwd, j_rev=j_rev,
                    log_alpha=log_alpha)
    if math.log(u) < log_alpha:
        new_state = ChainState(x=x_prop, jacobian=cj_prop, frame=frame_prop,
                               log_target=log_t_prop, k=chart.k)
        info = StepInfo(accepted=True, reason=None, j_fwd=j_fwd, j_rev=j_rev,
                        log_alpha=log_alpha)
        info.elapsed = time.perf_counter() - t0
        return new_state, info
    info.elapsed = time.perf_counter() - t0
    return state, info


def _dual_average_scale(model, chart, state, target_log_density, cfg, rng,
                        target_rate=0.3):
    """Pre-run dual averaging of log step_scale; frozen before recording."""
    d = max(state.frame.dim, 1)
    scale = cfg.step_scale if cfg.step_scale is not None else 0.5 / math.sqrt(d)
    if scale <= 0.0:
        return state, scale   # identity proposal: nothing to adapt
    mu = math.log(10.0 * scale)
    log_s = math.log(scale)
    log_s_bar, h_bar = log_s, 0.0
    gamma, t0, kappa = 0.05, 10.0, 0.75
    for t in range(1, cfg.adapt_steps + 1):
        state, info = ppmh_step(state, model, chart, target_log_density, cfg, rng,
                                step_scale=math.exp(log_s))
        a = math.exp(min(0.0, info.log_alpha)) if np.isfinite(info.log_alpha) else 0.0
        h_bar = (1 - 1 / (t + t0)) * h_bar + (target_rate - a) / (t + t0)
        log_s = mu - math.sqrt(t) / gamma * h_bar
        eta = t ** (-kappa)
        log_s_bar = eta * log_s + (1 - eta) * log_s_bar
    return state, math.exp(log_s_bar)


def run_chain(model, chart, x_init, target_log_density, cfg):
    """Run a full chain; RNG stream fully determined by cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    state = init_state(model, chart, x_init, target_log_density, cfg, rng)
    scale = cfg.step_scale
    if cfg.adapt_steps > 0:
        state, scale = _dual_average_scale(model, chart, state, target_log_density,
                                           cfg, rng)
    kept_x, kept = [], {"acc": [], "k": [], "lt": [], "rn": [], "rsn": [], "sec": []}
    n_acc = 0
    for step in range(cfg.n_samples):
        state, info = ppmh_step(state, model, chart, target_log_density, cfg, rng,
                                step_scale=scale)
        n_acc += info.accepted
        if step >= cfg.burn_in and (step - cfg.burn_in) % cfg.thin == 0:
            if cfg.record_samples:
                kept_x.append(state.x.copy())
            kept["acc"].append(info.accepted)
            kept["k"].append(state.k)
            kept["lt"].append(state.log_target)
            kept["rn"].append((info.j_fwd, info.j_rev))
            kept["rsn"].append(info.reason)
            kept["sec"].append(info.elapsed)
    n_amb = chart.n
    samples = np.asarray(kept_x) if kept_x else np.zeros((0, n_amb))
    return Chain(samples=samples,
                 accept_flags=np.asarray(kept["acc"], dtype=bool),
                 k_trace=np.asarray(kept["k"], dtype=int),
                 log_target_trace=np.asarray(kept["lt"], dtype=float),
                 rn_factors=np.asarray(kept["rn"], dtype=float).reshape(-1, 2),
                 reasons=kept["rsn"],
                 step_seconds=np.asarray(kept["sec"], dtype=float),
                 config=cfg,
                 acceptance_rate=n_acc / cfg.n_samples)
