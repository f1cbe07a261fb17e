"""Command-line front end.

Subcommands: gen-data, nml-path, bench, study.  Each takes --config <path>,
--out <dir> and an optional --seed overriding the config's seed.  Configs are
plain-text key=value files with [section] headers.  Every run writes a
manifest.txt listing the emitted files with their sha256 content hashes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import nml
from .model import (ConfigurationError, gen_toeplitz_data, load_dataset,
                    save_dataset)
from .sampler import SamplerConfig


class ConfigError(ValueError):
    """Malformed run configuration; message carries the offending line."""


# ---------------------------------------------------------------------------
# Config parsing: [section] headers, key=value lines, '#' comments
# ---------------------------------------------------------------------------

def parse_config(path):
    sections = {}
    current = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if not current:
                raise ConfigError(f"{path}:{lineno}: empty section name")
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        if current is None:
            raise ConfigError(f"{path}:{lineno}: key=value before any [section]")
        key, _, val = line.partition("=")
        sections[current][key.strip()] = val.strip()
    return sections


def serialize_config(sections):
    out = []
    for name, kv in sections.items():
        out.append(f"[{name}]")
        for key, val in kv.items():
            out.append(f"{key}={val}")
        out.append("")
    return "\n".join(out)


def _get(sections, section, key, default=None, cast=str, required=False):
    kv = sections.get(section, {})
    if key not in kv:
        if required:
            raise ConfigError(f"missing required key {key!r} in [{section}]")
        return default
    try:
        if cast is bool:
            return kv[key].lower() in ("1", "true", "yes", "on")
        return cast(kv[key])
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r} in [{section}]: {kv[key]!r}") from exc


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------------------
# Output plumbing
# ---------------------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def write_manifest(out_dir, files):
    out_dir = Path(out_dir)
    lines = [f"{_sha256(out_dir / f)}  {f}" for f in sorted(files)]
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _write_csv(path, header, rows):
    def norm(cell):
        if isinstance(cell, (float, np.floating)):
            return repr(float(cell))
        if isinstance(cell, np.integer):
            return int(cell)
        return cell

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([norm(c) for c in row])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _load_or_generate_data(cfg, out_dir, seed_override=None):
    csv_path = _get(cfg, "data", "csv")
    if csv_path:
        meta_path = _get(cfg, "data", "meta", required=True)
        return load_dataset(csv_path, meta_path)
    n = _get(cfg, "data", "n", cast=int, required=True)
    p = _get(cfg, "data", "p", cast=int, required=True)
    rho = _get(cfg, "data", "rho", default=0.0, cast=float)
    snr = _get(cfg, "data", "snr", default=3.0, cast=float)
    seed = _get(cfg, "data", "seed", default=0, cast=int)
    if seed_override is not None:
        seed = seed_override
    beta = _floats(_get(cfg, "data", "beta_star", required=True))
    return gen_toeplitz_data(n, p, rho, beta, snr, seed)


def cmd_gen_data(cfg, out_dir, seed_override):
    data = _load_or_generate_data(cfg, out_dir, seed_override)
    save_dataset(data, out_dir / "dataset.csv", out_dir / "dataset_meta.txt")
    write_manifest(out_dir, ["dataset.csv", "dataset_meta.txt"])
    return 0


def _lambda_grid(cfg, data):
    pts = _get(cfg, "path", "grid_points", default=40, cast=int)
    if pts < 1:
        raise ConfigError("grid_points must be at least 1")
    lam_min = _get(cfg, "path", "lambda_min", cast=float)
    lam_max = _get(cfg, "path", "lambda_max", cast=float)
    if lam_max is None:
        lam_max = 1.05 * float(np.max(np.abs(data.design.T @ data.response)))
    if lam_min is None:
        lam_min = 1e-2 * lam_max
    if not lam_min < lam_max:
        raise ConfigError("lambda_min must be below lambda_max")
    if pts == 1:
        return np.array([lam_min])
    return np.geomspace(lam_min, lam_max, pts)


def _complexity_config(cfg, data, seed):
    density = _get(cfg, "sampler", "density", default="analytic")
    bridge_cfg = None
    if density == "bridge":
        bridge_cfg = SamplerConfig(
            n_samples=_get(cfg, "path", "samples", default=4000, cast=int),
            burn_in=_get(cfg, "path", "burn_in", default=500, cast=int),
            seed=seed,
            target="likelihood_over_jacobian",
            step_scale=_get(cfg, "sampler", "step_scale", cast=float, default=None),
        )
    return nml.ComplexityConfig(
        box_sd=_get(cfg, "sampler", "box_sd", default=6.0, cast=float),
        mass_nodes=_get(cfg, "sampler", "mass_nodes", default=2048, cast=int),
        density=density,
        bridge_sampler=bridge_cfg,
        seed=seed,
    )


def cmd_nml_path(cfg, out_dir, seed_override):
    seed = seed_override if seed_override is not None else _get(
        cfg, "data", "seed", default=0, cast=int)
    data = _load_or_generate_data(cfg, out_dir, seed_override)
    lambdas = _lambda_grid(cfg, data)
    ccfg = _complexity_config(cfg, data, seed)
    workers = _get(cfg, "path", "workers", default=1, cast=int)

    def one(lam):
        try:
            rec = nml.stochastic_complexity_local(data, lam, ccfg,
                                                  np.random.default_rng(seed))
            return rec, "ok"
        except Exception as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, lambdas))
    else:
        results = [one(lam) for lam in lambdas]

    rows = []
    for lam, (rec, status) in zip(lambdas, results):
        if rec is None:
            rows.append([float(lam)] + [""] * 8 + [status])
        else:
            rows.append([rec.lam, rec.k, rec.log_complexity,
                         rec.log_complexity_se, rec.nll_fit,
                         rec.codelength, rec.bic, rec.aic,
                         rec.asymptotic_nml, status])
    _write_csv(out_dir / "path.csv",
               ["lambda", "k", "log_complexity", "se", "nll_fit", "codelength",
                "bic", "aic", "asymptotic_nml", "status"], rows)

    ok = [rec for rec, st in results if rec is not None]
    files = ["path.csv"]
    if ok:
        # selections and held-out evaluation against a fresh draw of the process
        selected = {}
        for crit, keyf in (("nml", lambda r: r.codelength),
                           ("bic", lambda r: r.bic),
                           ("aic", lambda r: r.aic),
                           ("asymptotic_nml", lambda r: r.asymptotic_nml)):
            selected[crit] = min(ok, key=keyf).lam
        cv_lam, _, _ = nml.cv_select(data, lambdas,
                                     fold_seed=_get(cfg, "path", "fold_seed",
                                                    default=0, cast=int))
        selected["cv_5fold"] = cv_lam
        test = gen_toeplitz_data(data.n, data.p, data.meta.get("rho", 0.0),
                                 data.meta.get("beta_star", np.zeros(data.p)),
                                 data.meta.get("snr", 3.0), seed=data.seed + 10_000)
        sel_rows = []
        for crit, lam in selected.items():
            mse, _ = nml.heldout_mse(data, test.design, test.response, lam)
            sel_rows.append([crit, float(lam), mse])
        _write_csv(out_dir / "selection.csv",
                   ["criterion", "selected_lambda", "heldout_mse"], sel_rows)
        files.append("selection.csv")
    write_manifest(out_dir, files)
    # per-cell failures are recorded in-row; the artifacts themselves exist
    return 0


def cmd_bench(cfg, out_dir, seed_override):
    seed = seed_override if seed_override is not None else _get(
        cfg, "bench", "seed", default=0, cast=int)
    cells = []
    n_sweep = _get(cfg, "bench", "n_sweep", default="")
    p_sweep = _get(cfg, "bench", "p_sweep", default="")
    k_t = _get(cfg, "bench", "k", default=5, cast=int)
    if n_sweep:
        p_fixed = _get(cfg, "bench", "p_fixed", default=200, cast=int)
        cells += [dict(n=int(v), p=p_fixed, k=k_t) for v in _floats(n_sweep)]
    if p_sweep:
        n_fixed = _get(cfg, "bench", "n_fixed", default=100, cast=int)
        cells += [dict(n=n_fixed, p=int(v), k=k_t) for v in _floats(p_sweep)]
    if not cells:
        raise ConfigError("bench needs n_sweep and/or p_sweep in [bench]")
    rep = diag.scaling_benchmark(
        cells,
        steps_per_cell=_get(cfg, "bench", "steps_per_cell", default=30, cast=int),
        seed=seed,
        seeds_per_cell=_get(cfg, "bench", "seeds_per_cell", default=2, cast=int),
        min_batch_seconds=_get(cfg, "bench", "min_batch_seconds", default=1e-2,
                               cast=float))
    _write_csv(out_dir / "scaling.csv",
               ["n", "p", "k", "mean_step_seconds", "sd"],
               [[r[0], r[1], r[2], r[3], r[4]] for r in rep.grid])
    _write_csv(out_dir / "scaling_summary.csv",
               ["fitted_exponent_vs_n", "dimension_invariance_ratio"],
               [[rep.fitted_exponent_vs_n if rep.fitted_exponent_vs_n is not None else "",
                 rep.dimension_invariance_ratio if rep.dimension_invariance_ratio is not None else ""]])
    write_manifest(out_dir, ["scaling.csv", "scaling_summary.csv"])
    return 0


def cmd_study(cfg, out_dir, seed_override):
    kind = _get(cfg, "study", "kind", required=True)
    seed = seed_override if seed_override is not None else _get(
        cfg, "study", "seed", default=0, cast=int)
    files = []
    if kind == "slope":
        ns = [int(v) for v in _floats(_get(cfg, "study", "sample_sizes",
                                           default="50,100,200,400"))]
        study = nml.asymptotic_slope_study(
            sample_sizes=tuple(ns),
            p=_get(cfg, "study", "p", default=6, cast=int),
            beta=_floats(_get(cfg, "study", "beta", default="3.0,2.0")),
            lam_over_sigma=_get(cfg, "study", "lam_over_sigma", default=2.6,
                                cast=float),
            n_seeds=_get(cfg, "study", "n_seeds", default=16, cast=int),
            base_seed=seed + 300)
        _write_csv(out_dir / "slope_study.csv",
                   ["n", "mean_log_complexity", "se", "n_used", "residual"],
                   [[int(n), m, s, int(c), r]
                    for n, m, s, c, r in zip(study.sample_sizes, study.mean_log_c,
                                             study.se_log_c, study.n_used,
                                             study.fit.residuals)])
        _write_csv(out_dir / "slope_fit.csv", ["slope", "intercept", "k"],
                   [[study.fit.slope, study.fit.intercept, study.k]])
        files += ["slope_study.csv", "slope_fit.csv"]
    elif kind == "tolerance":
        from .model import SphereModel
        n_amb = _get(cfg, "study", "ambient_dim", default=6, cast=int)
        model = SphereModel(n_amb)
        chart = model.chart(_get(cfg, "study", "level", default=4.0, cast=float))
        eps_list = _floats(_get(cfg, "study", "eps_list",
                                default="1e-4,1e-5,1e-6,1e-9"))
        scfg = SamplerConfig(
            n_samples=_get(cfg, "study", "samples", default=3000, cast=int),
            burn_in=_get(cfg, "study", "burn_in", default=300, cast=int),
            seed=seed, step_scale=_get(cfg, "study", "step_scale", default=0.4,
                                       cast=float))
        study = diag.tolerance_bias_study(model, chart, eps_list,
                                          lambda x: float(x @ x), scfg,
                                          solver="alm")
        _write_csv(out_dir / "tolerance_study.csv",
                   ["eps_feas", "deviation", "noise_se", "fitted_c"],
                   [[e, d, study.combined_se,
                     study.fitted_c if study.fitted_c is not None else ""]
                    for e, d in study.points])
        files.append("tolerance_study.csv")
    elif kind == "bias":
        data = _load_or_generate_data(cfg, out_dir, seed_override)
        lam, fit = diag.lambda_for_k(data, _get(cfg, "study", "k", default=1,
                                                cast=int))
        from .model import LassoModel, LikelihoodSpec
        from .oracle import OracleConfig
        model = LassoModel(data, lam)
        chart = model.chart(fit)
        spec = LikelihoodSpec(kind="gaussian_regression",
                              theta0=fit.dense(data.p), sigma=data.noise_sd,
                              design=data.design)
        ocfg = OracleConfig(num_samples=3)
        pol_a = nml.sjo_policy_factor(model, chart, ocfg)
        pol_b = nml.sjo_policy_factor(
            model, chart, OracleConfig(num_samples=3, policy="mean_element"))
        n_draws = _get(cfg, "study", "samples", default=20000, cast=int)
        res = nml.bias_diagnostic(model, chart, spec, pol_a, pol_b, n_draws,
                                  np.random.default_rng(seed))
        _write_csv(out_dir / "bias_study.csv", ["value", "std_err", "n"],
                   [[res.value, res.std_err, res.n_used]])
        files.append("bias_study.csv")
    else:
        raise ConfigError(f"unknown study kind {kind!r}")
    write_manifest(out_dir, files)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="nmlsc",
                                     description="NML stochastic complexity toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "nml-path", "bench", "study"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "nml-path": cmd_nml_path,
    "bench": cmd_bench,
    "study": cmd_study,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        cfg = parse_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](cfg, out_dir, args.seed)
    except (ConfigError, ConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
