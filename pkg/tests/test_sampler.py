import math

import numpy as np
import pytest

from nmlsc.model import (LassoModel, LikelihoodSpec, SoftThresholdModel,
                         SphereModel)
from nmlsc.sampler import (SamplerConfig, hausdorff_uniform_target,
                           init_state, make_likelihood_target, ppmh_step,
                           run_chain)


def toy_setup(n=6, lam=0.4, theta_p=0.8, theta0=0.9, sigma=0.7):
    model = SoftThresholdModel(n, lam)
    chart = model.chart(theta_p)
    spec = LikelihoodSpec(kind="gaussian_scalar", theta0=np.array([theta0]),
                          sigma=sigma)
    target = make_likelihood_target(spec, chart)
    return model, chart, spec, target


class TestStepBasics:
    def test_zero_step_stays_put(self):
        model, chart, _, target = toy_setup()
        cfg = SamplerConfig(n_samples=4, step_scale=0.0, seed=1)
        rng = np.random.default_rng(1)
        state = init_state(model, chart, chart.anchor(), target, cfg, rng)
        new, info = ppmh_step(state, model, chart, target, cfg, rng)
        assert info.accepted
        assert info.log_alpha == pytest.approx(0.0, abs=1e-12)
        assert info.j_fwd == pytest.approx(1.0) and info.j_rev == pytest.approx(1.0)
        assert np.linalg.norm(new.x - state.x) < 1e-12

    def test_identical_seeds_bit_identical(self):
        model, chart, _, target = toy_setup()
        cfg = SamplerConfig(n_samples=300, burn_in=50, seed=77,
                            target="likelihood_over_jacobian")
        a = run_chain(model, chart, chart.anchor(), target, cfg)
        b = run_chain(model, chart, chart.anchor(), target, cfg)
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.accept_flags, b.accept_flags)
        assert a.acceptance_rate == b.acceptance_rate

    def test_boundary_chain_length(self):
        model, chart, _, target = toy_setup()
        cfg = SamplerConfig(n_samples=6, burn_in=5, seed=0)
        chain = run_chain(model, chart, chart.anchor(), target, cfg)
        assert len(chain) == 1

    def test_thinning(self):
        model, chart, _, target = toy_setup()
        cfg = SamplerConfig(n_samples=20, burn_in=0, thin=4, seed=0)
        chain = run_chain(model, chart, chart.anchor(), target, cfg)
        assert len(chain) == 5


class TestInvariants:
    def test_level_set_membership_and_rn_positivity(self):
        model, chart, _, target = toy_setup()
        cfg = SamplerConfig(n_samples=800, burn_in=100, seed=5,
                            target="likelihood_over_jacobian")
        chain = run_chain(model, chart, chart.anchor(), target, cfg)
        c = chart.theta[0] + model.lam
        feas = np.abs(chain.samples.mean(axis=1) - c)
        assert np.max(feas) <= cfg.proj_cfg.eps_feas
        acc = chain.accept_flags
        assert np.all(np.isfinite(chain.rn_factors[acc]))
        assert np.all(chain.rn_factors[acc] > 0)

    def test_rejection_reasons_accounted(self):
        # a huge step scale forces region exits on a truncated lasso chart
        rng = np.random.default_rng(0)
        from nmlsc.model import Dataset, lasso_fit
        X = rng.standard_normal((6, 4))
        X /= np.linalg.norm(X, axis=0)
        y = X @ np.array([2.0, 0, 0, 0]) + 0.2 * rng.standard_normal(6)
        data = Dataset(design=X, response=y, noise_sd=0.2, seed=0)
        lam = 0.4 * np.max(np.abs(X.T @ y))
        fit = lasso_fit(data, lam)
        assert 1 <= fit.k < 4
        model = LassoModel(data, lam)
        chart = model.chart(fit)
        cfg = SamplerConfig(n_samples=400, seed=3, step_scale=50.0)
        chain = run_chain(model, chart, chart.anchor(),
                          hausdorff_uniform_target, cfg)
        reasons = [r for r in chain.reasons if r is not None]
        assert "region_exit" in reasons
        n_rejected = int(np.sum(~chain.accept_flags))
        assert len(reasons) == n_rejected

    def test_ergodicity_two_starts(self):
        model, chart, _, target = toy_setup(n=5)
        n = 5
        c = chart.theta[0] + model.lam
        # two distant feasible starts on the hyperplane
        x_a = np.full(n, c)
        x_b = np.full(n, c) + np.array([4.0, -4.0, 0.0, 0.0, 0.0])
        cfg = SamplerConfig(n_samples=20_000, burn_in=2000, seed=10,
                            target="likelihood_over_jacobian")
        means, ses = [], []
        for x0, seed in ((x_a, 10), (x_b, 11)):
            chain = run_chain(model, chart, x0, target,
                              SamplerConfig(n_samples=20_000, burn_in=2000,
                                            seed=seed,
                                            target="likelihood_over_jacobian"))
            vals = chain.samples[:, 0]
            from nmlsc.diagnostics import ess
            e = max(ess(vals), 4.0)
            means.append(float(np.mean(vals)))
            ses.append(float(np.std(vals, ddof=1) / math.sqrt(e)))
        gap = abs(means[0] - means[1])
        assert gap <= 4.0 * math.hypot(ses[0], ses[1])


class TestTargetMoments:
    def test_restricted_gaussian_moments(self):
        n, lam, theta_p, theta0, sigma = 6, 0.4, 0.8, 0.9, 0.7
        model, chart, spec, target = toy_setup(n, lam, theta_p, theta0, sigma)
        cfg = SamplerConfig(n_samples=20_000, burn_in=2000, seed=3,
                            target="likelihood_over_jacobian")
        chain = run_chain(model, chart, chart.anchor(), target, cfg)
        samples = chain.samples
        c = theta_p + lam
        cond_mean = np.full(n, theta0) + (c - theta0)
        cond_cov = sigma**2 * (np.eye(n) - np.ones((n, n)) / n)
        from nmlsc.diagnostics import ess
        for j in range(n):
            vals = samples[:, j]
            e = max(ess(vals), 4.0)
            se = np.std(vals, ddof=1) / math.sqrt(e)
            assert abs(np.mean(vals) - cond_mean[j]) <= 3.0 * se
        # covariance entries via batch means on centered products
        nb = 20
        batches = np.array_split(samples - cond_mean[None, :], nb)
        prods = np.array([np.mean(b[:, 0] * b[:, 1]) for b in batches])
        se01 = np.std(prods, ddof=1) / math.sqrt(nb)
        assert abs(np.mean(prods) - cond_cov[0, 1]) <= 3.0 * se01


class TestReplay:
    def test_affine_rn_factors_trivial(self):
        model, chart, _, target = toy_setup()
        cfg = SamplerConfig(n_samples=200, seed=8)
        chain = run_chain(model, chart, chart.anchor(),
                          hausdorff_uniform_target, cfg)
        acc = chain.accept_flags
        assert np.max(np.abs(chain.rn_factors[acc] - 1.0)) < 1e-10

    @pytest.mark.parametrize("reverse_move", ["verbatim", "symmetric"])
    def test_paired_forward_reverse_affine(self, reverse_move):
        model, chart, _, target = toy_setup()
        cfg = SamplerConfig(n_samples=10, seed=21, reverse_move=reverse_move)
        rng = np.random.default_rng(21)
        state = init_state(model, chart, chart.anchor(),
                           hausdorff_uniform_target, cfg, rng)
        pairs = 0
        for _ in range(200):
            v = rng.standard_normal(state.frame.dim)
            new, info = ppmh_step(state, model, chart,
                                  hausdorff_uniform_target, cfg, rng, v_coord=v)
            if not info.accepted:
                continue
            sv = 0.5 / math.sqrt(state.frame.dim)
            v_rev = new.frame.basis.T @ (state.x - new.x) / sv
            _, info2 = ppmh_step(new, model, chart, hausdorff_uniform_target,
                                 cfg, rng, v_coord=v_rev)
            assert abs(math.log(info2.j_fwd) - math.log(info.j_rev)) < 1e-6
            assert abs(math.log(info2.j_rev) - math.log(info.j_fwd)) < 1e-6
            state = new
            pairs += 1
        assert pairs >= 50

    def test_paired_forward_reverse_sphere_symmetric(self):
        model = SphereModel(5)
        chart = model.chart(4.0)
        cfg = SamplerConfig(n_samples=10, seed=5, reverse_move="symmetric",
                            step_scale=0.2)
        rng = np.random.default_rng(5)
        state = init_state(model, chart, chart.anchor(),
                           hausdorff_uniform_target, cfg, rng)
        pairs = 0
        nontrivial = 0
        for _ in range(300):
            v = rng.standard_normal(state.frame.dim)
            new, info = ppmh_step(state, model, chart,
                                  hausdorff_uniform_target, cfg, rng, v_coord=v)
            if not info.accepted:
                continue
            v_rev = new.frame.basis.T @ (state.x - new.x) / cfg.step_scale
            _, info2 = ppmh_step(new, model, chart, hausdorff_uniform_target,
                                 cfg, rng, v_coord=v_rev)
            # the replayed forward factor IS the recorded reverse factor
            assert abs(math.log(info2.j_fwd) - math.log(info.j_rev)) < 1e-6
            # the replayed reverse factor matches the recorded forward one only
            # up to curvature corrections of order step^2 on a curved manifold
            assert abs(math.log(info2.j_rev) - math.log(info.j_fwd)) < 0.2
            nontrivial += abs(info.j_fwd - 1.0) > 1e-3
            state = new
            pairs += 1
        assert pairs >= 100
        assert nontrivial >= 50   # the sphere actually exercises J != 1


class TestChainExport:
    def test_csv_columns(self, tmp_path):
        model, chart, _, target = toy_setup()
        cfg = SamplerConfig(n_samples=50, seed=2)
        chain = run_chain(model, chart, chart.anchor(),
                          hausdorff_uniform_target, cfg)
        path = tmp_path / "chain.csv"
        spath = tmp_path / "samples.csv"
        chain.export_csv(path, samples_path=spath)
        header = path.read_text().splitlines()[0]
        assert header == "step,accepted,k,log_target,j_fwd,j_rev,reason"
        arr = np.loadtxt(spath, delimiter=",")
        assert arr.shape == chain.samples.shape

    def test_sample_export_size_guard(self, tmp_path):
        model, chart, _, target = toy_setup()
        cfg = SamplerConfig(n_samples=30, seed=2)
        chain = run_chain(model, chart, chart.anchor(),
                          hausdorff_uniform_target, cfg)
        from nmlsc.model import ConfigurationError
        with pytest.raises(ConfigurationError):
            chain.export_csv(tmp_path / "c.csv", samples_path=tmp_path / "s.csv",
                             max_sample_rows=10)


class TestAdaptation:
    def test_dual_averaging_moves_toward_target_rate(self):
        model, chart, _, target = toy_setup(n=8)
        cfg = SamplerConfig(n_samples=2500, burn_in=500, seed=4,
                            target="likelihood_over_jacobian",
                            step_scale=8.0, adapt_steps=800)
        chain = run_chain(model, chart, chart.anchor(), target, cfg)
        # raw scale 8.0 would reject nearly everything; adaptation recovers
        assert 0.1 <= chain.acceptance_rate <= 0.75
