import numpy as np
import pytest

from nmlsc.model import AffineChart, SphereLevelSet, lasso_solve
from nmlsc.projection import (ProjectionConfig, SingularKKTError,
                              affine_projection, kkt_matrix,
                              lasso_affine_projection, project, project_alm,
                              project_newton, projection_jacobian,
                              write_trace_csv)

CFG = ProjectionConfig()


class TestAffineFastPath:
    def test_fixed_point(self, tiny_lasso):
        data, lam, fit, _, _ = tiny_lasso
        chart_args = (data, fit.active_set, fit.signs, fit.theta_hat, lam)
        anchor_res = lasso_affine_projection(*chart_args, y0=data.response)
        again = lasso_affine_projection(*chart_args, y0=anchor_res.x_star)
        assert np.linalg.norm(again.x_star - anchor_res.x_star) < 1e-12
        assert anchor_res.status == "converged"
        # already-on-set point maps to itself with ~zero multipliers
        fixed = lasso_affine_projection(*chart_args, y0=anchor_res.x_star)
        assert np.linalg.norm(fixed.x_star - anchor_res.x_star) < 1e-12
        assert np.linalg.norm(fixed.multipliers) < 1e-10

    def test_matches_newton_and_refit(self, tiny_lasso):
        data, lam, fit, _, _ = tiny_lasso
        rng = np.random.default_rng(0)
        from nmlsc.model import LassoLevelSet
        chart = LassoLevelSet(data, fit.active_set, fit.signs, fit.theta_hat, lam)
        hits = 0
        for _ in range(20):
            y0 = data.response + 0.3 * rng.standard_normal(3)
            fast = affine_projection(chart, y0)
            if fast.status != "converged":
                continue
            newton = project_newton(chart, y0, CFG)
            assert newton.status == "converged"
            assert np.linalg.norm(fast.x_star - newton.x_star) < 1e-8
            refit = lasso_solve(data.design, fast.x_star, lam, tol=1e-12)
            assert refit.active_set == fit.active_set
            np.testing.assert_allclose(refit.theta_hat, fit.theta_hat, atol=1e-8)
            hits += 1
        assert hits >= 10

    def test_region_violation_flagged(self, tiny_lasso):
        data, lam, fit, _, _ = tiny_lasso
        from nmlsc.model import LassoLevelSet
        chart = LassoLevelSet(data, fit.active_set, fit.signs, fit.theta_hat, lam)
        B = np.linalg.svd(chart.A)[2][1:].T   # kernel direction
        far = chart.anchor() + 100.0 * B[:, 0]
        res = affine_projection(chart, far)
        assert res.status == "infeasible_region"


class TestNewton:
    def test_affine_one_step(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((2, 6))
        chart = AffineChart(A=A, offset=np.zeros(2), theta=rng.standard_normal(2))
        y0 = rng.standard_normal(6)
        res = project_newton(chart, y0, CFG)
        assert res.status == "converged"
        assert res.iterations <= 2
        ref = affine_projection(chart, y0)
        assert np.linalg.norm(res.x_star - ref.x_star) < 1e-10

    def test_sphere_superlinear_decay(self):
        chart = SphereLevelSet(5, 4.0)
        rng = np.random.default_rng(2)
        y0 = 3.0 * rng.standard_normal(5)
        res = project_newton(chart, y0, ProjectionConfig(eps_feas=1e-13),
                             record_trace=True)
        assert res.status == "converged"
        analytic = 2.0 * y0 / np.linalg.norm(y0)
        assert np.linalg.norm(res.x_star - analytic) < 1e-10
        feas = [t[1] for t in res.trace if t[1] > 0]
        ratios = [feas[i + 1] / feas[i] for i in range(len(feas) - 1)]
        assert len(ratios) >= 3
        # superlinear: ratios decrease and the last is tiny
        assert ratios[-1] < 0.1 * ratios[-2] or ratios[-1] < 1e-6
        assert all(ratios[i + 1] < ratios[i] for i in range(len(ratios) - 1))

    def test_newton_budget_exhaustion_falls_back_to_alm(self):
        chart = SphereLevelSet(4, 1.0)
        rng = np.random.default_rng(9)
        y0 = 3.0 * rng.standard_normal(4)
        starved = ProjectionConfig(max_newton_iter=1, eps_feas=1e-9)
        direct = project_newton(chart, y0, starved)
        assert direct.status == "max_iter"
        res = project(chart, y0, starved)
        assert res.method == "alm"
        assert res.status == "converged"
        assert abs(res.x_star @ res.x_star - 1.0) <= 10 * starved.eps_feas

    def test_trace_csv(self, tmp_path):
        chart = SphereLevelSet(3, 2.0)
        res = project_newton(chart, np.array([2.0, 1.0, 0.5]), CFG,
                             record_trace=True)
        path = tmp_path / "trace.csv"
        write_trace_csv(res, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iteration,feasibility,stationarity"
        assert len(lines) == len(res.trace) + 1


class TestALM:
    def test_affine_agreement(self):
        rng = np.random.default_rng(3)
        A = rng.standard_normal((2, 5))
        chart = AffineChart(A=A, offset=np.zeros(2), theta=rng.standard_normal(2))
        y0 = rng.standard_normal(5)
        res = project_alm(chart, y0, ProjectionConfig(eps_feas=1e-8))
        ref = affine_projection(chart, y0)
        assert res.status == "converged"
        assert np.linalg.norm(res.x_star - ref.x_star) < 1e-6

    def test_feasible_start_zero_iterations(self):
        chart = SphereLevelSet(4, 4.0)
        y0 = chart.anchor()
        res = project_alm(chart, y0, CFG)
        assert res.iterations == 0
        assert np.array_equal(res.x_star, y0)

    def test_tolerance_tightening_monotone(self):
        chart = SphereLevelSet(5, 4.0)
        rng = np.random.default_rng(4)
        y0 = 3.0 * rng.standard_normal(5)
        prev = None
        for eps in (1e-4, 1e-5, 1e-6, 1e-7):
            res = project_alm(chart, y0, ProjectionConfig(eps_feas=eps))
            assert res.status == "converged"
            if prev is not None:
                assert res.feas_residual <= prev + 1e-15
            prev = res.feas_residual


class TestProjectionJacobian:
    def test_affine_projector_identity(self):
        rng = np.random.default_rng(5)
        A = rng.standard_normal((2, 6))
        chart = AffineChart(A=A, offset=np.zeros(2), theta=rng.standard_normal(2))
        y0 = rng.standard_normal(6)
        res = affine_projection(chart, y0)
        DP = projection_jacobian(chart, res, CFG)
        ref = np.eye(6) - A.T @ np.linalg.solve(A @ A.T, A)
        assert np.max(np.abs(DP - ref)) < 1e-10
        assert np.max(np.abs(DP @ DP - DP)) < 1e-10
        assert np.max(np.abs(DP - DP.T)) < 1e-10
        sv = np.linalg.svd(DP, compute_uv=False)
        assert np.all(sv <= 1.0 + 1e-8)

    def test_finite_difference_on_sphere(self):
        chart = SphereLevelSet(4, 4.0)
        rng = np.random.default_rng(6)
        y0 = np.array([1.5, -2.0, 0.7, 0.9])
        cfg = ProjectionConfig(eps_feas=1e-12)
        res = project_newton(chart, y0, cfg)
        DP = projection_jacobian(chart, res, cfg)
        h = 1e-6
        fd = np.zeros((4, 4))
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            up = project_newton(chart, y0 + e, cfg).x_star
            dn = project_newton(chart, y0 - e, cfg).x_star
            fd[:, j] = (up - dn) / (2 * h)
        assert np.max(np.abs(fd - DP)) < 1e-4 * max(1.0, np.max(np.abs(DP)))

    def test_singular_kkt_detected(self):
        chart = SphereLevelSet(3, 1.0)
        res = project_newton(chart, np.array([2.0, 0.0, 0.0]),
                             ProjectionConfig())
        assert res.status == "converged"
        # at the solution the KKT matrix is regular; a huge cond cap check instead
        tight = ProjectionConfig(cond_cap=1.0 + 1e-9)
        with pytest.raises(SingularKKTError):
            projection_jacobian(chart, res, tight)

    def test_kkt_matrix_shape_and_symmetry(self):
        chart = SphereLevelSet(4, 4.0)
        res = project_newton(chart, np.array([1.0, 2.0, -1.0, 0.5]), CFG)
        K = kkt_matrix(chart, res.x_star, res.multipliers, CFG)
        assert K.matrix.shape == (5, 5)
        assert np.max(np.abs(K.matrix - K.matrix.T)) < 1e-12
        assert K.cond_estimate >= 1.0


class TestContracts:
    def test_converged_residual_contracts(self, tiny_lasso):
        data, lam, fit, _, _ = tiny_lasso
        from nmlsc.model import LassoLevelSet
        chart = LassoLevelSet(data, fit.active_set, fit.signs, fit.theta_hat, lam)
        rng = np.random.default_rng(7)
        scale = 1.0 + np.linalg.norm(data.response)
        for _ in range(10):
            y0 = data.response + 0.2 * rng.standard_normal(3)
            res = project(chart, y0, CFG)
            if res.status != "converged":
                continue
            assert res.feas_residual <= CFG.eps_feas
            assert res.stat_residual <= 10 * CFG.eps_feas * scale
            again = project(chart, res.x_star, CFG)
            assert np.linalg.norm(again.x_star - res.x_star) <= 10 * CFG.eps_feas
