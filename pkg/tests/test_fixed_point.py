import numpy as np
import pytest

from helpers import mp_params, mp_stieltjes, threeclass_params

from specbulk.errors import ValidationError
from specbulk.fixed_point import (
    SolverOptions,
    g_derivative,
    initial_guess,
    psi_step,
    solve_g,
    solve_grid,
)
from specbulk.model import ModelParams, validate_model


class TestPsiStep:
    def test_zero_start_single_class(self):
        # with g = 0 the inner matrix is I and the trace term equals 1
        params = mp_params(1, 1, p=8)
        f = psi_step(np.zeros(1, dtype=complex), 2j, params)
        np.testing.assert_allclose(f, [-1.0 / (2j - 1.0)], rtol=1e-15)

    def test_closed_form_solution_is_fixed(self):
        params = mp_params(2, 1, p=8)
        g_star = np.array([mp_stieltjes(2j, 2.0) / 2.0])
        f = psi_step(g_star, 2j, params)
        assert np.abs(f - g_star).max() <= 1e-14 * np.abs(g_star).max()

    def test_symmetric_classes_stay_symmetric(self):
        cov = np.eye(6)
        params = validate_model(
            ModelParams(p=6, class_sizes=(3, 3), covariances=(cov, cov))
        )
        g = np.array([0.1 + 0.2j, 0.1 + 0.2j])
        f = psi_step(g, 1 + 1j, params)
        assert f[0] == f[1]


class TestSolveG:
    def test_large_z_asymptote(self, threeclass256):
        for params in (mp_params(2, 1, p=8), threeclass256):
            point = solve_g(1e9j, params)
            assert np.abs(params.c0 * 1e9j * point.g + 1.0).max() <= 1e-6

    def test_mp_closed_form_negative_axis(self):
        params = mp_params(2, 1, p=16)
        point = solve_g(-1.0, params)
        m = params.c0 * complex(params.c @ point.g)
        ref = mp_stieltjes(-1.0 + 0j, 2.0)
        assert m.real > 0 and abs(m.imag) < 1e-12
        assert abs(m - ref) <= 1e-10 * abs(ref)

    def test_mp_against_eigenvalue_average(self):
        # brute-force oracle: spectral average of 1/(lam - z) at p = 4096
        from specbulk.montecarlo import sample_w

        params = mp_params(2, 1, p=4096)
        sample = sample_w(params, 123)
        m_emp = np.mean(1.0 / (sample.eigenvalues_wtw + 1.0))
        point = solve_g(-1.0, mp_params(2, 1, p=16))
        m_det = 2.0 * point.g[0].real
        assert abs(m_emp - m_det) <= 1e-3

    def test_conjugate_symmetry(self, threeclass256):
        z = 1.3 + 0.7j
        up = solve_g(z, threeclass256)
        dn = solve_g(np.conj(z), threeclass256)
        np.testing.assert_allclose(dn.g, np.conj(up.g), rtol=1e-9)
        np.testing.assert_allclose(dn.m_mu, np.conj(up.m_mu), rtol=1e-9)

    def test_consistency_relation(self, threeclass256):
        # c0 g_a = -1/(z (1 + gt_a))
        z = 0.8 + 0.5j
        pt = solve_g(z, threeclass256)
        lhs = threeclass256.c0 * pt.g
        rhs = -1.0 / (z * (1.0 + pt.g_tilde))
        assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(lhs).max()

    def test_uniqueness_from_random_starts(self):
        params = threeclass_params(64)
        z = 1.0 + 2.0j
        opts = SolverOptions(tol=1e-12)
        reference = solve_g(z, params, opts)
        rng = np.random.default_rng(8)
        cap = 1.0 / (params.c0 * z.imag)
        for _ in range(16):
            g0 = rng.uniform(-1, 1, 3) * cap + 1j * rng.uniform(0, 1, 3) * cap
            pt = solve_g(z, params, opts, warm_start=g0)
            assert np.abs(pt.g - reference.g).max() <= 10 * opts.tol * np.abs(
                reference.g
            ).max()

    def test_half_plane_constraints(self, threeclass256):
        rng = np.random.default_rng(5)
        for _ in range(10):
            z = complex(rng.uniform(-5, 28), rng.choice([-1, 1]) * 10 ** rng.uniform(-2, 1))
            pt = solve_g(z, threeclass256)
            sign = np.sign(z.imag)
            assert (sign * pt.g.imag >= 0).all()
            assert (sign * (z * pt.g).imag >= -1e-13).all()
            assert (threeclass256.c0 * np.abs(pt.g) <= 1 / abs(z.imag) * (1 + 1e-9)).all()

    def test_stieltjes_asymptote_rate(self):
        # |c0 z g + 1| <= C'/y along z = iy: the constant fitted on the
        # lower decade must keep bounding the tail (the 1/y law sets in
        # once y clears the covariance scale C_max ~ 40)
        params = threeclass_params(64)
        ys = np.logspace(0, 6, 13)
        devs = []
        for y in ys:
            pt = solve_g(1j * y, params)
            devs.append(np.abs(params.c0 * 1j * y * pt.g + 1.0).max())
        scaled = np.asarray(devs) * ys
        c_fit = scaled[ys <= 100.0].max()
        assert (scaled[ys > 100.0] <= 1.05 * c_fit).all()

    def test_banach_regime_monotone_residuals(self):
        # pure undamped Picard above the contraction threshold, checked
        # down to just above the floating-point noise floor
        params = threeclass_params(64)
        eta0 = params.c_max * np.sqrt(2 * params.k / params.c0)
        z = 1.0 + 1.1j * eta0
        g = initial_guess(z, params)
        resids = []
        for _ in range(60):
            f = psi_step(g, z, params)
            resid = np.abs(f - g).max() / np.abs(g).max()
            if resid < 1e-13:
                break
            resids.append(resid)
            g = f
        assert len(resids) >= 5
        assert all(r2 < r1 for r1, r2 in zip(resids, resids[1:]))

    def test_zero_rejected(self):
        with pytest.raises(ValidationError):
            solve_g(0.0, mp_params(1, 1, p=4))

    def test_unvalidated_params_rejected(self):
        raw = ModelParams(p=4, class_sizes=(4,), covariances=(np.eye(4),))
        with pytest.raises(ValidationError, match="validate_model"):
            solve_g(2j, raw)


class TestSolveGrid:
    def test_single_point_matches_solve_g(self):
        params = mp_params(1, 1, p=8)
        single = solve_grid([2j], params)[0]
        direct = solve_g(2j, params)
        np.testing.assert_allclose(single.g, direct.g, rtol=1e-12)

    def test_conjugate_pairs(self):
        params = mp_params(2, 1, p=8)
        pts = solve_grid([1 + 1j, 1 - 1j, 2 + 0.5j, 2 - 0.5j], params)
        np.testing.assert_allclose(pts[1].g, np.conj(pts[0].g), rtol=1e-10)
        np.testing.assert_allclose(pts[3].g, np.conj(pts[2].g), rtol=1e-10)

    def test_real_points_rejected(self):
        with pytest.raises(ValidationError, match="explicit eta"):
            solve_grid([2j, 1.0], mp_params(1, 1, p=4))

    def test_empty_grid_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            solve_grid([], mp_params(1, 1, p=4))

    def test_error_annotated_with_index(self):
        from specbulk.errors import NonConvergenceError

        params = mp_params(1, 1, p=4)
        starved = SolverOptions(tol=1e-12, max_iter=3)
        with pytest.raises(NonConvergenceError, match="grid index 1"):
            solve_grid([1e9j, 0.5 + 1e-8j], params, starved)

    def test_eta_descent_stabilizes(self, threeclass256):
        # inside the bulk the density stabilizes between eta=1e-3 and 1e-4
        d3 = solve_g(5.0 + 1e-3j, threeclass256).m_mu.imag / np.pi
        d4 = solve_g(5.0 + 1e-4j, threeclass256).m_mu.imag / np.pi
        assert abs(d3 - d4) / d4 <= 5e-3


class TestDerivative:
    def test_large_z_asymptote(self):
        params = mp_params(2, 1, p=8)
        pt = solve_g(1e6j, params)
        d = g_derivative(pt, params)
        np.testing.assert_allclose(d, [1.0 / (params.c0 * (1e6j) ** 2)], rtol=1e-5)

    def test_matches_finite_differences_mp(self):
        params = mp_params(2, 1, p=16)
        opts = SolverOptions(tol=1e-14)
        pt = solve_g(-1.0, params, opts)
        d = g_derivative(pt, params)
        h = 1e-5
        fd = (solve_g(-1.0 + h, params, opts).g - solve_g(-1.0 - h, params, opts).g) / (2 * h)
        assert np.abs(d - fd).max() / np.abs(fd).max() <= 1e-6

    def test_matches_finite_differences_threeclass(self, threeclass256):
        opts = SolverOptions(tol=1e-14)
        pt = solve_g(2j, threeclass256, opts)
        d = g_derivative(pt, threeclass256)
        h = 1e-5
        fd = (solve_g(2j + h, threeclass256, opts).g
              - solve_g(2j - h, threeclass256, opts).g) / (2 * h)
        assert np.abs(d - fd).max() / np.abs(fd).max() <= 1e-6


class TestSolverOptions:
    def test_validation(self):
        with pytest.raises(ValidationError):
            SolverOptions(tol=0.0)
        with pytest.raises(ValidationError):
            SolverOptions(max_iter=0)
        with pytest.raises(ValidationError):
            SolverOptions(damping=1.5)
        with pytest.raises(ValidationError):
            SolverOptions(continuation_start_im=0.0)
