import numpy as np
import pytest

from fedga import (ContractionKernel, StepSchedule, contraction_product,
                   covariance_pack, omega_max, omega_stat, q_matrix,
                   sigma_asymptotic, sigma_n, sigma_tilde_n, simulate_aggr_ga,
                   simulate_client_ga, simulate_fclt)
from fedga.gauss import (_psd_sqrt, aggr_ga_covariance_recursion,
                         aggr_ga_paths, client_ga_paths, fclt_paths)
from fedga.graph import banded_connection, rho_mix_connection

SCHED = StepSchedule(eta0=0.3, beta=0.75)
A_NONDIAG = np.array([[2.0, 0.4], [0.4, 1.0]])


def brute_product(A, sched, s, t):
    out = np.eye(A.shape[0])
    for j in range(s + 1, t + 1):
        out = (np.eye(A.shape[0]) - sched.eta(j) * A) @ out
    return out


class TestContractionKernel:
    def test_requires_symmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            ContractionKernel(np.array([[1.0, 0.5], [0.0, 1.0]]), SCHED, 5)

    def test_requires_positive_definite(self):
        with pytest.raises(ValueError, match="positive definite"):
            ContractionKernel(np.diag([1.0, -0.5]), SCHED, 5)

    def test_warns_on_non_contractive_step(self):
        with pytest.warns(UserWarning, match="contraction"):
            ContractionKernel(np.eye(2) * 5.0, SCHED, 5)

    def test_product_matches_brute_force(self):
        n = 12
        kernel = ContractionKernel(A_NONDIAG, SCHED, n)
        for s, t in [(0, 0), (0, 5), (3, 3), (2, 9), (0, 12), (11, 12)]:
            expected = brute_product(A_NONDIAG, SCHED, s, t)
            assert np.allclose(contraction_product(kernel, s, t), expected,
                               atol=1e-12)

    def test_product_bounds(self):
        kernel = ContractionKernel(A_NONDIAG, SCHED, 5)
        with pytest.raises(ValueError):
            contraction_product(kernel, 3, 2)
        with pytest.raises(ValueError):
            contraction_product(kernel, 0, 6)

    def test_unit_step_size_is_finite(self):
        # eta_1 = 1 makes the first factor exactly zero for a unit eigenvalue;
        # all downstream products must stay finite
        sched = StepSchedule(eta0=1.0, beta=0.75)
        with pytest.warns(UserWarning, match="contraction"):
            kernel = ContractionKernel(np.eye(2), sched, 20)
        assert np.isfinite(sigma_n(kernel, np.eye(2))).all()
        assert np.isfinite(sigma_tilde_n(kernel, np.eye(2))).all()
        assert np.allclose(contraction_product(kernel, 0, 20), 0.0)


class TestQMatrix:
    def test_matches_brute_force(self):
        n = 10
        kernel = ContractionKernel(A_NONDIAG, SCHED, n)
        for s in (1, 4, n):
            expected = np.zeros((2, 2))
            for j in range(s, n + 1):
                expected += brute_product(A_NONDIAG, SCHED, s, j)
            expected *= SCHED.eta(s)
            assert np.allclose(q_matrix(kernel, s), expected, atol=1e-12)

    def test_bounds(self):
        kernel = ContractionKernel(A_NONDIAG, SCHED, 5)
        with pytest.raises(ValueError):
            q_matrix(kernel, 0)


class TestCovariances:
    def test_sigma_n_matches_brute_force(self):
        n = 15
        v_K = np.array([[1.5, 0.2], [0.2, 0.7]])
        kernel = ContractionKernel(A_NONDIAG, SCHED, n)
        expected = np.zeros((2, 2))
        for s in range(1, n + 1):
            Q = q_matrix(kernel, s)
            expected += Q @ v_K @ Q.T
        expected /= n
        assert np.allclose(sigma_n(kernel, v_K), expected, atol=1e-12)

    def test_sigma_tilde_n_matches_brute_force(self):
        n = 15
        v_K = np.array([[1.5, 0.2], [0.2, 0.7]])
        kernel = ContractionKernel(A_NONDIAG, SCHED, n)
        expected = np.zeros((2, 2))
        for s in range(1, n + 1):
            P = brute_product(A_NONDIAG, SCHED, s, n)
            expected += SCHED.eta(s) ** 2 * P @ v_K @ P.T
        expected *= n ** SCHED.beta
        assert np.allclose(sigma_tilde_n(kernel, v_K), expected, atol=1e-12)

    def test_sigma_asymptotic_closed_form(self):
        v_K = np.array([[1.0, 0.3], [0.3, 2.0]])
        K = 7
        Ainv = np.linalg.inv(A_NONDIAG)
        expected = Ainv @ (K * v_K) @ Ainv.T
        assert np.allclose(sigma_asymptotic(A_NONDIAG, v_K, K), expected)

    def test_sigma_asymptotic_singular_raises(self):
        with pytest.raises(np.linalg.LinAlgError):
            sigma_asymptotic(np.zeros((2, 2)), np.eye(2), 3)

    def test_convergence_to_asymptotic(self):
        # |K Sigma_n - Sigma|_F decreases along n when the averaging window
        # eta_n^{-1} is well inside n
        v_K = np.eye(2) * 0.5
        K = 5
        sched = StepSchedule(eta0=0.9, beta=0.75)
        sigma = sigma_asymptotic(np.eye(2), v_K, K)
        errs = [np.linalg.norm(K * sigma_n(ContractionKernel(np.eye(2), sched, n), v_K) - sigma)
                for n in (200, 800, 3200)]
        assert errs[2] < errs[1] < errs[0]

    def test_covariance_pack_consistency(self):
        v_K = np.eye(2)
        kernel = ContractionKernel(A_NONDIAG, SCHED, 20)
        pack = covariance_pack(kernel, v_K, 4)
        assert np.allclose(pack.sigma_n, sigma_n(kernel, v_K))
        assert np.allclose(pack.sigma_tilde_n, sigma_tilde_n(kernel, v_K))
        assert np.allclose(pack.sigma_asym, sigma_asymptotic(A_NONDIAG, v_K, 4))


class TestOmega:
    def test_brute_force_small_t(self):
        n = 8
        kernel = ContractionKernel(A_NONDIAG, SCHED, n)
        for t in (1, 3, 8):
            def b_matrix(s):
                out = np.zeros((2, 2))
                for j in range(s, t + 1):
                    out += brute_product(A_NONDIAG, SCHED, s, j)
                return SCHED.eta(s) * out
            expected = np.linalg.norm(b_matrix(1))
            for s in range(2, t + 1):
                expected += np.linalg.norm(b_matrix(s) - b_matrix(s - 1))
            assert omega_stat(kernel, t) == pytest.approx(expected, rel=1e-10)

    def test_omega_max_is_max(self):
        kernel = ContractionKernel(np.eye(2), SCHED, 30)
        vals = [omega_stat(kernel, t) for t in range(1, 31)]
        assert omega_max(kernel) == pytest.approx(max(vals))

    def test_bounds(self):
        kernel = ContractionKernel(np.eye(2), SCHED, 5)
        with pytest.raises(ValueError):
            omega_stat(kernel, 0)


class TestPsdSqrt:
    def test_square_of_root(self):
        M = np.array([[2.0, 0.5], [0.5, 1.0]])
        R = _psd_sqrt(M)
        assert np.allclose(R @ R, M)

    def test_rejects_indefinite(self):
        with pytest.raises(np.linalg.LinAlgError):
            _psd_sqrt(np.diag([1.0, -0.5]))


class TestAggrGA:
    def test_covariance_matches_recursion(self):
        n, K = 200, 6
        v_K = np.array([[0.8, 0.1], [0.1, 0.5]])
        kernel = ContractionKernel(np.eye(2), SCHED, n)
        paths = aggr_ga_paths(kernel, v_K, K, np.random.SeedSequence(3),
                              n_chains=4000)
        targets = aggr_ga_covariance_recursion(kernel, v_K, [20, 200])
        for t in (20, 200):
            emp = np.cov(paths[t - 1], rowvar=False)
            rel = np.linalg.norm(emp - targets[t]) / np.linalg.norm(targets[t])
            assert rel < 0.1

    def test_trajectory_wrapper(self):
        kernel = ContractionKernel(np.eye(2), SCHED, 30)
        traj = simulate_aggr_ga(kernel, np.eye(2), 4, seed=1)
        assert traj.ys.shape == (30, 2)
        assert np.allclose(traj.ybars[-1], traj.ys.mean(axis=0))
        assert np.allclose(traj.theta_star, 0.0)

    def test_deterministic_in_seed(self):
        kernel = ContractionKernel(np.eye(2), SCHED, 10)
        a = aggr_ga_paths(kernel, np.eye(2), 4, np.random.SeedSequence(9), 2)
        b = aggr_ga_paths(kernel, np.eye(2), 4, np.random.SeedSequence(9), 2)
        assert np.array_equal(a, b)


class TestClientGA:
    def test_aggregate_covariance_matches_aggr_recursion(self):
        """With full mixing every step, the aggregated client process carries
        per-step noise covariance eta^2 V_K, identical to the aggregate
        recursion."""
        n, K = 150, 5
        conn = rho_mix_connection(K, 0.0)
        weights = np.full(K, 1.0 / K)
        covs = [np.eye(2) * (1.0 + k) for k in range(K)]
        v_K = sum(w ** 2 * S for w, S in zip(weights, covs))
        kernel = ContractionKernel(np.eye(2), SCHED, n)
        paths = client_ga_paths(kernel, covs, weights, conn, 1,
                                np.random.SeedSequence(4), n_chains=4000)
        targets = aggr_ga_covariance_recursion(kernel, v_K, [20, 150])
        for t in (20, 150):
            emp = np.cov(paths[t - 1], rowvar=False)
            rel = np.linalg.norm(emp - targets[t]) / np.linalg.norm(targets[t])
            assert rel < 0.1

    def test_trajectory_wrapper(self):
        conn = banded_connection(5, 1)
        kernel = ContractionKernel(np.eye(2), SCHED, 25)
        covs = [np.eye(2)] * 5
        traj = simulate_client_ga(kernel, covs, np.full(5, 0.2), conn, 5, seed=2)
        assert traj.ys.shape == (25, 2)

    def test_sparser_mixing_increases_spread(self):
        n, K = 120, 9
        kernel = ContractionKernel(np.eye(2), SCHED, n)
        covs = [np.eye(2)] * K
        w = np.full(K, 1.0 / K)
        dense = client_ga_paths(kernel, covs, w, rho_mix_connection(K, 0.0), 1,
                                np.random.SeedSequence(5), n_chains=2000)
        sparse = client_ga_paths(kernel, covs, w, banded_connection(K, 1), 30,
                                 np.random.SeedSequence(5), n_chains=2000)
        assert sparse[-1].var() > dense[-1].var()


class TestFclt:
    def test_partial_sum_covariance(self):
        sigma = np.array([[2.0, 0.5], [0.5, 1.0]])
        paths = fclt_paths(sigma, 50, np.random.SeedSequence(8), n_chains=6000)
        emp = np.cov(paths[-1], rowvar=False)
        assert np.linalg.norm(emp - 50 * sigma) / np.linalg.norm(50 * sigma) < 0.1

    def test_increments_are_iid(self):
        sigma = np.eye(2)
        paths = fclt_paths(sigma, 100, np.random.SeedSequence(1), n_chains=500)
        inc = np.diff(paths, axis=0)
        flat = inc.reshape(-1, 2)
        emp = np.cov(flat, rowvar=False)
        assert np.allclose(emp, sigma, atol=0.05)

    def test_trajectory_wrapper(self):
        traj = simulate_fclt(np.eye(2), 40, seed=0)
        assert traj.ys.shape == (40, 2)
