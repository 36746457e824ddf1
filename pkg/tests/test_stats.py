import numpy as np
import pytest
from scipy import stats as sps

from fedga import (EmpiricalSample, StepSchedule, chi_reference_cdf, cusum,
                   kolmogorov_vs_reference, max_partial_sum,
                   quantile_discrepancy, whiten)
from fedga.engine import Trajectory, _running_mean
from fedga.stats import (cusum_from_partial_sums, default_alpha_grid,
                         max_partial_sum_paths, qq_table)


def make_traj(ys):
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if ys.shape[0] == 1:
        ys = ys.T
    return Trajectory(ys=ys, ybars=_running_mean(ys),
                      theta_star=np.zeros(ys.shape[1]))


class TestEmpiricalSample:
    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="nonempty"):
            EmpiricalSample(np.array([]))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            EmpiricalSample(np.array([1.0, np.nan]))

    def test_scaled(self):
        s = EmpiricalSample(np.array([1.0, 2.0]), "x")
        assert np.allclose(s.scaled(3.0).values, [3.0, 6.0])
        assert s.scaled(3.0).label == "x"

    def test_values_read_only(self):
        s = EmpiricalSample(np.array([1.0]))
        with pytest.raises(ValueError):
            s.values[0] = 2.0


class TestChiReference:
    def test_d2_closed_form(self):
        x = np.linspace(0, 5, 50)
        assert np.allclose(chi_reference_cdf(2)(x), 1.0 - np.exp(-x ** 2 / 2))

    def test_matches_scipy_chi(self):
        x = np.linspace(0, 5, 50)
        for d in (1, 2, 3):
            assert np.allclose(chi_reference_cdf(d)(x), sps.chi(df=d).cdf(x))


class TestKolmogorov:
    def test_exact_reference_sample_is_small(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((100_000, 2))
        sample = EmpiricalSample(np.linalg.norm(z, axis=1))
        assert kolmogorov_vs_reference(sample, chi_reference_cdf(2)) <= 0.01

    def test_c_nonpositive_raises(self):
        sample = EmpiricalSample(np.array([1.0]))
        with pytest.raises(ValueError, match="positive"):
            kolmogorov_vs_reference(sample, chi_reference_cdf(2), c=0.0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        vals = rng.exponential(size=500)
        a = kolmogorov_vs_reference(EmpiricalSample(vals), chi_reference_cdf(2))
        b = kolmogorov_vs_reference(EmpiricalSample(vals[::-1]), chi_reference_cdf(2))
        assert a == b

    def test_hand_example_step_function(self):
        # single observation at 1 against U[0, 2]: sup gap is 0.5, attained
        # just left/right of the atom
        sample = EmpiricalSample(np.array([1.0]))
        ref = lambda x: np.clip(np.asarray(x, dtype=float) / 2.0, 0, 1)
        assert kolmogorov_vs_reference(sample, ref, c=2.0) == pytest.approx(0.5)

    def test_matches_dense_brute_force(self):
        rng = np.random.default_rng(2)
        vals = rng.exponential(size=200)
        sample = EmpiricalSample(vals)
        ref = chi_reference_cdf(2)
        got = kolmogorov_vs_reference(sample, ref, c=10.0)
        xs = np.sort(vals)
        dense = np.linspace(0, 10, 200_001)
        emp = np.searchsorted(xs, dense, side="right") / len(xs)
        brute = np.max(np.abs(emp - ref(dense)))
        assert got >= brute - 1e-12
        assert got == pytest.approx(brute, abs=1.0 / len(xs))


class TestWhiten:
    def test_identity_scaling_gives_norms(self):
        v = np.array([[3.0, 4.0]])
        assert whiten(v, np.eye(2)).values[0] == pytest.approx(5.0)

    def test_scalar_scaling_halves_norms(self):
        v = np.array([[3.0, 4.0]])
        assert whiten(v, 4.0 * np.eye(2)).values[0] == pytest.approx(2.5)

    def test_recovers_standard_normal(self):
        rng = np.random.default_rng(3)
        S = np.array([[4.0, 1.0], [1.0, 2.0]])
        L = np.linalg.cholesky(S)
        draws = rng.standard_normal((50_000, 2)) @ L.T
        sample = whiten(draws, S)
        assert kolmogorov_vs_reference(sample, chi_reference_cdf(2)) < 0.02

    def test_singular_scaling_raises(self):
        with pytest.raises(np.linalg.LinAlgError):
            whiten(np.array([[1.0, 1.0]]), np.zeros((2, 2)))


class TestMaxPartialSum:
    def test_constant_path_is_zero(self):
        traj = make_traj(np.ones((5, 2)))
        assert max_partial_sum(traj, np.ones(2)) == 0.0

    def test_hand_oracle(self):
        traj = make_traj([1.0, -2.0, 3.0])
        # partial sums 1, -1, 2 -> max |.| = 2
        assert max_partial_sum(traj, np.zeros(1)) == pytest.approx(2.0)

    def test_defaults_to_theta_star(self):
        traj = make_traj([1.0, -2.0, 3.0])
        assert max_partial_sum(traj) == max_partial_sum(traj, np.zeros(1))

    def test_vectorized_matches_loop(self):
        rng = np.random.default_rng(4)
        paths = rng.standard_normal((30, 8, 2))
        got = max_partial_sum_paths(paths, np.zeros(2))
        for r in range(8):
            traj = make_traj(paths[:, r])
            assert got[r] == pytest.approx(max_partial_sum(traj, np.zeros(2)))


class TestQuantileDiscrepancy:
    def test_identical_samples(self):
        rng = np.random.default_rng(5)
        s = EmpiricalSample(rng.exponential(size=300))
        report = quantile_discrepancy(s, s)
        assert report.discrepancy == 0.0

    def test_doubled_sample(self):
        rng = np.random.default_rng(6)
        s = EmpiricalSample(rng.exponential(size=300) + 1.0)
        report = quantile_discrepancy(s, s.scaled(2.0))
        assert report.discrepancy == pytest.approx(1.0)

    @pytest.mark.parametrize("eps", [-0.5, 0.25, 3.0])
    def test_scale_equivariance(self, eps):
        rng = np.random.default_rng(7)
        s = EmpiricalSample(rng.exponential(size=300) + 0.5)
        report = quantile_discrepancy(s, s.scaled(1.0 + eps))
        assert report.discrepancy == pytest.approx(abs(eps))

    def test_zero_base_quantile_names_alpha(self):
        base = EmpiricalSample(np.zeros(100))
        approx = EmpiricalSample(np.ones(100))
        with pytest.raises(ZeroDivisionError, match="alpha=0.01"):
            quantile_discrepancy(base, approx)

    def test_alpha_grid_validation(self):
        s = EmpiricalSample(np.ones(10))
        with pytest.raises(ValueError, match="alpha"):
            quantile_discrepancy(s, s, alpha_grid=[0.0, 0.5])

    def test_default_grid(self):
        grid = default_alpha_grid()
        assert grid[0] == 0.01 and grid[-1] == 0.99 and len(grid) == 99

    def test_quantiles_nondecreasing_in_level(self):
        rng = np.random.default_rng(8)
        s = EmpiricalSample(rng.exponential(size=300))
        report = quantile_discrepancy(s, s)
        # alphas increase, so (1 - alpha) quantiles must not increase
        assert np.all(np.diff(report.base_quantiles) <= 1e-12)


class TestCusum:
    def test_constant_average(self):
        traj = make_traj(np.full((6, 1), 2.0))
        r, s = cusum(traj, 6)
        assert r == 0.0 and s == 1

    def test_hand_example(self):
        # running averages (0, 0, 1) at t=3: s|Ybar_s - Ybar_3| = (1, 2, 0)
        ys = np.array([[0.0], [0.0], [3.0]])
        traj = Trajectory(ys=ys, ybars=np.array([[0.0], [0.0], [1.0]]),
                          theta_star=np.zeros(1))
        r, s = cusum(traj, 3)
        assert r == pytest.approx(2.0) and s == 2

    def test_tie_breaks_to_smallest_s(self):
        ybars = np.array([[1.0], [0.5], [0.0]])
        traj = Trajectory(ys=ybars, ybars=ybars, theta_star=np.zeros(1))
        # s=1: 1*1 = 1; s=2: 2*0.5 = 1; tie -> s=1
        r, s = cusum(traj, 3)
        assert r == pytest.approx(1.0) and s == 1

    def test_brute_force_random_paths(self):
        rng = np.random.default_rng(9)
        traj = make_traj(rng.standard_normal((200, 2)))
        for t in (1, 37, 200):
            r, s = cusum(traj, t)
            vals = [k * np.linalg.norm(traj.ybars[k - 1] - traj.ybars[t - 1])
                    for k in range(1, t + 1)]
            assert r == pytest.approx(max(vals))
            assert s == int(np.argmax(vals)) + 1
            assert r >= 0.0

    def test_partial_sum_form_agrees(self):
        rng = np.random.default_rng(10)
        traj = make_traj(rng.standard_normal((80, 2)))
        S = np.cumsum(traj.ys, axis=0)
        for t in (5, 40, 80):
            assert cusum_from_partial_sums(S, t) == pytest.approx(cusum(traj, t))

    def test_t_out_of_range(self):
        traj = make_traj(np.ones((4, 1)))
        with pytest.raises(ValueError):
            cusum(traj, 5)


class TestQQTable:
    def test_csv_layout(self, tmp_path):
        rng = np.random.default_rng(11)
        samples = [EmpiricalSample(rng.exponential(size=200)) for _ in range(4)]
        table = qq_table(*samples, header_comments=["seed = 1"])
        path = tmp_path / "qq.csv"
        table.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "# seed = 1"
        assert lines[1] == "alpha,q_base,q_fclt,q_aggr,q_client"
        assert len(lines) == 2 + 99

    def test_identity_case_lies_on_diagonal(self):
        rng = np.random.default_rng(12)
        s = EmpiricalSample(rng.exponential(size=200))
        table = qq_table(s, s, s, s)
        assert np.array_equal(table.q_base, table.q_fclt)
        assert np.array_equal(table.q_base, table.q_aggr)
        assert np.array_equal(table.q_base, table.q_client)
