import math

import numpy as np
import pytest

from fbridge.bridge import (AugmentedState, Trajectory,
                            brownian_bridge_marginal, joint_covariance,
                            pinned_drift, pinned_mean_cov,
                            sample_pinned_marginal,
                            sample_pinned_marginal_batch, sample_pinned_path,
                            simulate_pinned_em, simulate_pinned_em_batch,
                            write_trajectories_csv)
from fbridge.errors import ShapeMismatch, TimeTooCloseToOne
from fbridge.mafbm import BridgeKernel, ProcessConfig
from fbridge.rng import RngStream

from helpers import batch_z_scores, cov_z_scores, simulate_reference


@pytest.fixture(scope="module")
def kernel2():
    return BridgeKernel.build(ProcessConfig(hurst=0.4, n_ou=2, grid_ratio=4.0,
                                            epsilon=0.7))


class TestJointCovariance:
    def test_small_t_vanishes(self, kernel2):
        S, S12, s2 = joint_covariance(kernel2, 0.0, 1e-9)
        assert np.abs(S).max() < 1e-8
        assert np.abs(S12).max() < 1e-8
        assert s2 > 0

    def test_symmetric_nonneg_diagonal(self, kernel2):
        S, _, _ = joint_covariance(kernel2, 0.0, 0.5)
        assert np.array_equal(S, S.T)
        assert np.all(np.diag(S) >= 0)

    def test_linear_dependence_structure(self, kernel2):
        # X_t - x0 = sqrt(eps) w . Y_t exactly, so the X row of every
        # conditional covariance is the weighted combination of the OU rows
        S, S12, _ = joint_covariance(kernel2, 0.0, 0.37)
        gw = kernel2.sqrt_eps * kernel2.omega
        assert np.allclose(S[0, :], gw @ S[1:, :], atol=1e-15)
        assert np.allclose(S12[0], gw @ S12[1:], atol=1e-15)

    def test_monte_carlo_oracle(self, kernel2):
        rng = RngStream(17)
        n, steps = 100_000, 1000
        term, snaps = simulate_reference(kernel2, n, steps, rng, [steps // 2])
        joint = np.column_stack([snaps[steps // 2], term[:, 0]])
        S, S12, s2 = joint_covariance(kernel2, 0.0, 0.5)
        K = kernel2.n_ou
        exact = np.zeros((K + 2, K + 2))
        exact[:K + 1, :K + 1] = S
        exact[:K + 1, -1] = S12
        exact[-1, :K + 1] = S12
        exact[-1, -1] = kernel2.sigma2_terminal(0.0)
        emp = np.cov(joint.T)
        d = np.diag(exact)
        se = np.sqrt((np.outer(d, d) + exact ** 2) / n)
        # 3 MC standard errors plus a small EM discretization allowance
        assert np.all(np.abs(emp - exact) <= 3 * se + 3e-3)

    def test_requires_ordered_times(self, kernel2):
        with pytest.raises(ShapeMismatch):
            joint_covariance(kernel2, 0.5, 0.5)


class TestExactPinnedMarginal:
    def test_mean_cov_near_zero_time(self, kernel2):
        eta, cov = pinned_mean_cov(kernel2, np.array([1.0]), np.array([3.0]),
                                   1e-8)
        assert eta[0, 0] == pytest.approx(1.0, abs=1e-6)
        assert np.abs(eta[0, 1:]).max() < 1e-6
        assert np.abs(cov).max() < 1e-7

    def test_mean_cov_near_one(self, kernel2):
        eta, cov = pinned_mean_cov(kernel2, np.array([1.0]), np.array([3.0]),
                                   1.0 - 1e-8)
        assert eta[0, 0] == pytest.approx(3.0, rel=1e-5)
        assert cov[0, 0] < 1e-7

    @pytest.mark.parametrize("hurst", [0.1, 0.3, 0.5, 0.7, 0.9])
    def test_endpoint_pinning(self, hurst):
        # the exact law at t = 1 - 1e-6 has sd(X) ~ sqrt(eps) |sum w_k| 1e-3,
        # which exceeds 1e-2 / 3.5 for rough H where the weights are large;
        # the bound follows the distribution rather than a fixed constant
        kern = BridgeKernel.build(ProcessConfig(hurst=hurst, n_ou=5))
        rng = RngStream(23)
        x0 = np.full((1000, 1), -0.5)
        x1 = np.full((1000, 1), 2.0)
        t = np.full(1000, 1.0 - 1e-6)
        x, _ = sample_pinned_marginal_batch(kern, x0, x1, t, rng)
        _, cov = pinned_mean_cov(kern, x0[0], x1[0], 1.0 - 1e-6)
        bound = max(1e-2, 4.7 * math.sqrt(cov[0, 0]))
        assert np.all(np.abs(x[:, 0] - 2.0) < bound)

    def test_deterministic(self, kernel2):
        a = sample_pinned_marginal(kernel2, np.array([0.0, 1.0]),
                                   np.array([1.0, -1.0]), 0.5,
                                   RngStream(5, stream_id=9))
        b = sample_pinned_marginal(kernel2, np.array([0.0, 1.0]),
                                   np.array([1.0, -1.0]), 0.5,
                                   RngStream(5, stream_id=9))
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.y, b.y)

    def test_dimensions_independent(self, kernel2):
        rng = RngStream(31)
        x0 = np.zeros((40_000, 2))
        x1 = np.tile([1.0, -2.0], (40_000, 1))
        t = np.full(40_000, 0.5)
        x, _ = sample_pinned_marginal_batch(kernel2, x0, x1, t, rng)
        assert abs(np.corrcoef(x[:, 0], x[:, 1])[0, 1]) < 0.02
        eta, cov = pinned_mean_cov(kernel2, x0[0], x1[0], 0.5)
        se = math.sqrt(cov[0, 0] / 40_000)
        assert abs(x[:, 0].mean() - eta[0, 0]) < 4 * se
        assert abs(x[:, 1].mean() - eta[1, 0]) < 4 * se

    @pytest.mark.parametrize("hurst", [0.2, 0.5, 0.8])
    def test_exact_vs_em_law(self, hurst):
        # moments of the closed-form sampler against the SDE integrator
        kern = BridgeKernel.build(ProcessConfig(hurst=hurst, n_ou=5))
        n, steps = 30_000, 600
        x0 = np.full((n, 1), 0.3)
        x1 = np.full((n, 1), -1.1)
        term, snaps = simulate_pinned_em_batch(
            kern, x0, x1, steps, RngStream(7),
            snapshot_steps=[steps // 4, steps // 2, 3 * steps // 4])
        rng = RngStream(8)
        for frac, step in ((0.25, steps // 4), (0.5, steps // 2),
                           (0.75, 3 * steps // 4)):
            em = snaps[step][:, 0, :]
            t = np.full(n, frac)
            x, y = sample_pinned_marginal_batch(kern, x0, x1, t, rng)
            exact = np.concatenate([x, y[:, 0, :]], axis=1)
            assert np.all(batch_z_scores(em, exact) < 3.5), (hurst, frac)
            assert np.all(cov_z_scores(em, exact) < 3.5 + 1e-9), (hurst, frac)


class TestExactPinnedPath:
    def test_marginals_match_single_time_law(self, kernel2):
        rng = RngStream(3)
        n = 20_000
        xs = np.empty((n, 3))
        for i in range(n):
            traj = sample_pinned_path(kernel2, np.array([0.0]),
                                      np.array([1.5]),
                                      np.array([0.25, 0.5, 0.75]),
                                      rng.substream(i))
            xs[i] = traj.xs[:, 0]
        for j, t in enumerate((0.25, 0.5, 0.75)):
            eta, cov = pinned_mean_cov(kernel2, np.array([0.0]),
                                       np.array([1.5]), t)
            se = math.sqrt(cov[0, 0] / n)
            assert abs(xs[:, j].mean() - eta[0, 0]) < 4 * se
            v = xs[:, j].var()
            se_v = cov[0, 0] * math.sqrt(2.0 / n)
            assert abs(v - cov[0, 0]) < 4 * se_v + 1e-6

    def test_time_validation(self, kernel2):
        with pytest.raises(ShapeMismatch):
            sample_pinned_path(kernel2, np.zeros(1), np.ones(1),
                               np.array([0.0, 0.5]), RngStream(0))


class TestPinnedEm:
    @pytest.mark.parametrize("hurst", [0.2, 0.5, 0.8])
    def test_terminal_calibration(self, hurst):
        # terminal scatter is dominated by the last-step noise G_x sqrt(dt);
        # the calibrated bound is 3 sigma of that floor, never below 0.15
        kern = BridgeKernel.build(ProcessConfig(hurst=hurst, n_ou=5))
        term, _ = simulate_pinned_em_batch(kern, np.zeros((1000, 1)),
                                           np.zeros((1000, 1)), 1000,
                                           RngStream(9))
        floor = kern.sqrt_eps * abs(kern.omega.sum()) * math.sqrt(1.0 / 1000)
        bound = max(0.15, 3.0 * floor)
        frac = np.mean(np.abs(term[:, 0, 0]) < bound)
        assert frac >= 0.99

    def test_strong_order_half_scaling(self):
        kern = BridgeKernel.build(ProcessConfig(hurst=0.5, n_ou=3))
        n = 4000
        x0 = np.zeros((n, 1))
        x1 = np.full((n, 1), 1.0)
        rms = {}
        for steps in (1000, 4000):
            term, _ = simulate_pinned_em_batch(kern, x0, x1, steps,
                                               RngStream(41))
            rms[steps] = np.sqrt(np.mean((term[:, 0, 0] - 1.0) ** 2))
        ratio = rms[1000] / rms[4000]
        assert 1.7 <= ratio <= 2.3, ratio

    def test_mean_path_matches_exact(self, kernel2):
        n, steps = 10_000, 400
        x0 = np.full((n, 1), -0.2)
        x1 = np.full((n, 1), 0.9)
        _, snaps = simulate_pinned_em_batch(kernel2, x0, x1, steps,
                                            RngStream(3), [steps // 2])
        em = snaps[steps // 2][:, 0, :]
        eta, cov = pinned_mean_cov(kernel2, x0[0], x1[0], 0.5)
        se = np.sqrt(np.diag(cov) / n)
        assert np.all(np.abs(em.mean(0) - eta[0]) < 3 * se + 2e-3)

    def test_single_trajectory_shape(self, kernel2):
        traj = simulate_pinned_em(kernel2, np.array([0.0, 0.0]),
                                  np.array([1.0, 1.0]), 100, RngStream(0))
        assert traj.times.shape == (101,)
        assert traj.xs.shape == (101, 2)
        assert traj.ys.shape == (101, 2, 2)
        assert np.allclose(traj.xs[0], 0.0)
        assert np.allclose(traj.ys[0], 0.0)

    def test_min_steps(self, kernel2):
        with pytest.raises(ShapeMismatch):
            simulate_pinned_em(kernel2, np.zeros(1), np.ones(1), 5,
                               RngStream(0))


class TestPinnedDrift:
    def test_conditioning_term_vanishes_when_mean_hits_target(self, kernel2):
        # choose x1 = mu_{1|t}(z): the drift reduces to F z exactly
        z = AugmentedState(np.array([0.4]), np.array([[0.3, -0.1]]))
        t = 0.6
        mu, _ = kernel2.conditional_moments(z, t)
        drift = pinned_drift(kernel2, t, z, mu)
        assert np.allclose(drift, z.stacked() @ kernel2.F.T, atol=1e-12)

    def test_positive_x_drift_toward_target(self, kernel2):
        z = AugmentedState(np.array([0.0]), np.zeros((1, 2)))
        drift = pinned_drift(kernel2, 0.0, z, np.array([2.0]))
        assert drift[0, 0] > 0

    def test_brownian_limit_matches_bridge_drift(self):
        # K=1 with tiny mean reversion approaches the classical bridge:
        # X drift -> (x1 - x) / (1 - t), independent of the diffusion scale
        for eps in (1.0, 0.49):
            cfg = ProcessConfig(hurst=0.5, n_ou=1, grid_ratio=2.0, epsilon=eps)
            kern = BridgeKernel(cfg, np.array([1e-3]), np.array([1.0]))
            z = AugmentedState(np.array([0.3]),
                               np.array([[0.21 / math.sqrt(eps)]]))
            x1 = np.array([1.4])
            for t in (0.0, 0.5, 0.9):
                drift = pinned_drift(kern, t, z, x1)
                classical = (x1[0] - 0.3) / (1.0 - t)
                assert drift[0, 0] == pytest.approx(classical, rel=0.01)

    def test_raises_near_endpoint(self, kernel2):
        z = AugmentedState(np.zeros(1), np.zeros((1, 2)))
        with pytest.raises(TimeTooCloseToOne):
            pinned_drift(kernel2, 0.9995, z, np.ones(1))


class TestBrownianBridge:
    def test_endpoints_exact(self):
        rng = RngStream(1)
        x0 = np.array([1.0, 2.0])
        x1 = np.array([-1.0, 0.5])
        assert np.array_equal(brownian_bridge_marginal(1.0, x0, x1, 0.0, rng), x0)
        assert np.array_equal(brownian_bridge_marginal(1.0, x0, x1, 1.0, rng), x1)

    def test_midpoint_variance(self):
        rng = RngStream(2)
        n = 100_000
        x0 = np.zeros((n, 2))
        x1 = np.ones((n, 2))
        t = np.full(n, 0.5)
        draws = brownian_bridge_marginal(1.0, x0, x1, t, rng)
        for i in range(2):
            assert draws[:, i].var() == pytest.approx(0.25, abs=0.005)

    def test_matches_em_of_bridge_sde(self):
        # independent check of the closed form: integrate
        # dX = (x1 - X)/(1 - t) dt + sqrt(eps) dB
        eps = 0.6
        rng = RngStream(3)
        n, steps = 50_000, 2000
        dt = 1.0 / steps
        x = np.zeros(n)
        for j in range(steps // 2):
            t = j * dt
            x += (1.0 - x) / (1.0 - t) * dt + math.sqrt(eps * dt) * rng.standard_normal(n)
        mean_exact = 0.5
        var_exact = eps * 0.25
        assert abs(x.mean() - mean_exact) < 4 * math.sqrt(var_exact / n) + 2e-3
        assert abs(x.var() - var_exact) < 4 * var_exact * math.sqrt(2 / n) + 2e-3


class TestRoughnessOrdering:
    def test_quadratic_variation_decreases_with_hurst(self):
        # quantitative version of the visual roughness claim
        n, steps = 2000, 1000
        qv = {}
        se = {}
        for hurst in (0.2, 0.5, 0.8):
            kern = BridgeKernel.build(ProcessConfig(hurst=hurst, n_ou=5))
            rng = RngStream(77)
            x0 = np.zeros((n, 2))
            x1 = np.ones((n, 2))
            dt = 1.0 / steps
            z = np.zeros((n, 2, kern.state_dim))
            prev = z[..., 0].copy()
            total = np.zeros(n)
            t_max = 1.0 - min(1e-3, dt)
            sq = math.sqrt(dt)
            for j in range(steps):
                td = min(j * dt, t_max)
                mu = kern.mu_terminal(z[..., 0], z[..., 1:], td)
                s2 = kern.sigma2_terminal(td)
                v1 = kern.lift(td)
                gv = float(kern.G @ v1)
                score = (x1 - mu) / s2
                drift = z @ kern.F.T + score[..., None] * (gv * kern.G)
                dB = rng.standard_normal((n, 2)) * sq
                z = z + drift * dt + dB[..., None] * kern.G
                total += np.sum((z[..., 0] - prev) ** 2, axis=1)
                prev = z[..., 0].copy()
            qv[hurst] = total.mean()
            se[hurst] = total.std(ddof=1) / math.sqrt(n)
        gap_low = qv[0.2] - qv[0.5]
        gap_high = qv[0.5] - qv[0.8]
        assert gap_low > 5 * math.hypot(se[0.2], se[0.5])
        assert gap_high > 5 * math.hypot(se[0.5], se[0.8])


class TestTrajectoryCsv:
    def test_header_and_rows(self, kernel2, tmp_path):
        traj = simulate_pinned_em(kernel2, np.array([0.0, 0.0]),
                                  np.array([1.0, 1.0]), 10, RngStream(0))
        path = tmp_path / "t.csv"
        write_trajectories_csv(path, [traj, traj], comment="stamp")
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "# stamp"
        assert lines[1] == ("traj_id,t,x_1,x_2,y_1_1,y_1_2,y_2_1,y_2_2")
        assert len(lines) == 2 + 2 * 11

    def test_times_must_increase(self):
        with pytest.raises(ShapeMismatch):
            Trajectory(np.array([0.0, 0.0]), np.zeros((2, 1)),
                       np.zeros((2, 1, 1)))
