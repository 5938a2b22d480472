"""LQ design and data-driven policy iteration tests."""

import math

import numpy as np
import pytest

from modru import lqr
from modru.errors import NumericalError, PolicyIterationError


class TestC2d:
    def test_double_integrator(self):
        Ac = np.array([[0.0, 1.0], [0.0, 0.0]])
        Bc = np.array([[0.0], [1.0]])
        Ad, Bd = lqr.c2d_zoh(Ac, Bc, 0.1)
        np.testing.assert_allclose(Ad, [[1.0, 0.1], [0.0, 1.0]], atol=1e-14)
        np.testing.assert_allclose(Bd, [[0.005], [0.1]], atol=1e-14)

    def test_scalar_exponential(self):
        a, b, h = -2.0, 3.0, 0.5
        Ad, Bd = lqr.c2d_zoh([[a]], [[b]], h)
        assert Ad[0, 0] == pytest.approx(math.exp(a * h), rel=1e-13)
        assert Bd[0, 0] == pytest.approx((math.exp(a * h) - 1.0) / a * b, rel=1e-13)

    def test_bad_sample_time(self):
        with pytest.raises(ValueError):
            lqr.c2d_zoh([[0.0]], [[1.0]], 0.0)


class TestDare:
    def test_scalar_golden_ratio(self):
        # P = 1 + P - P^2/(1+P) has the golden ratio as its fixed point.
        K, P = lqr.dare_solve([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        phi = 0.5 * (1.0 + math.sqrt(5.0))
        assert P[0, 0] == pytest.approx(phi, rel=1e-9)
        assert K[0, 0] == pytest.approx(phi / (1.0 + phi), rel=1e-9)

    def test_fixed_point_residual(self):
        A = np.array([[1.01, 0.1], [0.0, 0.98]])
        B = np.array([[0.0], [1.0]])
        Qx = np.diag([1.0, 0.5])
        Qu = np.array([[0.1]])
        K, P = lqr.dare_solve(A, B, Qx, Qu)
        G = Qu + B.T @ P @ B
        resid = Qx + A.T @ P @ A - (A.T @ P @ B) @ np.linalg.solve(G, B.T @ P @ A) - P
        assert np.abs(resid).max() < 1e-8
        np.testing.assert_allclose(K, np.linalg.solve(G, B.T @ P @ A), atol=1e-10)
        assert lqr.spectral_radius(A - B @ K) < 1.0

    def test_warm_start_agrees(self):
        A = [[0.95, 0.1], [0.0, 0.9]]
        B = [[0.0], [1.0]]
        K1, P1 = lqr.dare_solve(A, B, np.eye(2), [[1.0]])
        K2, _ = lqr.dare_solve(A, B, np.eye(2), [[1.0]], P0=P1)
        np.testing.assert_allclose(K1, K2, atol=1e-9)

    def test_uncontrollable_unstable_mode_diverges(self):
        A = np.diag([2.0, 0.5])
        B = np.array([[0.0], [1.0]])
        with pytest.raises(NumericalError):
            lqr.dare_solve(A, B, np.eye(2), [[1.0]])


class TestCostAndQTheta:
    def test_cost_validation(self):
        with pytest.raises(ValueError):
            lqr.QuadCost(np.array([[1.0, 0.5], [0.0, 1.0]]), [[1.0]])
        with pytest.raises(ValueError):
            lqr.QuadCost(np.diag([1.0, -0.1]), [[1.0]])
        with pytest.raises(ValueError):
            lqr.QuadCost(np.eye(2), [[0.0]])

    def test_stage_batches(self, rng):
        cost = lqr.QuadCost(np.diag([1.0, 2.0]), [[0.5]])
        X = rng.standard_normal((7, 2))
        U = rng.standard_normal((7, 1))
        want = [x @ cost.Q_x @ x + u @ cost.Q_u @ u for x, u in zip(X, U)]
        np.testing.assert_allclose(cost.stage(X, U), want, rtol=1e-12)

    def test_qtheta_round_trip(self):
        # n=2, m=1: upper triangle row-major [S00 S01 S02 S11 S12 S22]
        theta = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        qf = lqr.QTheta.from_parameters(theta, 2, 1)
        S = qf.matrix()
        np.testing.assert_allclose(S, S.T)
        np.testing.assert_allclose(S[0], [1.0, 2.0, 3.0])
        np.testing.assert_allclose(S[1], [2.0, 4.0, 5.0])
        np.testing.assert_allclose(S[2], [3.0, 5.0, 6.0])
        with pytest.raises(ValueError):
            lqr.QTheta.from_parameters(theta[:-1], 2, 1)

    def test_qtheta_gain(self):
        qf = lqr.QTheta(S_xx=np.eye(2), S_xu=np.array([[4.0], [6.0]]),
                        S_uu=np.array([[2.0]]))
        np.testing.assert_allclose(qf.gain(), [[2.0, 3.0]])
        bad = lqr.QTheta(S_xx=np.eye(2), S_xu=np.zeros((2, 1)),
                         S_uu=np.array([[-1.0]]))
        with pytest.raises(PolicyIterationError):
            bad.gain()


class TestPolicyIteration:
    def test_exact_data_reaches_riccati_gain(self):
        A = np.array([[0.9, 0.2], [0.0, 0.8]])
        B = np.array([[0.0], [1.0]])
        cost = lqr.QuadCost(np.eye(2), [[1.0]])
        K_star, _ = lqr.dare_solve(A, B, cost.Q_x, cost.Q_u)
        source = lqr.linear_rollouts(A, B, seed=3)
        K, qf = lqr.lqrl_policy_iteration(source, np.zeros((1, 2)), cost)
        assert np.abs(K - K_star).max() < 1e-6
        assert np.linalg.eigvalsh(qf.S_uu).min() > 0

    def test_rollout_shapes_and_partial_observation(self):
        A = np.array([[0.9, 0.1], [0.0, 0.5]])
        B = np.array([[0.0], [1.0]])
        source = lqr.linear_rollouts(A, B, n_obs=1, seed=0)
        X, U, Xn = source(np.array([[0.1]]), 55)
        assert X.shape == (55, 1) and U.shape == (55, 1) and Xn.shape == (55, 1)

    def test_unstable_policy_rollout_raises(self):
        source = lqr.linear_rollouts([[3.0]], [[1.0]], seed=0)
        with pytest.raises(PolicyIterationError):
            source(np.array([[0.0]]), 200)


class TestLoopMetrics:
    def test_sensitivity_peaks_of_delay_loop(self):
        # A=0 gives L(z) = k/z: |S| and |T| peak at the Nyquist point,
        # where |1 + L| = 1 - k.
        m_s, m_t = lqr.sensitivity_metrics([[0.0]], [[1.0]], [[0.5]], h=0.1)
        assert m_s == pytest.approx(2.0, rel=1e-12)
        assert m_t == pytest.approx(1.0, rel=1e-12)

    def test_rise_time_first_order_lag(self):
        tau_d, h = 1.0, 0.001
        a = math.exp(-h / tau_d)
        t_r = lqr.rise_time([[a]], [[1.0 - a]], [[0.0]], [[1.0]], h)
        assert t_r == pytest.approx(math.log(9.0) * tau_d, rel=1e-5)

    def test_rise_time_guards(self):
        with pytest.raises(NumericalError):
            lqr.rise_time([[1.1]], [[1.0]], [[0.0]], [[1.0]], 0.1)
        with pytest.raises(NumericalError):
            lqr.rise_time([[0.5]], [[1.0]], [[0.0]], [[0.0]], 0.1)


class TestServoBenchmark:
    def test_tau_zero_matches_closed_form(self):
        sys, C = lqr.servo_plant(0.0, h=0.1)
        e = math.exp(-0.1)
        np.testing.assert_allclose(sys.A, [[1.0, 1.0 - e], [0.0, e]], atol=1e-12)
        np.testing.assert_allclose(sys.B, [[0.1 - 1.0 + e], [1.0 - e]], atol=1e-12)
        np.testing.assert_allclose(C, [[1.0, 0.0]])

    def test_tau_positive_adds_actuator_state(self):
        sys, C = lqr.servo_plant(0.2, h=0.1)
        assert sys.A.shape == (3, 3) and C.shape == (1, 3)
        with pytest.raises(ValueError):
            lqr.servo_plant(-0.1)

    def test_sweep_single_tau_model_based(self):
        rows = lqr.robustness_sweep([0.05], methods=("model-based",), seed=5)
        assert len(rows) == 1
        row = rows[0]
        assert row.method == "model-based" and row.tau == 0.05
        assert row.feasible
        assert row.M_S <= lqr.MS_MAX + 1e-9
        assert row.M_T <= lqr.MT_MAX + 1e-9
        assert 0.0 < row.t_r < math.inf
        assert 1e-6 <= row.Q_u <= 1e6
        assert len(row.trace) >= 2
