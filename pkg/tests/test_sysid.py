"""Estimation tests: ARX, state-space regression, gray box, efficiency."""

import numpy as np
import pytest

from modru import harness, sysid
from modru.errors import EstimationError
from modru.plant import TruckParams


class TestArx:
    def test_recovers_known_coefficients(self, rng):
        a = np.array([-1.2, 0.45])   # y+ = 1.2 y - 0.45 y_prev + ...
        b = np.array([0.5, 0.1])
        u = rng.standard_normal(400)
        y = np.zeros(400)
        for k in range(2, 400):
            y[k] = -a[0] * y[k - 1] - a[1] * y[k - 2] \
                + b[0] * u[k - 1] + b[1] * u[k - 2]
        model = sysid.fit_arx(y, u, 2)
        np.testing.assert_allclose(model.a, a, atol=1e-9)
        np.testing.assert_allclose(model.b, b, atol=1e-9)
        assert model.rms_residual < 1e-9

    def test_predict_one_step(self):
        model = sysid.ArxModel(a=np.array([-0.9]), b=np.array([0.2]),
                               rms_residual=0.0)
        # newest sample first
        assert model.predict(np.array([2.0]), np.array([1.0])) == \
            pytest.approx(0.9 * 2.0 + 0.2)

    def test_validation(self, rng):
        with pytest.raises(ValueError):
            sysid.fit_arx(np.zeros(10), np.zeros(10), 0)
        with pytest.raises(ValueError):
            sysid.fit_arx(np.zeros(4), np.zeros(4), 2)
        with pytest.raises(EstimationError):
            sysid.fit_arx(np.zeros(50), np.zeros(50), 1)


class TestStateSpace:
    def test_exact_recovery(self, rng):
        A = np.array([[0.9, 0.1], [0.0, 0.8]])
        B = np.array([[0.0], [0.5]])
        U = rng.standard_normal((300, 1))
        X = np.zeros((301, 2))
        for k in range(300):
            X[k + 1] = A @ X[k] + B[:, 0] * U[k, 0]
        A_hat, B_hat = sysid.estimate_ss(X, np.vstack([U, [[0.0]]]))
        np.testing.assert_allclose(A_hat, A, atol=1e-10)
        np.testing.assert_allclose(B_hat, B, atol=1e-10)

    def test_explicit_next_state_form(self, rng):
        A = np.array([[0.7]])
        B = np.array([[0.3]])
        X = rng.standard_normal((100, 1))
        U = rng.standard_normal((100, 1))
        Xn = X @ A.T + U @ B.T
        A_hat, B_hat = sysid.estimate_ss(X, U, Xn)
        np.testing.assert_allclose(A_hat, A, atol=1e-12)
        np.testing.assert_allclose(B_hat, B, atol=1e-12)

    def test_rank_deficiency_raises(self):
        X = np.ones((50, 2))
        U = np.ones((50, 1))
        with pytest.raises(EstimationError):
            sysid.estimate_ss(X, U)


class TestGrayBox:
    def test_model_validation(self):
        with pytest.raises(ValueError):
            sysid.GrayBoxModel(theta=np.zeros(4))
        with pytest.raises(ValueError):
            sysid.GrayBoxModel(theta=np.zeros(6))   # th1 == 0
        with pytest.raises(ValueError):
            sysid.GrayBoxModel(theta=np.ones(6),
                               mask=np.array([0, 1, 1, 1, 1, 1], bool))

    def test_mask_zeroes_inactive_terms(self):
        m = sysid.GrayBoxModel(theta=np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
                               mask=np.array([1, 1, 0, 1, 1, 0], bool))
        assert m.theta[2] == 0.0 and m.theta[5] == 0.0
        assert m.rhs(v=0.0, u=1.0, alpha=0.0) == pytest.approx(1.0 + 2.0)

    def test_simulate_matches_closed_form(self):
        # dv/dt = -0.1 v with v0 = 10 decays exponentially.
        m = sysid.GrayBoxModel(theta=np.array([1.0, 0.0, -0.1, 0.0, 0.0, 0.0]))
        n = 50
        sim = m.simulate(10.0, np.zeros(n), np.zeros(n), 0.1)
        np.testing.assert_allclose(sim, 10.0 * np.exp(-0.1 * 0.1 * np.arange(n)),
                                   rtol=1e-8)

    def test_simulate_divergence_returns_none(self):
        m = sysid.GrayBoxModel(theta=np.array([1.0, 0.0, 2.0, 0.0, 0.0, 0.0]))
        assert m.simulate(1.0, np.zeros(500), np.zeros(500), 0.5) is None

    def test_truck_fit_accuracy(self, truck_sc, truck_fit):
        data, model, eff, fit = truck_fit
        assert fit.converged
        truth = harness.true_theta(truck_sc)
        mask = np.array(truck_sc.est_mask, bool)
        rel = np.abs((model.theta[mask] - truth[mask]) / truth[mask])
        assert rel.max() < 0.005
        assert sysid.validate(model, data) < 0.05

    def test_fit_requires_active_input_term(self, truck_fit):
        data = truck_fit[0]
        with pytest.raises(ValueError):
            sysid.fit_graybox(data, mask=np.array([0, 1, 0, 1, 1, 0], bool))

    def test_dataset_round_trip_bit_exact(self, truck_fit, tmp_path):
        data = truck_fit[0]
        path = tmp_path / "data.csv"
        data.to_csv(path)
        back = sysid.Dataset.from_csv(path)
        np.testing.assert_array_equal(data.t, back.t)
        np.testing.assert_array_equal(data.v, back.v)
        np.testing.assert_array_equal(data.alpha, back.alpha)
        np.testing.assert_array_equal(data.u, back.u)
        np.testing.assert_array_equal(data.P, back.P)

    def test_theta_file_round_trip(self, truck_fit, tmp_path):
        _, model, eff, _ = truck_fit
        path = tmp_path / "theta.txt"
        sysid.save_theta(path, model, eff)
        model2, eff2 = sysid.load_theta(path)
        np.testing.assert_array_equal(model.theta, model2.theta)
        assert eff2 is not None
        assert eff2.gen_factor == eff.gen_factor
        assert eff2.regen_factor == eff.regen_factor


class TestEfficiency:
    def test_recovers_known_factors(self, rng):
        u = rng.uniform(-500.0, 500.0, 400)
        v = rng.uniform(5.0, 20.0, 400)
        P = np.where(u >= 0, 1.07, 0.93) * u * v
        eff = sysid.fit_efficiency(P, u, v)
        assert eff.gen_factor == pytest.approx(1.07, rel=1e-9)
        assert eff.regen_factor == pytest.approx(0.93, rel=1e-9)

    def test_missing_regen_regime_warns_and_defaults(self, rng):
        u = rng.uniform(10.0, 500.0, 200)
        v = rng.uniform(5.0, 20.0, 200)
        P = 1.1 * u * v
        with pytest.warns(UserWarning, match="regeneration"):
            eff = sysid.fit_efficiency(P, u, v, defaults=(1.1, 0.85))
        assert eff.regen_factor == 0.85

    def test_inadmissible_estimates_clipped(self, rng):
        u = rng.uniform(10.0, 500.0, 200)
        v = rng.uniform(5.0, 20.0, 200)
        P = 0.7 * u * v   # below the gen >= 1 bound
        with pytest.warns(UserWarning):
            eff = sysid.fit_efficiency(P, u, v)
        assert eff.gen_factor == 1.0

    def test_eta_switches_on_input_sign(self):
        eff = sysid.EfficiencyParams(gen_factor=1.1, regen_factor=0.9)
        assert eff.eta(1e9) == pytest.approx(1.1)
        assert eff.eta(-1e9) == pytest.approx(0.9)
        assert eff.eta(0.0) == pytest.approx(1.1)

    def test_inadmissible_params_rejected(self):
        with pytest.raises(ValueError):
            sysid.EfficiencyParams(gen_factor=0.95, regen_factor=0.9)
        with pytest.raises(ValueError):
            sysid.EfficiencyParams(gen_factor=1.1, regen_factor=1.05)


class TestLagBias:
    def test_large_motor_lag_biases_the_fit(self, truck_sc):
        """A ten-fold actuator lag must show up as parameter bias."""
        sc = harness.replace_scenario(truck_sc,
                                      plant_params=TruckParams(T_m=10.0))
        data = harness.stage_dataset(sc)
        model, _, _ = harness.stage_estimate(sc, data)
        truth = harness.true_theta(sc)
        mask = np.array(sc.est_mask, bool)
        rel = np.abs((model.theta[mask] - truth[mask]) / truth[mask])
        assert rel.max() > 0.05
