import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oufit.classical import (
    EstimateReport, InnovationLikelihood, OptConfig, RegressionFit, ar1_coefficients,
    batch_loglik, estimate_ols, kalman_filter, kalman_mle, ols_fit, recover_params,
    sigma_from_eta_var,
)
from oufit.core import OUParams, PathSet, TimeGrid, simulate
from oufit.errors import BetaOutOfRange, DegenerateDesign, DidNotConverge, InvalidParams

from oracles import dense_gaussian_filter, normal_equations_longdouble

BETA_005 = 0.9851119396030626615
ETA_VAR_005 = 0.001231436102145492628  # (0.25/6)(1 - e^-0.03), mpmath


def noiseless(n_steps=1000, dt=0.005, x0=0.0):
    p = OUParams(3.0, 0.5, 0.0, x0=x0, horizon=n_steps * dt)
    return simulate(p, TimeGrid(n_steps, dt), 1, seed=0)


class TestOls:
    def test_noiseless_is_exact_ar1(self):
        fit = ols_fit(noiseless())
        assert fit.beta == pytest.approx(BETA_005, abs=1e-10)
        assert fit.alpha == pytest.approx(0.5 * (1 - BETA_005), abs=1e-10)
        assert fit.resid_var == pytest.approx(0.0, abs=1e-10)
        assert fit.n_obs == 1000

    def test_identity_dynamics(self):
        # each path constant at its own level: x[k+1] = x[k] exactly
        levels = np.array([-1.0, 0.3, 2.0])
        values = np.repeat(levels[:, None], 20, axis=1)
        ps = PathSet.__new__(PathSet)
        object.__setattr__(ps, "grid", TimeGrid(19, 0.1))
        object.__setattr__(ps, "values", values)
        fit = ols_fit(ps)
        assert fit.beta == pytest.approx(1.0, abs=1e-14)
        assert fit.alpha == pytest.approx(0.0, abs=1e-14)
        with pytest.raises(BetaOutOfRange) as exc:
            recover_params(fit, 0.1)
        assert exc.value.side == "above"

    def test_degenerate_constant_path(self):
        p = OUParams(3.0, 0.5, 0.0, x0=0.5)
        with pytest.raises(DegenerateDesign):
            ols_fit(simulate(p, TimeGrid(100, 0.01), 2, seed=0))

    def test_matches_extended_precision_oracle(self):
        p = OUParams(3.0, 0.5, 0.5, horizon=5.0)
        ps = simulate(p, TimeGrid.from_horizon(5.0, 5000), 100, seed=31)
        fit = ols_fit(ps)
        alpha, beta, rv = normal_equations_longdouble(ps.values)
        assert fit.alpha == pytest.approx(float(alpha), rel=1e-9)
        assert fit.beta == pytest.approx(float(beta), rel=1e-9)
        assert fit.resid_var == pytest.approx(float(rv), rel=1e-9)

    def test_regression_fit_invariants(self):
        with pytest.raises(InvalidParams):
            RegressionFit(0.0, 0.5, 0.1, 2)
        with pytest.raises(InvalidParams):
            RegressionFit(0.0, 0.5, -1e-3, 10)


class TestRecoverParams:
    def test_noiseless_inversion(self):
        rep = recover_params(RegressionFit(0.5 * (1 - BETA_005), BETA_005, 0.0, 100), 0.005)
        assert rep.method == "OLS"
        assert rep.theta_hat == pytest.approx(3.0, abs=1e-10)
        assert rep.mu_hat == pytest.approx(0.5, abs=1e-10)
        assert rep.sigma_hat == 0.0

    def test_sigma_from_analytic_eta_variance(self):
        rep = recover_params(RegressionFit(0.0, BETA_005, ETA_VAR_005, 100), 0.005)
        assert rep.sigma_hat == pytest.approx(0.5, abs=1e-10)

    @pytest.mark.parametrize("beta,side", [(0.0, "below"), (-0.2, "below"), (1.0, "above"), (1.3, "above")])
    def test_beta_out_of_range(self, beta, side):
        with pytest.raises(BetaOutOfRange) as exc:
            recover_params(RegressionFit(0.0, beta, 0.01, 10), 0.01)
        assert exc.value.side == side

    @given(theta=st.floats(0.05, 30), sigma=st.floats(0.01, 5), dt=st.floats(1e-4, 0.1))
    def test_sigma_round_trip(self, theta, sigma, dt):
        # theta is re-derived from the rounded beta, as recover_params does; the
        # true theta disagrees with it by ~ulp / (theta*dt), up to 1e-11 here
        _, beta, var_eta = ar1_coefficients(theta, 0.0, sigma, dt)
        theta_b = -math.log(beta) / dt
        assert sigma_from_eta_var(var_eta, beta, theta_b) == pytest.approx(sigma, rel=1e-12)

    @given(theta=st.floats(0.05, 30), mu=st.floats(-10, 10), dt=st.floats(1e-4, 0.1))
    def test_forward_map_inversion(self, theta, mu, dt):
        alpha, beta, _ = ar1_coefficients(theta, mu, 0.0, dt)
        rep = recover_params(RegressionFit(alpha, beta, 0.0, 10), dt)
        assert rep.theta_hat == pytest.approx(theta, rel=1e-10)
        assert rep.mu_hat == pytest.approx(mu, rel=1e-10, abs=1e-10)

    def test_consistency_spread_shrinks_with_more_paths(self):
        p = OUParams(3.0, 0.5, 0.5, horizon=1.0)
        g = TimeGrid.from_horizon(1.0, 500)

        def spread(n_paths, base):
            est = np.array([
                (r.mu_hat, r.sigma_hat)
                for r in (estimate_ols(simulate(p, g, n_paths, seed=base + i)) for i in range(20))
            ])
            return est.std(axis=0, ddof=1)

        small = spread(50, 1000)
        large = spread(100, 2000)
        assert np.all(large < small)


class TestKalmanFilter:
    def test_perfect_observations(self):
        y = np.array([0.1, 0.4, -0.2, 0.3])
        run = kalman_filter(y, 0.1, 0.8, 0.2, 0.0, 0.0, 1.0)
        np.testing.assert_array_equal(run.gain, 1.0)
        np.testing.assert_allclose(run.filtered_mean, y, rtol=0, atol=1e-15)
        np.testing.assert_array_equal(run.filtered_var, 0.0)

    def test_static_state(self):
        y = np.full(10, 1.7)
        run = kalman_filter(y, 0.0, 1.0, 0.0, 0.3, 1.7, 0.5)
        np.testing.assert_allclose(run.filtered_mean, 1.7, rtol=0, atol=1e-15)
        np.testing.assert_allclose(run.innovations, 0.0, atol=1e-15)

    def test_rejects_zero_noise(self):
        with pytest.raises(InvalidParams):
            kalman_filter([1.0], 0.0, 0.5, 0.0, 0.0, 0.0, 1.0)

    def test_matches_dense_oracle_50_steps(self):
        rng = np.random.default_rng(50)
        y = 0.5 + 0.3 * rng.standard_normal(50).cumsum() * 0.1
        args = (0.02, 0.95, 0.01, 0.004, 0.2, 0.05)
        run = kalman_filter(y, *args)
        ll, fm, fv = dense_gaussian_filter(y, *args)
        assert run.loglik == pytest.approx(ll, rel=1e-8)
        np.testing.assert_allclose(run.filtered_mean, fm, rtol=1e-8)
        np.testing.assert_allclose(run.filtered_var, fv, rtol=1e-8)

    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 64),
           beta=st.floats(0.05, 0.999), var_eta=st.floats(1e-4, 1.0), var_eps=st.floats(0.0, 1.0),
           init_var=st.floats(0.0, 2.0))
    @settings(max_examples=40, deadline=None)
    def test_dense_oracle_property(self, seed, n, beta, var_eta, var_eps, init_var):
        rng = np.random.default_rng(seed)
        y = rng.standard_normal(n)
        args = (0.1, beta, var_eta, var_eps, 0.0, init_var)
        run = kalman_filter(y, *args)
        ll, _, _ = dense_gaussian_filter(y, *args)
        assert run.loglik == pytest.approx(ll, rel=1e-8)
        assert np.all(run.gain >= 0) and np.all(run.gain <= 1)
        assert np.all(run.filtered_var >= 0) and np.all(run.innovation_var > 0)
        assert run.filtered_mean.size == n

    @pytest.mark.parametrize("var_eps", [0.0, 1e-6, 0.01, 0.5])
    def test_batch_loglik_matches_row_filter(self, var_eps):
        p = OUParams(3.0, 0.5, 0.5)
        ps = simulate(p, TimeGrid(400, 0.005), 6, seed=3)
        alpha, beta, var_eta = ar1_coefficients(3.0, 0.5, 0.5, 0.005)
        rows = sum(
            kalman_filter(v[1:], alpha, beta, var_eta, var_eps, v[0], p.stationary_var).loglik
            for v in ps.values
        )
        assert batch_loglik(ps.values, alpha, beta, var_eta, var_eps, p.stationary_var) == pytest.approx(rows, rel=1e-11)

    def test_cached_likelihood_reusable(self):
        ps = simulate(OUParams(3.0, 0.5, 0.5), TimeGrid(300, 0.01), 4, seed=8)
        lik = InnovationLikelihood(ps.values)
        for theta in (1.0, 3.0, 6.0):
            alpha, beta, var_eta = ar1_coefficients(theta, 0.4, 0.6, 0.01)
            sv = 0.36 / (2 * theta)
            assert lik(alpha, beta, var_eta, 0.0, sv) == batch_loglik(ps.values, alpha, beta, var_eta, 0.0, sv)


class TestKalmanMle:
    def test_near_deterministic_recovery(self):
        p = OUParams(3.0, 0.5, 1e-3, horizon=5.0)
        ps = simulate(p, TimeGrid.from_horizon(5.0, 5000), 20, seed=4)
        rep = kalman_mle(ps, obs_noise=0.0)
        assert rep.method == "Kalman"
        assert rep.theta_hat == pytest.approx(3.0, rel=0.01)
        assert rep.mu_hat == pytest.approx(0.5, rel=0.01)
        assert rep.sigma_hat == pytest.approx(1e-3, rel=0.01)
        assert rep.diagnostics["converged"]

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_never_worse_than_warm_start(self, seed):
        ps = simulate(OUParams(3.0, 0.5, 0.5), TimeGrid.from_horizon(1.0, 1000), 50, seed=seed)
        rep = kalman_mle(ps)
        assert rep.diagnostics["loglik"] >= rep.diagnostics["loglik_start"]
        assert all(math.isfinite(v) for v in (rep.mu_hat, rep.theta_hat, rep.sigma_hat))

    def test_free_observation_noise(self):
        ps = simulate(OUParams(3.0, 0.5, 0.5), TimeGrid.from_horizon(1.0, 200), 10, seed=12)
        rep = kalman_mle(ps, "free", OptConfig(max_iter=300), raise_on_nonconvergence=False)
        assert rep.diagnostics["loglik"] >= rep.diagnostics["loglik_start"]
        assert rep.diagnostics["obs_noise_std"] >= 0

    def test_iteration_cap_raises_with_best(self):
        ps = simulate(OUParams(3.0, 0.5, 0.5), TimeGrid.from_horizon(1.0, 200), 10, seed=12)
        with pytest.raises(DidNotConverge) as exc:
            kalman_mle(ps, opt=OptConfig(max_iter=3))
        assert isinstance(exc.value.best, EstimateReport)
        assert exc.value.best.diagnostics["iterations"] == 3

    def test_rejects_negative_noise(self):
        ps = simulate(OUParams(3.0, 0.5, 0.5), TimeGrid(100, 0.01), 2, seed=0)
        with pytest.raises(InvalidParams):
            kalman_mle(ps, obs_noise=-1.0)
