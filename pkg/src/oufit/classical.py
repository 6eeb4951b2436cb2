"""Classical estimators: pooled AR(1) least squares and Kalman-filter MLE.

Both work on the AR(1) form of the exact discretization,

    x[k] = alpha + beta * x[k-1] + eta[k],   eta ~ N(0, var_eta),
    alpha = mu * (1 - beta),  beta = exp(-theta*dt),
    var_eta = sigma**2 / (2*theta) * (1 - beta**2),

and map fitted (alpha, beta, var_eta) back to (mu, theta, sigma).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from . import nelder_mead
from .errors import BetaOutOfRange, DegenerateDesign, DidNotConverge, InvalidParams, NumericalBreakdown

LOG_2PI = math.log(2.0 * math.pi)

METHODS = ("OLS", "Kalman", "NN")


@dataclass(frozen=True)
class RegressionFit:
    alpha: float
    beta: float
    resid_var: float
    n_obs: int

    def __post_init__(self):
        if self.n_obs < 3:
            raise InvalidParams("n_obs", f"need at least 3 pooled observations, got {self.n_obs}")
        if not self.resid_var >= 0:
            raise InvalidParams("resid_var", f"must be >= 0, got {self.resid_var!r}")


@dataclass
class EstimateReport:
    method: str
    mu_hat: float
    theta_hat: float
    sigma_hat: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidParams("method", f"must be one of {METHODS}, got {self.method!r}")


@dataclass
class KalmanRun:
    filtered_mean: np.ndarray
    filtered_var: np.ndarray
    innovations: np.ndarray
    innovation_var: np.ndarray
    gain: np.ndarray
    loglik: float


def ols_fit(paths):
    """Pooled least squares of x[k+1] on x[k] over every path and step."""
    values = paths.values
    if values.shape[1] < 2:
        raise DegenerateDesign("need at least two time points per path")
    x = values[:, :-1].ravel()
    y = values[:, 1:].ravel()
    n = x.size
    if n < 3:
        raise DegenerateDesign(f"need at least 3 pooled transitions, got {n}")
    xm = x.mean()
    ym = y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx / n < 1e-14:
        raise DegenerateDesign("pooled predictor variance is below 1e-14 (constant trajectory)")
    beta = float(dx @ (y - ym)) / sxx
    alpha = float(ym - beta * xm)
    resid = y - alpha - beta * x
    resid_var = float(resid @ resid) / (n - 2)
    return RegressionFit(alpha=alpha, beta=beta, resid_var=resid_var, n_obs=n)


def _check_beta(beta):
    if beta <= 0:
        raise BetaOutOfRange(beta, "below")
    if beta >= 1:
        raise BetaOutOfRange(beta, "above")


def sigma_from_eta_var(var_eta, beta, theta):
    # -expm1(2 log beta) is 1 - beta**2 without cancellation when beta is near 1
    return math.sqrt(var_eta) * math.sqrt(2.0 * theta / -math.expm1(2.0 * math.log(beta)))


def recover_params(fit, dt):
    _check_beta(fit.beta)
    theta = -math.log(fit.beta) / dt
    mu = fit.alpha / (1.0 - fit.beta)
    sigma = sigma_from_eta_var(fit.resid_var, fit.beta, theta)
    return EstimateReport(
        method="OLS", mu_hat=mu, theta_hat=theta, sigma_hat=sigma,
        diagnostics={"alpha": fit.alpha, "beta": fit.beta, "resid_var": fit.resid_var, "n_obs": fit.n_obs},
    )


def estimate_ols(paths):
    return recover_params(ols_fit(paths), paths.grid.dt)


def ar1_coefficients(theta, mu, sigma, dt):
    """``(alpha, beta, var_eta)`` of the transition over ``dt``."""
    beta = math.exp(-theta * dt)
    var_eta = sigma * sigma / (2.0 * theta) * -math.expm1(-2.0 * theta * dt)
    return mu * (1.0 - beta), beta, var_eta


def _check_noise(var_eta, var_eps, init_var):
    if var_eta < 0 or var_eps < 0:
        raise InvalidParams("var_eta/var_eps", "noise variances must be >= 0")
    if var_eta == 0 and var_eps == 0:
        raise InvalidParams("var_eta/var_eps", "state and observation noise cannot both be zero")
    if init_var < 0:
        raise InvalidParams("init_var", f"must be >= 0, got {init_var!r}")


def kalman_filter(observations, alpha, beta, var_eta, var_eps, init_mean, init_var):
    """Scalar Kalman filter for x[k] = alpha + beta x[k-1] + eta, y[k] = x[k] + eps."""
    _check_noise(var_eta, var_eps, init_var)
    y = np.asarray(observations, dtype=np.float64)
    n = y.size
    xf = np.empty(n)
    pf = np.empty(n)
    r = np.empty(n)
    s = np.empty(n)
    gain = np.empty(n)
    x, p = float(init_mean), float(init_var)
    ll = 0.0
    for k in range(n):
        x_pred = alpha + beta * x
        p_pred = beta * beta * p + var_eta
        r[k] = y[k] - x_pred
        s[k] = p_pred + var_eps
        if not s[k] > 0:
            raise NumericalBreakdown(f"innovation variance S_{k + 1} = {s[k]!r} is not positive")
        gain[k] = p_pred / s[k]
        x = x_pred + gain[k] * r[k]
        p = p_pred * (1.0 - gain[k])
        xf[k] = x
        pf[k] = p
        ll += -0.5 * (LOG_2PI + math.log(s[k])) - r[k] * r[k] / (2.0 * s[k])
    return KalmanRun(filtered_mean=xf, filtered_var=pf, innovations=r, innovation_var=s, gain=gain, loglik=ll)


def _variance_schedule(beta, var_eta, var_eps, init_var, n):
    """Innovation variances and gains for steps 1..n.

    These do not depend on the data. The recursion is iterated until the
    filtered variance reaches its fixed point; the remaining steps reuse the
    steady-state values. Returns ``(s, gain, n_transient)``.
    """
    s = np.empty(n)
    gain = np.empty(n)
    p = init_var
    k = 0
    while k < n:
        p_pred = beta * beta * p + var_eta
        s[k] = p_pred + var_eps
        gain[k] = p_pred / s[k]
        p_new = p_pred * (1.0 - gain[k])
        k += 1
        if k > 1 and abs(p_new - p) <= 4e-16 * p:
            break
        p = p_new
    s[k:] = s[k - 1]
    gain[k:] = gain[k - 1]
    return s, gain, k


class InnovationLikelihood:
    """Summed innovations log-likelihood over the rows of a path matrix.

    Each row is one path; column 0 initializes the filter mean and the
    likelihood runs over columns 1..N. Agrees with :func:`kalman_filter`
    applied row by row, but vectorized across paths. Past the transient the
    gain is constant: a unit gain (no observation noise) reduces every
    innovation to ``y[k] - alpha - beta*y[k-1]``, which is summed from
    per-column moments cached at construction; any other gain runs a
    time-invariant linear filter over the tail.
    """

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64)
        prev = self.values[:, :-1]
        self.shift = float(prev.mean())
        xs = prev - self.shift
        d = self.values[:, 1:] - prev

        def tail(col):
            # tail(col)[j] = sum of col[j:]; one trailing zero for the empty tail
            return np.concatenate([np.cumsum(col[::-1])[::-1], [0.0]])

        self._sx = tail(xs.sum(axis=0))
        self._sxx = tail((xs * xs).sum(axis=0))
        self._sd = tail(d.sum(axis=0))
        self._sdd = tail((d * d).sum(axis=0))
        self._sdx = tail((d * xs).sum(axis=0))

    def __call__(self, alpha, beta, var_eta, var_eps, init_var):
        _check_noise(var_eta, var_eps, init_var)
        values = self.values
        n_paths, n = values.shape[0], values.shape[1] - 1
        s, gain, m = _variance_schedule(beta, var_eta, var_eps, init_var, n)
        if not np.all(s > 0):
            raise NumericalBreakdown("non-positive innovation variance")
        log_det = n_paths * float(np.sum(LOG_2PI + np.log(s)))

        x = values[:, 0]
        quad = 0.0
        for k in range(m):
            x_pred = alpha + beta * x
            r = values[:, k + 1] - x_pred
            quad += float(r @ r) / s[k]
            x = x_pred + gain[k] * r
        if m < n:
            g = gain[m]
            if g == 1.0:
                # x_hat[k] = y[k]; transitions k -> k+1 for k >= m
                gam = 1.0 - beta
                a = alpha - gam * self.shift
                cnt = n_paths * (n - m)
                ssq = (self._sdd[m] + gam * gam * self._sxx[m] + cnt * a * a
                       + 2.0 * gam * self._sdx[m] - 2.0 * a * self._sd[m]
                       - 2.0 * a * gam * self._sx[m])
                quad += max(ssq, 0.0) / s[m]
            else:
                y = values[:, m + 1:]
                b = (1.0 - g) * beta
                u = (1.0 - g) * alpha + g * y
                xf, _ = lfilter([1.0], [1.0, -b], u, axis=1, zi=b * x[:, None])
                prev = np.concatenate([x[:, None], xf[:, :-1]], axis=1)
                r = y - (alpha + beta * prev)
                quad += float(np.sum(r * r)) / s[m]
        return float(-0.5 * log_det - 0.5 * quad)


def batch_loglik(values, alpha, beta, var_eta, var_eps, init_var):
    return InnovationLikelihood(values)(alpha, beta, var_eta, var_eps, init_var)


@dataclass(frozen=True)
class OptConfig:
    max_iter: int = 2000
    xtol: float = 1e-8


def kalman_mle(paths, obs_noise=0.0, opt=OptConfig(), *, raise_on_nonconvergence=True):
    """Fit (mu, theta, sigma) by maximizing the Kalman innovations likelihood.

    ``obs_noise`` is either a fixed observation-noise standard deviation
    or ``"free"`` to fit it alongside the OU parameters. The search runs in
    (log theta, mu, log sigma[, log sigma_eps]) from the OLS estimate.
    """
    free = obs_noise == "free"
    if not free:
        obs_noise = float(obs_noise)
        if not obs_noise >= 0:
            raise InvalidParams("obs_noise", f"must be >= 0 or 'free', got {obs_noise!r}")
    dt = paths.grid.dt
    lik = InnovationLikelihood(paths.values)
    warm = estimate_ols(paths)
    resid_sd = math.sqrt(warm.diagnostics["resid_var"])

    def unpack(z):
        theta, mu, sigma = math.exp(z[0]), float(z[1]), math.exp(z[2])
        eps_sd = math.exp(z[3]) if free else obs_noise
        return theta, mu, sigma, eps_sd

    def loglik(z):
        theta, mu, sigma, eps_sd = unpack(z)
        alpha, beta, var_eta = ar1_coefficients(theta, mu, sigma, dt)
        var_eps = eps_sd * eps_sd
        if var_eta <= 0 and var_eps <= 0:
            return -math.inf
        return lik(alpha, beta, var_eta, var_eps, sigma * sigma / (2.0 * theta))

    z0 = [math.log(warm.theta_hat), warm.mu_hat, math.log(max(warm.sigma_hat, 1e-12))]
    step = [0.1, 0.1 * max(abs(warm.mu_hat), warm.sigma_hat / math.sqrt(2.0 * warm.theta_hat), 1e-3), 0.1]
    if free:
        z0.append(math.log(max(0.5 * resid_sd, 1e-12)))
        step.append(0.5)
    ll_start = loglik(np.array(z0))
    res = nelder_mead.minimize(lambda z: -loglik(z), z0, step=step, xtol=opt.xtol, max_iter=opt.max_iter)

    theta, mu, sigma, eps_sd = unpack(res.x)
    alpha, beta, _ = ar1_coefficients(theta, mu, sigma, dt)
    _check_beta(beta)
    report = EstimateReport(
        method="Kalman", mu_hat=float(mu), theta_hat=theta, sigma_hat=sigma,
        diagnostics={
            "loglik": -res.fun,
            "loglik_start": ll_start,
            "iterations": res.iterations,
            "evaluations": res.evaluations,
            "converged": res.converged,
            "obs_noise_std": eps_sd,
            "alpha": float(alpha),
            "beta": beta,
        },
    )
    if not res.converged and raise_on_nonconvergence:
        raise DidNotConverge(
            f"simplex diameter {res.diameter:.3g} still above {opt.xtol} after {res.iterations} iterations",
            best=report,
        )
    return report


REPORT_COLUMNS = ("method", "paths", "n_steps", "horizon", "seed",
                  "mu_hat", "theta_hat", "sigma_hat", "loglik", "converged")


def report_row(report, paths):
    """CSV fields for one report, in :data:`REPORT_COLUMNS` order."""
    diag = report.diagnostics
    loglik = diag.get("loglik")
    converged = diag.get("converged")
    return [
        report.method,
        str(paths.n_paths),
        str(paths.grid.n_steps),
        repr(paths.grid.horizon),
        "" if paths.seed is None else str(paths.seed),
        repr(report.mu_hat),
        repr(report.theta_hat),
        repr(report.sigma_hat),
        "" if loglik is None else repr(float(loglik)),
        "" if converged is None else str(bool(converged)).lower(),
    ]
