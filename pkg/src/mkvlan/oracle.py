"""Closed-form Gaussian machinery for the mean-field Ornstein-Uhlenbeck model.

Under ``dX = theta1 (kappa m_t - X) dt + theta2 dW`` with ``m_t = E[X_t]`` the
mean flow solves ``m' = theta1 (kappa - 1) m``. Writing ``Y = X - m_t`` gives a
plain OU process ``dY = -theta1 Y dt + theta2 dW``, so the transition from
``(t, x)`` over ``dt`` is Gaussian with

    mean = exp(-theta1 dt) (x - m_t) + m_{t+dt}
    var  = theta2^2 (1 - exp(-2 theta1 dt)) / (2 theta1)

per coordinate. The conditional-moment Monte Carlo at the end of the module
works for any :class:`~mkvlan.model.ModelSpec`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

from .errors import DomainError, PropagationError
from .model import MeasureSnapshot, ModelSpec, ThetaPair
from .rng import STREAM_INNER, NoiseStream

LOG_2PI = math.log(2.0 * math.pi)
SERIES_SWITCH = 1e-6


@dataclass(frozen=True, eq=False)
class GaussianTransition:
    """Gaussian law of ``X_{t+dt}`` given ``X_t``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise DomainError(f"cov shape {cov.shape} does not match mean of length {mean.size}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-14:
            raise DomainError("covariance is not symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise DomainError("covariance is not positive definite") from None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dimension(self) -> int:
        return self.mean.size

    def log_density(self, y) -> float:
        r = np.atleast_1d(np.asarray(y, dtype=float)) - self.mean
        w = np.linalg.solve(self._chol, r)
        logdet = 2.0 * np.sum(np.log(np.diag(self._chol)))
        return float(-0.5 * (self.dimension * LOG_2PI + logdet + w @ w))


def ou_log_density(trans: GaussianTransition, y) -> float:
    """Exact Gaussian log-density of ``trans`` at ``y``."""
    return trans.log_density(y)


@dataclass(frozen=True)
class MeanFlow:
    """``m_t = m0 exp(theta1 (kappa - 1) t)`` and its ``theta1``-derivative."""

    m0: float
    kappa: float
    theta1: float

    def value(self, t):
        return self.m0 * np.exp(self.theta1 * (self.kappa - 1.0) * np.asarray(t, dtype=float))

    def d_theta1(self, t):
        t = np.asarray(t, dtype=float)
        return (self.kappa - 1.0) * t * self.value(t)


def mean_flow(theta1, kappa, m0, t):
    return m0 * np.exp(theta1 * (kappa - 1.0) * np.asarray(t, dtype=float))


def mean_flow_d_theta1(theta1, kappa, m0, t):
    t = np.asarray(t, dtype=float)
    return (kappa - 1.0) * t * mean_flow(theta1, kappa, m0, t)


def variance_factor(theta1: float, dt: float) -> float:
    """``f = (1 - exp(-2 theta1 dt)) / (2 theta1)``, series near ``theta1 dt = 0``."""
    q = theta1 * dt
    if abs(q) < SERIES_SWITCH:
        return dt * (1.0 - q + 2.0 * q * q / 3.0)
    return -math.expm1(-2.0 * q) / (2.0 * theta1)


def variance_factor_d_theta1(theta1: float, dt: float) -> float:
    q = theta1 * dt
    if abs(q) < SERIES_SWITCH:
        return dt * dt * (-1.0 + 4.0 * q / 3.0)
    return dt * math.exp(-2.0 * q) / theta1 + math.expm1(-2.0 * q) / (2.0 * theta1 * theta1)


def ou_mean(theta1, kappa, m0, t, x, dt):
    """Conditional mean, vectorised over ``t`` and ``x``."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    return math.exp(-theta1 * dt) * (x - mean_flow(theta1, kappa, m0, t)) + mean_flow(theta1, kappa, m0, t + dt)


def ou_mean_d_theta1(theta1, kappa, m0, t, x, dt):
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    e = math.exp(-theta1 * dt)
    return (-dt * e * (x - mean_flow(theta1, kappa, m0, t))
            - e * mean_flow_d_theta1(theta1, kappa, m0, t)
            + mean_flow_d_theta1(theta1, kappa, m0, t + dt))


def ou_variance(theta1: float, theta2: float, dt: float) -> float:
    if dt <= 0:
        raise DomainError("dt must be positive")
    return theta2 * theta2 * variance_factor(theta1, dt)


def ou_transition(theta: ThetaPair, kappa: float, m0: float, t: float, x, dt: float) -> GaussianTransition:
    """Exact transition law of the mean-field OU model from ``(t, x)`` over ``dt``."""
    if dt <= 0:
        raise DomainError("dt must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    var = ou_variance(theta.theta1, theta.theta2, dt)
    return GaussianTransition(ou_mean(theta.theta1, kappa, m0, t, x, dt), var * np.eye(x.size))


def ou_logpdf(theta1, theta2, kappa, m0, t, x, y, dt):
    """Vectorised transition log-density; ``x``, ``y`` have a trailing axis ``d``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x.shape[-1]
    var = ou_variance(theta1, theta2, dt)
    r = y - ou_mean(theta1, kappa, m0, np.asarray(t)[..., None], x, dt)
    return -0.5 * (d * (LOG_2PI + math.log(var)) + np.sum(r * r, axis=-1) / var)


def ou_scores(theta1, theta2, kappa, m0, t, x, y, dt):
    """Exact ``(d/dtheta1, d/dtheta2)`` of the transition log-density."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    tt = np.asarray(t, dtype=float)[..., None]
    var = ou_variance(theta1, theta2, dt)
    r = y - ou_mean(theta1, kappa, m0, tt, x, dt)
    dm = ou_mean_d_theta1(theta1, kappa, m0, tt, x, dt)
    dv1 = theta2 * theta2 * variance_factor_d_theta1(theta1, dt)
    dv2 = 2.0 * theta2 * variance_factor(theta1, dt)
    half = 0.5 * (r * r / var**2 - 1.0 / var)
    s1 = np.sum(r / var * dm + half * dv1, axis=-1)
    s2 = np.sum(half * dv2, axis=-1)
    return s1, s2


def ou_z_field(theta1, kappa, m0, t, x):
    """``z_t(x) = kappa m_t - x + theta1 kappa dm_t/dtheta1`` for the OU model."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    return (kappa * mean_flow(theta1, kappa, m0, t) - x
            + theta1 * kappa * mean_flow_d_theta1(theta1, kappa, m0, t))


def ou_marginal_variance(theta1, theta2, s0, t):
    """Per-coordinate variance of ``X_t`` when ``X_0 ~ N(m0, s0^2 I)``."""
    t = np.asarray(t, dtype=float)
    e = np.exp(-2.0 * theta1 * t)
    if abs(theta1) < SERIES_SWITCH:
        return s0 * s0 + theta2 * theta2 * t
    return e * s0 * s0 + theta2 * theta2 * (1.0 - e) / (2.0 * theta1)


def ou_fisher_exact(theta: ThetaPair, kappa: float, m0: float, s0: float, horizon: float,
                    dimension: int = 1) -> tuple[float, float]:
    """Exact ``(Sigma_b, Sigma_a)`` for the OU model.

    ``Sigma_b = int_0^T E|z_s(X_s)|^2 ds / theta2^2`` with
    ``E (c - X)^2 = (c - m)^2 + var`` per coordinate; ``Sigma_a = 2 T d / theta2^2``.
    """
    t1, t2 = theta.theta1, theta.theta2

    def integrand(s):
        m = float(mean_flow(t1, kappa, m0, s))
        c = kappa * m + t1 * kappa * float(mean_flow_d_theta1(t1, kappa, m0, s))
        return (c - m) ** 2 + float(ou_marginal_variance(t1, t2, s0, s))

    val, _ = integrate.quad(integrand, 0.0, horizon, epsabs=1e-13, epsrel=1e-12)
    return dimension * val / t2**2, 2.0 * horizon * dimension / t2**2


def taylor_mean_identity_check(theta0: ThetaPair, h, n_particles: int, k: int, x, delta: float,
                               kappa: float = 0.0, m0: float = 0.0, l: float = 1.0) -> float:
    """Residual of the first-order expansion of the conditional mean in ``theta1``.

    Returns ``|m^{theta0}(x) - m^{theta1(l)}(x) + (l u delta / sqrt N) z_{t_k}(x)|``
    with ``theta1(l) = theta1 + l u / sqrt N``; the conditional mean does not
    depend on ``theta2``, so ``v`` only enters through the signature. The
    residual is second order: halving ``delta`` at fixed ``N`` divides it by
    about four.
    """
    u = float(h[0])
    if n_particles < 1 or delta <= 0:
        raise DomainError("need n_particles >= 1 and delta > 0")
    t = k * delta
    t1 = theta0.theta1
    t1l = t1 + l * u / math.sqrt(n_particles)
    x = np.asarray(x, dtype=float)
    m_0 = ou_mean(t1, kappa, m0, t, x, delta)
    m_l = ou_mean(t1l, kappa, m0, t, x, delta)
    z = ou_z_field(t1, kappa, m0, t, x)
    return float(np.linalg.norm(np.atleast_1d(m_0 - m_l + l * u * delta / math.sqrt(n_particles) * z)))


def variance_identity_residuals(theta: ThetaPair, delta: float) -> tuple[float, float]:
    """``|V - delta a^2|`` and ``|dV/dtheta2 - 2 delta a da/dtheta2|`` for the OU model."""
    v = ou_variance(theta.theta1, theta.theta2, delta)
    dv = 2.0 * theta.theta2 * variance_factor(theta.theta1, delta)
    return abs(v - delta * theta.theta2**2), abs(dv - 2.0 * delta * theta.theta2)


def gaussian_envelope_constants(theta: ThetaPair, kappa: float, m0: float, t: float, x: float,
                                dt: float, ys) -> tuple[float, float]:
    """Fit constants ``K_lo, K_hi`` with ``K_lo g_lo <= p <= K_hi g_hi`` on ``ys``.

    ``g_hi`` and ``g_lo`` are centred Gaussians at ``x`` with variances
    ``2 theta2^2 dt`` and ``theta2^2 dt / 2``. Both constants are finite and
    positive whenever the transition density has Gaussian-type bounds on the
    probed window.
    """
    ys = np.asarray(ys, dtype=float)
    logp = ou_logpdf(theta.theta1, theta.theta2, kappa, m0, t, np.full((ys.size, 1), x), ys[:, None], dt)
    v0 = theta.theta2**2 * dt

    def log_g(scale):
        return -0.5 * (LOG_2PI + math.log(scale * v0)) - (ys - x) ** 2 / (2 * scale * v0)

    k_hi = float(np.exp(np.max(logp - log_g(2.0))))
    k_lo = float(np.exp(np.min(logp - log_g(0.5))))
    return k_lo, k_hi


@dataclass(frozen=True)
class MomentEstimate:
    """Monte Carlo conditional moments with standard errors."""

    mean: np.ndarray
    cov: np.ndarray
    mean_se: np.ndarray
    cov_se: np.ndarray
    n_inner: int


def conditional_moments_mc(model: ModelSpec, theta: ThetaPair, t: float, x, dt: float,
                           mu_path: Sequence[MeasureSnapshot], n_inner: int, seed: int) -> MomentEstimate:
    """Mean and covariance of ``X_{t+dt}`` given ``X_t = x`` by inner Euler paths.

    ``mu_path`` supplies the frozen measure for each of the inner substeps, so
    the inner step is ``dt / len(mu_path)``. ``t`` only labels errors.
    """
    if n_inner < 2:
        raise DomainError("n_inner must be >= 2")
    if dt <= 0 or len(mu_path) == 0:
        raise DomainError("need dt > 0 and a non-empty mu_path")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size
    h = dt / len(mu_path)
    noise = NoiseStream(seed, STREAM_INNER)
    ids = np.arange(n_inner)
    X = np.broadcast_to(x, (n_inner, d)).copy()
    for s, mu in enumerate(mu_path):
        xi = noise.normals(ids, s, d)
        a = model.diffusion(theta.theta2, X)
        X = X + h * model.drift(theta.theta1, X, mu) + math.sqrt(h) * np.einsum("npq,nq->np", a, xi)
        bad = ~np.all(np.isfinite(X), axis=1)
        if bad.any():
            raise PropagationError(int(np.argmax(bad)), t + (s + 1) * h)
    mean = X.mean(axis=0)
    R = X - mean
    cov = R.T @ R / (n_inner - 1)
    cov = 0.5 * (cov + cov.T)
    prod = R[:, :, None] * R[:, None, :]
    cov_se = prod.std(axis=0, ddof=1) / math.sqrt(n_inner)
    return MomentEstimate(mean, cov, np.sqrt(np.diag(cov) / n_inner), cov_se, n_inner)
