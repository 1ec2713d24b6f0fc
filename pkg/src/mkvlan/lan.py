"""Local perturbations, approximate scores and the Monte Carlo LAN harness.

For a local perturbation ``theta+ = (theta1 + u/sqrt(N), theta2 + v sqrt(delta/N))``
the log-likelihood ratio of the discretely observed particles is

    z = sum_k sum_i log p^{theta+}/p^{theta0}(t_k, t_{k+1}, X^i_{t_k}, X^i_{t_{k+1}}),

which is exact on the mean-field OU oracle. Off the oracle only the
approximate scores ``zeta_hat`` are available; they replace the density
scores with Gaussian surrogates built from the conditional mean ``m``,
conditional covariance ``V`` and the z-field

    z_t(x) = d_theta1 b(x, mu_t) + int lfd_b(x, y, mu_t) d_theta1 mu_t(dy).
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np
from scipy import stats

from .errors import DomainError, UnsupportedModelError
from .measure import EmpiricalMeasure, TangentMeasure
from .model import MeanFieldOU, MeasureSnapshot, ModelSpec, ThetaPair
from .oracle import (ou_fisher_exact, ou_logpdf, ou_mean, ou_variance, ou_z_field)
from .rng import STREAM_INNER, NoiseStream, derive_seed
from .simulate import (SimConfig, TangentCloud, TrajectoryGrid, simulate_particles,
                       simulate_with_tangents)

KS_ALPHA = 0.01
CLT_NAMES = ("drift_mean", "drift_variance", "drift_fourth", "diff_mean", "diff_variance",
             "diff_fourth", "cross_covariance")


@dataclass(frozen=True)
class LocalPerturbation:
    """``theta+ = (theta1 + u / sqrt(N), theta2 + v sqrt(delta / N))`` around ``theta0``."""

    theta0: ThetaPair
    u: float
    v: float
    n_particles: int
    delta: float

    def __post_init__(self):
        if self.n_particles < 1 or not self.delta > 0:
            raise DomainError("need n_particles >= 1 and delta > 0")
        t1, t2 = self.theta1_at(1.0), self.theta2_at(1.0)
        if not self.theta0.contains(t1, t2):
            raise DomainError(f"perturbed parameter ({t1}, {t2}) leaves the box")

    @property
    def step1(self) -> float:
        return self.u / math.sqrt(self.n_particles)

    @property
    def step2(self) -> float:
        return self.v * math.sqrt(self.delta / self.n_particles)

    def theta1_at(self, l: float) -> float:
        return self.theta0.theta1 + l * self.step1

    def theta2_at(self, l: float) -> float:
        return self.theta0.theta2 + l * self.step2

    @property
    def theta_plus(self) -> ThetaPair:
        return self.theta0.replace(self.theta1_at(1.0), self.theta2_at(1.0))

    def reversed(self) -> "LocalPerturbation":
        """Perturbation taking ``theta+`` back to ``theta0``."""
        return LocalPerturbation(self.theta_plus, -self.u, -self.v, self.n_particles, self.delta)

    @classmethod
    def for_grid(cls, theta0: ThetaPair, u: float, v: float, grid: TrajectoryGrid) -> "LocalPerturbation":
        return cls(theta0, u, v, grid.n_particles, grid.delta)


# ---------------------------------------------------------------------------
# conditional moments and z-fields on a grid


class MomentProvider(Protocol):
    def mean(self, theta1: float, theta2: float, grid: TrajectoryGrid) -> np.ndarray: ...
    def cov(self, theta1: float, theta2: float, grid: TrajectoryGrid) -> np.ndarray: ...


@dataclass(frozen=True)
class OracleMoments:
    """Exact OU conditional moments for every observed transition."""

    model: MeanFieldOU

    def mean(self, theta1, theta2, grid):
        t = grid.times[:-1][None, :, None]
        return ou_mean(theta1, self.model.kappa, self.model.init_mean, t, grid.states[:, :-1], grid.delta)

    def cov(self, theta1, theta2, grid):
        d = grid.dimension
        return ou_variance(theta1, theta2, grid.delta) * np.eye(d)


@dataclass(frozen=True)
class EulerProxyMoments:
    """First-order proxies ``m = x + delta b(x, mu^N_{t_k})`` and ``V = delta a a^T``."""

    model: ModelSpec

    def mean(self, theta1, theta2, grid):
        X = grid.states[:, :-1]
        out = np.empty_like(X)
        for k in range(grid.n_steps):
            out[:, k] = X[:, k] + grid.delta * self.model.drift(theta1, X[:, k], grid.snapshot(k))
        return out

    def cov(self, theta1, theta2, grid):
        a = self.model.diffusion(theta2, grid.states[:, :-1])
        return grid.delta * np.einsum("...pr,...qr->...pq", a, a)


def default_moments(model: ModelSpec) -> MomentProvider:
    return OracleMoments(model) if isinstance(model, MeanFieldOU) else EulerProxyMoments(model)


def z_field(model: ModelSpec, theta: ThetaPair, t: float, x, mu: MeasureSnapshot,
            tangent: TangentMeasure) -> np.ndarray:
    """``d_theta1 b(x, mu) + mean_j grad_y lfd_b(x, y_j, mu) v_j``.

    ``t`` is informational; the time dependence enters through ``mu`` and the
    tangent velocities.
    """
    if tangent.base.size != mu.size or tangent.base.dimension != mu.dimension:
        raise DomainError("tangent measure is not aligned with mu")
    if tangent.base.points is not mu.points and not np.array_equal(tangent.base.points, mu.points):
        raise DomainError("tangent measure is based on different points than mu")
    x = np.asarray(x, dtype=float)
    out = np.asarray(model.d_drift_dtheta1(theta.theta1, x, mu), dtype=float)
    if model.depends_on_measure:
        out = out + model.interaction_tangent(theta.theta1, x, mu, tangent.velocities)
    return out


def z_on_grid(model: ModelSpec, theta1: float, grid: TrajectoryGrid,
              tangents: TangentCloud | None = None) -> np.ndarray:
    """z-field at every ``(i, t_k)``, ``k < n``; shape ``(N, n, d)``.

    The OU oracle uses its closed-form mean flow; other models need global
    tangents (``restart_step == 0``).
    """
    X = grid.states[:, :-1]
    if isinstance(model, MeanFieldOU):
        return ou_z_field(theta1, model.kappa, model.init_mean, grid.times[:-1][None, :, None], X)
    if tangents is None:
        raise DomainError("z-field off the oracle needs tangents from simulate_with_tangents")
    if not tangents.aligned_with(grid):
        raise DomainError("tangents are not aligned with the grid")
    if tangents.restart_step != 0:
        raise DomainError("z-field needs global tangents, not restarted ones")
    theta = ThetaPair(theta1, 1.0, (min(theta1, -1.0) - 1.0, max(theta1, 1.0) + 1.0))
    out = np.empty_like(X)
    for k in range(grid.n_steps):
        mu = EmpiricalMeasure(X[:, k])
        out[:, k] = z_field(model, theta, grid.times[k], X[:, k], mu, TangentMeasure(mu, tangents.d_theta1[:, k]))
    return out


def _inv_sq(model: ModelSpec, theta2: float, X: np.ndarray) -> np.ndarray:
    """``a^{-2}`` at every state, as ``(..., d, d)``."""
    d = X.shape[-1]
    if model.scalar_diffusion:
        s = model.diffusion_scale(theta2, X)
        return (1.0 / s**2)[..., None, None] * np.eye(d)
    a = model.diffusion(theta2, X)
    return np.linalg.inv(a @ a)


def _gauss_legendre(order: int):
    if order < 1:
        raise DomainError("quadrature_order must be >= 1")
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def zeta_hat_drift(grid: TrajectoryGrid, tangents: TangentCloud | None, pert: LocalPerturbation,
                   model: ModelSpec, quadrature_order: int = 5, moments: MomentProvider | None = None,
                   centered: bool = False, next_states: np.ndarray | None = None) -> np.ndarray:
    """Per-(i, k) drift scores, shape ``(N, n)``.

    ``(u/sqrt N) int_0^1 z^{theta1(l), theta2+}' a^{-2}_{theta2+} (X_{k+1} - m^{theta1(l), theta2+}) dl``
    with Gauss-Legendre nodes in ``l``. ``centered=True`` replaces the
    conditional mean by the one at ``theta0``, which makes every entry
    conditionally centred. ``next_states`` overrides ``X_{k+1}`` (used by
    the inner Monte Carlo of :func:`clt_condition_sums`).
    """
    N, n = grid.n_particles, grid.n_steps
    if pert.u == 0:
        return np.zeros((N, n) if next_states is None else np.shape(next_states)[:-1])
    moments = moments or default_moments(model)
    Y = grid.states[:, 1:] if next_states is None else next_states
    t2p = pert.theta2_at(1.0)
    ainv2 = _inv_sq(model, t2p, grid.states[:, :-1])
    nodes, weights = _gauss_legendre(quadrature_order)
    m_fixed = moments.mean(pert.theta0.theta1, t2p, grid) if centered else None
    acc = np.zeros(Y.shape[:-1])
    for l, w in zip(nodes, weights):
        t1l = pert.theta1_at(l)
        z = z_on_grid(model, t1l, grid, tangents)
        m = m_fixed if centered else moments.mean(t1l, t2p, grid)
        acc += w * np.einsum("...p,...pq,...q->...", z, ainv2, Y - m)
    return pert.step1 * acc


def zeta_hat_diff(grid: TrajectoryGrid, pert: LocalPerturbation, model: ModelSpec,
                  quadrature_order: int = 5, moments: MomentProvider | None = None,
                  centered: bool = False, next_states: np.ndarray | None = None) -> np.ndarray:
    """Per-(i, k) diffusion scores, shape ``(N, n)``.

    ``(v/sqrt(N delta)) int_0^1 tr[da a^{-1} ((X_{k+1} - m)(X_{k+1} - m)' - V) a^{-2}] dl``
    with ``a``, ``m``, ``V`` at ``(theta1_0, theta2(l))``. ``centered=True``
    evaluates ``m`` and ``V`` at ``theta0``.
    """
    N, n = grid.n_particles, grid.n_steps
    if pert.v == 0:
        return np.zeros((N, n) if next_states is None else np.shape(next_states)[:-1])
    moments = moments or default_moments(model)
    X = grid.states[:, :-1]
    Y = grid.states[:, 1:] if next_states is None else next_states
    t1 = pert.theta0.theta1
    nodes, weights = _gauss_legendre(quadrature_order)
    if centered:
        m0 = moments.mean(t1, pert.theta0.theta2, grid)
        V0 = moments.cov(t1, pert.theta0.theta2, grid)
    acc = np.zeros(Y.shape[:-1])
    for l, w in zip(nodes, weights):
        t2l = pert.theta2_at(l)
        m = m0 if centered else moments.mean(t1, t2l, grid)
        V = V0 if centered else moments.cov(t1, t2l, grid)
        r = Y - m
        outer = r[..., :, None] * r[..., None, :] - V
        if model.scalar_diffusion:
            s = model.diffusion_scale(t2l, X)
            ds = model.d_diffusion_scale_dtheta2(t2l, X)
            acc += w * (ds / s**3) * np.trace(outer, axis1=-2, axis2=-1)
        else:
            a = model.diffusion(t2l, X)
            ainv = np.linalg.inv(a)
            A = model.d_diffusion_dtheta2(t2l, X) @ ainv
            acc += w * np.einsum("...pq,...qr,...rs,...sp->...", A, outer, ainv, ainv)
    return pert.step2 / grid.delta * acc


# ---------------------------------------------------------------------------
# exact log-likelihood ratio


def log_lr_exact(grid: TrajectoryGrid, theta0: ThetaPair, pert: LocalPerturbation, model: ModelSpec) -> float:
    """Exact ``log dP^{theta+}/dP^{theta0}`` of the observed transitions (OU oracle only)."""
    if not isinstance(model, MeanFieldOU):
        raise UnsupportedModelError(f"exact log-likelihood ratio needs the OU oracle, got {model.model_id}")
    tp = pert.theta_plus
    X, Y = grid.states[:, :-1], grid.states[:, 1:]
    t = grid.times[:-1][None, :]
    kw = dict(kappa=model.kappa, m0=model.init_mean, t=t, x=X, y=Y, dt=grid.delta)
    diff = ou_logpdf(tp.theta1, tp.theta2, **kw) - ou_logpdf(theta0.theta1, theta0.theta2, **kw)
    return float(np.sum(diff))


# ---------------------------------------------------------------------------
# score breakdown and CLT diagnostics


@dataclass
class ScoreBreakdown:
    zeta_drift: np.ndarray
    zeta_diff: np.ndarray
    quad_b: float
    quad_a: float

    @property
    def s_b(self) -> float:
        return float(np.sum(self.zeta_drift))

    @property
    def s_a(self) -> float:
        return float(np.sum(self.zeta_diff))

    @property
    def total(self) -> float:
        return self.s_b + self.s_a

    @property
    def lan_form(self) -> float:
        """``S_b + S_a - (u^2 Sigma_b + v^2 Sigma_a) / 2`` with plug-in Sigma."""
        return self.total - 0.5 * (self.quad_b + self.quad_a)


def plug_in_fisher(grid: TrajectoryGrid, model: ModelSpec, theta: ThetaPair,
                   tangents: TangentCloud | None = None) -> tuple[float, float]:
    """Riemann-sum ``(Sigma_b, Sigma_a)`` on the observed grid (left end points)."""
    z = z_on_grid(model, theta.theta1, grid, tangents)
    X = grid.states[:, :-1]
    ainv2 = _inv_sq(model, theta.theta2, X)
    sb = grid.delta / grid.n_particles * float(np.sum(np.einsum("...p,...pq,...q->...", z, ainv2, z)))
    if model.scalar_diffusion:
        ratio = model.d_diffusion_scale_dtheta2(theta.theta2, X) / model.diffusion_scale(theta.theta2, X)
        tr = X.shape[-1] * ratio**2
    else:
        A = model.d_diffusion_dtheta2(theta.theta2, X) @ np.linalg.inv(model.diffusion(theta.theta2, X))
        tr = np.einsum("...pq,...qp->...", A, A)
    sa = 2.0 * grid.delta / grid.n_particles * float(np.sum(tr))
    return sb, sa


def score_breakdown(grid: TrajectoryGrid, tangents: TangentCloud | None, pert: LocalPerturbation,
                    model: ModelSpec, quadrature_order: int = 5, moments: MomentProvider | None = None,
                    centered: bool = False) -> ScoreBreakdown:
    zd = zeta_hat_drift(grid, tangents, pert, model, quadrature_order, moments, centered)
    za = zeta_hat_diff(grid, pert, model, quadrature_order, moments, centered)
    sb, sa = plug_in_fisher(grid, model, pert.theta0, tangents)
    return ScoreBreakdown(zd, za, pert.u**2 * sb, pert.v**2 * sa)


@dataclass
class CltSums:
    values: np.ndarray
    se: np.ndarray
    targets: np.ndarray
    n_inner: int

    def within(self, n_se: float = 4.0) -> np.ndarray:
        tol = n_se * self.se
        return np.abs(self.values - self.targets) <= np.where(tol > 0, tol, 1e-12)

    def to_dict(self) -> dict:
        return {"names": list(CLT_NAMES), "values": self.values.tolist(), "se": self.se.tolist(),
                "targets": self.targets.tolist(), "n_inner": self.n_inner}


def _sample_next_states(model: MeanFieldOU, theta: ThetaPair, grid: TrajectoryGrid, k: int,
                        n_inner: int, seed: int) -> np.ndarray:
    """``n_inner`` joint draws of ``X_{t_{k+1}}`` given the observed ``X_{t_k}``; ``(n_inner, N, d)``."""
    N, d = grid.n_particles, grid.dimension
    mean = ou_mean(theta.theta1, model.kappa, model.init_mean, grid.times[k], grid.states[:, k], grid.delta)
    sd = math.sqrt(ou_variance(theta.theta1, theta.theta2, grid.delta))
    noise = NoiseStream(seed, STREAM_INNER)
    # counter: particle index runs over (draw, particle) pairs, step is k
    idx = np.arange(n_inner * N, dtype=np.uint64).reshape(n_inner, N)
    return mean[None] + sd * noise.normals(idx, k, d)


def clt_condition_sums(grid: TrajectoryGrid, pert: LocalPerturbation, model: ModelSpec, n_inner: int,
                       seed: int, sigma: tuple[float, float] | None = None,
                       quadrature_order: int = 5) -> CltSums:
    """Monte Carlo estimates of the seven conditional sums behind the martingale CLT.

    For every ``k`` the observed ``X_{t_k}`` is held fixed and ``n_inner``
    joint draws of ``X_{t_{k+1}}`` are taken from the exact ``theta0``
    transition. With ``S1 = sum_i zeta_hat_drift`` and ``S2 = sum_i zeta_hat_diff``
    the sums over ``k`` of ``E S1``, ``Var S1``, ``E S1^4``, ``E S2``,
    ``Var S2``, ``E S2^4`` and ``Cov(S1, S2)`` are returned with their Monte
    Carlo standard errors and their limits
    ``(-u^2 Sb/2, u^2 Sb, 0, -v^2 Sa/2, v^2 Sa, 0, 0)``.
    """
    if not isinstance(model, MeanFieldOU):
        raise UnsupportedModelError("CLT sums need exact conditional sampling (OU oracle)")
    if n_inner < 2:
        raise DomainError("n_inner must be >= 2")
    theta0 = pert.theta0
    if sigma is None:
        sigma = ou_fisher_exact(theta0, model.kappa, model.init_mean, model.init_std, grid.horizon, grid.dimension)
    sb, sa = sigma
    u2, v2 = pert.u**2, pert.v**2
    targets = np.array([-0.5 * u2 * sb, u2 * sb, 0.0, -0.5 * v2 * sa, v2 * sa, 0.0, 0.0])
    vals = np.zeros(7)
    var = np.zeros(7)
    if pert.u == 0 and pert.v == 0:
        return CltSums(vals, var, targets, n_inner)

    moments = OracleMoments(model)
    for k in range(grid.n_steps):
        sub = TrajectoryGrid(grid.states[:, k:k + 2], grid.delta)
        # shift the clock: the sub-grid starts at t_k
        sub_model_grid = _ShiftedGrid(sub, grid.times[k])
        Ynext = _sample_next_states(model, theta0, grid, k, n_inner, derive_seed(seed, k))
        nxt = Ynext[:, :, None, :]                       # (n_inner, N, 1, d)
        s1 = zeta_hat_drift(sub_model_grid, None, pert, model, quadrature_order, moments,
                            next_states=nxt).sum(axis=1)[:, 0]
        s2 = zeta_hat_diff(sub_model_grid, pert, model, quadrature_order, moments,
                           next_states=nxt).sum(axis=1)[:, 0]
        for j, (est, v_) in enumerate(_moment_estimates(s1, s2)):
            vals[j] += est
            var[j] += v_
    return CltSums(vals, np.sqrt(var), targets, n_inner)


def _moment_estimates(s1: np.ndarray, s2: np.ndarray):
    """Seven per-step estimates with their sampling variances."""
    n = s1.size
    out = []
    for s in (s1, s2):
        c = s - s.mean()
        out.append((s.mean(), s.var(ddof=1) / n))
        out.append((s.var(ddof=1), np.var(c * c, ddof=1) / n))
        out.append((np.mean(s**4), np.var(s**4, ddof=1) / n))
    c1, c2 = s1 - s1.mean(), s2 - s2.mean()
    prod = c1 * c2
    out.append((prod.sum() / (n - 1), np.var(prod, ddof=1) / n))
    return out


class _ShiftedGrid(TrajectoryGrid):
    """A one-transition grid whose clock starts at ``t0`` instead of 0."""

    def __init__(self, base: TrajectoryGrid, t0: float):
        self.states = base.states
        self.horizon = base.horizon
        self.provenance = {}
        self._t0 = t0

    @property
    def times(self) -> np.ndarray:
        return self._t0 + super().times


# ---------------------------------------------------------------------------
# harness


@dataclass
class LanReport:
    config: dict[str, Any]
    u: float
    v: float
    sigma_b: float
    sigma_a: float
    z_values: np.ndarray
    expansion_values: np.ndarray | None = None
    lan_form_values: np.ndarray | None = None
    seeds: list[int] = field(default_factory=list)
    branch: str = "exact"
    clt: CltSums | None = None

    @property
    def n_replications(self) -> int:
        return int(self.z_values.size)

    @property
    def sigma2_target(self) -> float:
        return self.u**2 * self.sigma_b + self.v**2 * self.sigma_a

    @property
    def mean(self) -> float:
        return float(np.mean(self.z_values)) if self.n_replications else math.nan

    @property
    def var(self) -> float:
        return float(np.var(self.z_values, ddof=1)) if self.n_replications > 1 else math.nan

    @property
    def se_mean(self) -> float:
        return math.sqrt(self.var / self.n_replications) if self.n_replications > 1 else math.nan

    @property
    def ks(self) -> tuple[float, float]:
        return ks_normal(self.z_values, -0.5 * self.sigma2_target, self.sigma2_target)

    @property
    def gaps(self) -> np.ndarray | None:
        if self.expansion_values is None or self.branch != "both":
            return None
        return np.abs(self.z_values - self.expansion_values)

    def to_dict(self) -> dict:
        ks_stat, ks_p = self.ks
        out = {
            "config": self.config,
            "branch": self.branch,
            "u": self.u,
            "v": self.v,
            "n_replications": self.n_replications,
            "z_values": self.z_values.tolist(),
            "mean": self.mean,
            "var": self.var,
            "se_mean": self.se_mean,
            "sigma_b": self.sigma_b,
            "sigma_a": self.sigma_a,
            "sigma2_target": self.sigma2_target,
            "mean_target": -0.5 * self.sigma2_target,
            "ks_stat": ks_stat,
            "ks_pvalue": ks_p,
            "clt_sums": self.clt.values.tolist() if self.clt else [math.nan] * 7,
            "clt_se": self.clt.se.tolist() if self.clt else [math.nan] * 7,
            "clt_targets": self.clt.targets.tolist() if self.clt else
            [-0.5 * self.u**2 * self.sigma_b, self.u**2 * self.sigma_b, 0.0,
             -0.5 * self.v**2 * self.sigma_a, self.v**2 * self.sigma_a, 0.0, 0.0],
        }
        gaps = self.gaps
        if gaps is not None:
            out["expansion_gap_median"] = float(np.median(gaps)) if gaps.size else math.nan
        return out

    def to_json(self) -> str:
        return json.dumps(_finite_or_none(self.to_dict()), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replication", "seed", "z", "expansion", "lan_form", "gap"])
        exp = self.expansion_values
        lan = self.lan_form_values
        gaps = self.gaps
        for r in range(self.n_replications):
            w.writerow([r, self.seeds[r] if self.seeds else "", repr(float(self.z_values[r])),
                        "" if exp is None else repr(float(exp[r])),
                        "" if lan is None else repr(float(lan[r])),
                        "" if gaps is None else repr(float(gaps[r]))])
        return buf.getvalue()


def _finite_or_none(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_none(v) for v in obj]
    return obj


def ks_normal(values, mean: float, var: float) -> tuple[float, float]:
    """One-sample KS test against ``N(mean, var)`` (asymptotic Kolmogorov p-value).

    ``var == 0`` is the degenerate point-mass case: an exact match gives
    ``(0, 1)``, anything else ``(1, 0)``.
    """
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    if var <= 0:
        return (0.0, 1.0) if np.all(x == mean) else (1.0, 0.0)
    res = stats.kstest(x, stats.norm(loc=mean, scale=math.sqrt(var)).cdf, method="asymp")
    return float(res.statistic), float(res.pvalue)


def target_fisher(cfg: SimConfig, pilot_seed: int = 0) -> tuple[float, float]:
    """``(Sigma_b, Sigma_a)`` for the harness targets.

    Exact on the OU oracle; otherwise a plug-in quadrature on one pilot run
    with tangents (labelled as such by the caller).
    """
    model = cfg.model
    if isinstance(model, MeanFieldOU):
        return ou_fisher_exact(cfg.theta, model.kappa, model.init_mean, model.init_std, cfg.horizon,
                               model.dimension)
    from .inference import fisher_quadrature

    pilot = cfg.replace(seed=derive_seed(pilot_seed, 2**31), scheme="euler")
    grid, tan = simulate_with_tangents(pilot)
    info = fisher_quadrature(grid, tan, model, cfg.theta)
    return info.sigma_b, info.sigma_a


def _one_replication(cfg: SimConfig, u: float, v: float, branch: str, quadrature_order: int):
    model = cfg.model
    needs_tangents = branch != "exact" and not isinstance(model, MeanFieldOU)
    if needs_tangents:
        grid, tan = simulate_with_tangents(cfg)
    else:
        grid, tan = simulate_particles(cfg), None
    pert = LocalPerturbation.for_grid(cfg.theta, u, v, grid)
    z = log_lr_exact(grid, cfg.theta, pert, model) if branch != "expansion" else math.nan
    if branch == "exact":
        return z, math.nan, math.nan
    br = score_breakdown(grid, tan, pert, model, quadrature_order)
    return z, br.total, br.lan_form


def lan_harness(cfg: SimConfig, pert: LocalPerturbation | tuple[float, float], n_replications: int,
                seed: int, branch: str = "exact", threads: int = 1, quadrature_order: int = 5,
                clt_inner: int = 0, sigma: tuple[float, float] | None = None) -> LanReport:
    """Replicate data at ``theta0`` and collect the log-likelihood ratio statistics.

    ``branch`` is ``"exact"`` (oracle z only), ``"expansion"`` (sum of
    zeta_hat only, any model) or ``"both"``. Replication ``r`` uses seed
    ``derive_seed(seed, r)``; results do not depend on ``threads``.
    ``clt_inner > 0`` additionally estimates the CLT condition sums on the
    first replication's grid.
    """
    if n_replications < 0:
        raise DomainError("n_replications must be >= 0")
    if branch not in ("exact", "expansion", "both"):
        raise DomainError(f"unknown branch {branch!r}")
    if branch != "expansion" and not isinstance(cfg.model, MeanFieldOU):
        raise UnsupportedModelError("the exact branch needs the OU oracle; use branch='expansion'")
    if isinstance(pert, LocalPerturbation):
        u, v = pert.u, pert.v
    else:
        u, v = map(float, pert)
    # validate the box once, up front
    LocalPerturbation(cfg.theta, u, v, cfg.n_particles, cfg.delta)
    sb, sa = sigma if sigma is not None else target_fisher(cfg, seed)

    seeds = [derive_seed(seed, r) for r in range(n_replications)]
    jobs = [cfg.replace(seed=s) for s in seeds]

    def work(c):
        return _one_replication(c, u, v, branch, quadrature_order)

    if threads > 1 and n_replications > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(c) for c in jobs]
    res = np.array(results, dtype=float).reshape(-1, 3)
    z = res[:, 0] if branch != "expansion" else res[:, 1]
    report = LanReport(config=cfg.describe(), u=u, v=v, sigma_b=sb, sigma_a=sa, z_values=z,
                       expansion_values=None if branch == "exact" else res[:, 1],
                       lan_form_values=None if branch == "exact" else res[:, 2],
                       seeds=seeds, branch=branch)
    if clt_inner and n_replications:
        grid = simulate_particles(jobs[0])
        p = LocalPerturbation.for_grid(cfg.theta, u, v, grid)
        report.clt = clt_condition_sums(grid, p, cfg.model, clt_inner, derive_seed(seed, 2**32), (sb, sa),
                                        quadrature_order)
    return report


@dataclass
class CenteringResult:
    """Per-step Monte Carlo means of the scores given ``X_{t_k}``, with standard errors."""

    mean_drift: np.ndarray
    se_drift: np.ndarray
    mean_diff: np.ndarray
    se_diff: np.ndarray
    n_draws: int

    def max_abs_z(self) -> float:
        zs = []
        for m, s in ((self.mean_drift, self.se_drift), (self.mean_diff, self.se_diff)):
            ok = s > 0
            zs.append(np.abs(m[ok] / s[ok]))
            if np.any(~ok & (m != 0)):
                return math.inf
        return float(max((z.max() for z in zs if z.size), default=0.0))


def centering_check(grid: TrajectoryGrid, pert: LocalPerturbation, model: MeanFieldOU, n_draws: int,
                    seed: int, centered: bool = True, quadrature_order: int = 5) -> CenteringResult:
    """Conditional means of the per-particle scores at every step, by exact resampling.

    The observed ``X_{t_k}`` are held fixed and ``n_draws`` next states are
    drawn from the ``theta0`` transition. With ``centered=True`` the scores
    use the ``theta0`` conditional moments and have conditional mean zero by
    construction; ``centered=False`` exposes the ``O(delta)`` drift of the
    uncentred scores. Entries are averaged over particles before the
    standard error is taken.
    """
    if not isinstance(model, MeanFieldOU):
        raise UnsupportedModelError("centering check needs exact conditional sampling (OU oracle)")
    n = grid.n_steps
    out = np.zeros((4, n))
    moments = OracleMoments(model)
    for k in range(n):
        sub = _ShiftedGrid(TrajectoryGrid(grid.states[:, k:k + 2], grid.delta), grid.times[k])
        nxt = _sample_next_states(model, pert.theta0, grid, k, n_draws, derive_seed(seed, k))[:, :, None, :]
        zd = zeta_hat_drift(sub, None, pert, model, quadrature_order, moments, centered, nxt).mean(axis=1)[:, 0]
        za = zeta_hat_diff(sub, pert, model, quadrature_order, moments, centered, nxt).mean(axis=1)[:, 0]
        out[:, k] = zd.mean(), zd.std(ddof=1) / math.sqrt(n_draws), za.mean(), za.std(ddof=1) / math.sqrt(n_draws)
    return CenteringResult(out[0], out[1], out[2], out[3], n_draws)
