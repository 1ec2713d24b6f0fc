"""Fisher information by quadrature, the Gaussian quasi-likelihood contrast and rate studies.

The contrast is the Euler Gaussian quasi-likelihood

    C(theta) = sum_{k,i} (dX - delta b)' (delta a a')^{-1} (dX - delta b) + log det(a a')

with ``b``, ``a`` evaluated at ``(theta, X^i_{t_k}, mu^N_{t_k})``. When the
drift is ``theta1 * g(x, mu)`` and the diffusion is scalar, the
``theta1``-section is a parabola and is profiled out in closed form.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import optimize

from .errors import DomainError, NonFiniteContrastError
from .lan import _inv_sq, z_on_grid
from .model import MeanFieldOU, ModelSpec, ThetaPair
from .oracle import ou_fisher_exact
from .rng import derive_seed
from .simulate import SimConfig, TangentCloud, TrajectoryGrid, simulate_particles

MAX_ITER = 500
XATOL = 1e-8


@dataclass
class FisherInfo:
    """Block-diagonal Fisher information ``diag(Sigma_b, Sigma_a)``."""

    sigma_b: float
    sigma_a: float
    se_b: float = 0.0
    se_a: float = 0.0
    n_particles: int = 0
    n_steps: int = 0
    method: str = "quadrature"

    def __post_init__(self):
        if self.sigma_b < 0 or self.sigma_a < 0:
            raise DomainError("Fisher blocks must be non-negative")

    @property
    def matrix(self) -> np.ndarray:
        return np.diag([self.sigma_b, self.sigma_a])

    def to_dict(self) -> dict:
        return {"sigma_b": self.sigma_b, "sigma_a": self.sigma_a, "se_b": self.se_b, "se_a": self.se_a,
                "n_particles": self.n_particles, "n_steps": self.n_steps, "method": self.method}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jackknife_mean(per_particle: np.ndarray) -> tuple[float, float]:
    n = per_particle.size
    est = float(np.mean(per_particle))
    if n < 2:
        return est, math.nan
    loo = (np.sum(per_particle) - per_particle) / (n - 1)
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return est, se


def fisher_quadrature(grid: TrajectoryGrid, tangents: TangentCloud | None, model: ModelSpec,
                      theta0: ThetaPair) -> FisherInfo:
    """Particle-time Riemann sums for ``Sigma_b`` and ``Sigma_a`` with jackknife standard errors.

    ``Sigma_b = (delta/N) sum z' a^{-2} z`` and
    ``Sigma_a = (2 delta/N) sum tr(da a^{-1} da a^{-1})`` over left end points.
    The z-field uses global tangents; the OU oracle may pass ``tangents=None``
    and use its closed-form mean flow instead.
    """
    if tangents is not None and not tangents.aligned_with(grid):
        raise DomainError("tangents are not aligned with the grid")
    X = grid.states[:, :-1]
    n = grid.n_steps
    z = z_on_grid(model, theta0.theta1, grid, tangents)
    qb = np.einsum("...p,...pq,...q->...", z, _inv_sq(model, theta0.theta2, X), z)
    if model.scalar_diffusion:
        ratio = model.d_diffusion_scale_dtheta2(theta0.theta2, X) / model.diffusion_scale(theta0.theta2, X)
        qa = X.shape[-1] * ratio**2
    else:
        A = model.d_diffusion_dtheta2(theta0.theta2, X) @ np.linalg.inv(model.diffusion(theta0.theta2, X))
        qa = np.einsum("...pq,...qp->...", A, A)
    # T * sum / n keeps constant integrands exact
    cb = grid.horizon * np.sum(qb, axis=1) / n
    ca = 2.0 * grid.horizon * np.sum(qa, axis=1) / n
    sb, se_b = _jackknife_mean(cb)
    sa, se_a = _jackknife_mean(ca)
    return FisherInfo(max(sb, 0.0), max(sa, 0.0), se_b, se_a, grid.n_particles, n)


def fisher_exact(model: ModelSpec, theta: ThetaPair, horizon: float) -> FisherInfo:
    """Closed-form blocks on the OU oracle."""
    if not isinstance(model, MeanFieldOU):
        raise DomainError("closed-form Fisher information exists only for mean_field_ou")
    sb, sa = ou_fisher_exact(theta, model.kappa, model.init_mean, model.init_std, horizon, model.dimension)
    return FisherInfo(sb, sa, method="exact")


def riemann_sum(grid: TrajectoryGrid, f) -> float:
    """``(delta / N) sum_{k<n} sum_i f(X^i_{t_k})`` for a vectorised ``f: (..., d) -> (...)``."""
    vals = np.asarray(f(grid.states[:, :-1]), dtype=float)
    return float(grid.horizon * np.sum(vals) / (grid.n_steps * grid.n_particles))


# ---------------------------------------------------------------------------
# contrast


class ContrastData:
    """Per-grid caches for repeated contrast evaluations."""

    def __init__(self, grid: TrajectoryGrid, model: ModelSpec):
        self.grid = grid
        self.model = model
        self.dX = grid.increments()
        self.X = grid.states[:, :-1]
        self.snapshots = [grid.snapshot(k) for k in range(grid.n_steps)]
        self.fast = model.drift_linear_in_theta1 and model.scalar_diffusion
        if self.fast:
            self.g = np.stack([model.drift_feature(self.X[:, k], self.snapshots[k])
                               for k in range(grid.n_steps)], axis=1)
            # s(theta2, x) = theta2 * h(x) for both built-ins; probe that once
            self.h = model.diffusion_scale(1.0, self.X)
            probe = model.diffusion_scale(2.0, self.X)
            self.homogeneous = bool(np.allclose(probe, 2.0 * self.h, rtol=1e-14, atol=0))

    def scale(self, theta2: float) -> np.ndarray:
        if self.homogeneous:
            return theta2 * self.h
        return self.model.diffusion_scale(theta2, self.X)

    def value(self, theta1: float, theta2: float) -> float:
        delta = self.grid.delta
        d = self.grid.dimension
        if self.fast:
            s2 = self.scale(theta2) ** 2
            r = self.dX - delta * theta1 * self.g
            out = np.sum(np.sum(r * r, axis=-1) / (delta * s2)) + d * np.sum(np.log(s2))
        else:
            total = 0.0
            for k in range(self.grid.n_steps):
                x = self.X[:, k]
                b = self.model.drift(theta1, x, self.snapshots[k])
                a = self.model.diffusion(theta2, x)
                S = a @ np.swapaxes(a, -1, -2)
                r = self.dX[:, k] - delta * b
                sol = np.linalg.solve(S, r[..., None])[..., 0]
                _, logdet = np.linalg.slogdet(S)
                total += np.sum(np.sum(r * sol, axis=-1) / delta + logdet)
            out = total
        out = float(out)
        if not math.isfinite(out):
            raise NonFiniteContrastError((theta1, theta2), out)
        return out

    def profile_theta1(self, theta2: float, box1: tuple[float, float]) -> float:
        """Exact minimiser of the parabolic ``theta1``-section, clipped to the box."""
        s2 = self.scale(theta2)[..., None] ** 2
        num = np.sum(self.g * self.dX / s2)
        den = self.grid.delta * np.sum(self.g * self.g / s2)
        if den <= 0:
            return float(np.clip(0.0, *box1))
        return float(np.clip(num / den, *box1))


def contrast(grid: TrajectoryGrid, theta: ThetaPair, model: ModelSpec) -> float:
    """Euler Gaussian quasi-likelihood contrast at ``theta``."""
    return ContrastData(grid, model).value(theta.theta1, theta.theta2)


@dataclass
class EstimateResult:
    theta_hat: ThetaPair
    contrast: float
    iterations: int
    converged: bool
    profiled: bool
    message: str = ""
    ci: dict[str, tuple[float, float]] | None = None

    def to_dict(self) -> dict:
        return {"theta1": self.theta_hat.theta1, "theta2": self.theta_hat.theta2,
                "contrast": self.contrast, "iterations": self.iterations, "converged": self.converged,
                "profiled": self.profiled, "message": self.message,
                "ci": {k: list(v) for k, v in self.ci.items()} if self.ci else None}


@dataclass(frozen=True)
class EstimateOptions:
    max_iter: int = MAX_ITER
    xatol: float = XATOL
    profile: bool = True
    fisher: FisherInfo | None = None  # attaches 95% intervals when given
    level_z: float = 1.959963984540054


def _nelder_mead(fun, x0, bounds, opts: EstimateOptions):
    # scipy's bounded Nelder-Mead projects trial points onto the box; fatol=inf makes
    # the simplex diameter the only stopping rule
    return optimize.minimize(fun, np.asarray(x0, dtype=float), method="Nelder-Mead", bounds=bounds,
                             options={"xatol": opts.xatol, "fatol": math.inf, "maxiter": opts.max_iter,
                                      "maxfev": 10 * opts.max_iter})


def estimate(grid: TrajectoryGrid, model: ModelSpec, init: ThetaPair,
             opts: EstimateOptions | None = None) -> EstimateResult:
    """Minimise the contrast over the parameter box of ``init``.

    With a drift linear in ``theta1`` and scalar diffusion, ``theta1`` is
    profiled out exactly and Nelder-Mead runs over ``theta2`` alone;
    otherwise a two-dimensional Nelder-Mead is used. Convergence means
    simplex diameter below ``xatol`` within ``max_iter`` iterations.
    """
    opts = opts or EstimateOptions()
    data = ContrastData(grid, model)
    box1, box2 = init.box1, init.box2
    if data.fast and opts.profile:
        def prof(t2):
            t2 = float(np.clip(t2[0], *box2))
            return data.value(data.profile_theta1(t2, box1), t2)

        res = _nelder_mead(prof, [init.theta2], [box2], opts)
        t2 = float(np.clip(res.x[0], *box2))
        t1 = data.profile_theta1(t2, box1)
        profiled = True
    else:
        def full(p):
            return data.value(float(np.clip(p[0], *box1)), float(np.clip(p[1], *box2)))

        res = _nelder_mead(full, [init.theta1, init.theta2], [box1, box2], opts)
        t1, t2 = (float(np.clip(res.x[0], *box1)), float(np.clip(res.x[1], *box2)))
        profiled = False
    theta_hat = init.replace(t1, t2)
    value = data.value(t1, t2)
    ci = None
    if opts.fisher is not None and opts.fisher.sigma_b > 0 and opts.fisher.sigma_a > 0:
        N, delta = grid.n_particles, grid.delta
        h1 = opts.level_z / math.sqrt(N * opts.fisher.sigma_b)
        h2 = opts.level_z * math.sqrt(delta / N) / math.sqrt(opts.fisher.sigma_a)
        ci = {"theta1": (t1 - h1, t1 + h1), "theta2": (t2 - h2, t2 + h2)}
    return EstimateResult(theta_hat, value, int(res.nit), bool(res.success), profiled, str(res.message), ci)


# ---------------------------------------------------------------------------
# rate studies


@dataclass
class RateRow:
    n_particles: int
    n_steps: int
    delta: float
    rmse_theta1: float
    rmse_theta2: float
    se_theta1: float
    se_theta2: float
    errors_theta1: list[float] = field(default_factory=list)
    errors_theta2: list[float] = field(default_factory=list)
    failures: list[int] = field(default_factory=list)


@dataclass
class RateReport:
    theta0: ThetaPair
    rows: list[RateRow]
    reps: int
    seed: int
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def slope_theta1(self) -> float:
        """Least-squares slope of log RMSE(theta1) against log N."""
        x = np.log([r.n_particles for r in self.rows])
        return float(np.polyfit(x, np.log([r.rmse_theta1 for r in self.rows]), 1)[0])

    @property
    def slope_theta2(self) -> float:
        """Least-squares slope of log RMSE(theta2) against log(N / delta)."""
        x = np.log([r.n_particles / r.delta for r in self.rows])
        return float(np.polyfit(x, np.log([r.rmse_theta2 for r in self.rows]), 1)[0])

    def to_dict(self) -> dict:
        return {
            "theta0": [self.theta0.theta1, self.theta0.theta2],
            "reps": self.reps,
            "seed": self.seed,
            "config": self.config,
            "slope_theta1": self.slope_theta1 if len(self.rows) > 1 else None,
            "slope_theta2": self.slope_theta2 if len(self.rows) > 1 else None,
            "rows": [{"N": r.n_particles, "n": r.n_steps, "delta": r.delta, "rmse_theta1": r.rmse_theta1,
                      "rmse_theta2": r.rmse_theta2, "se_theta1": r.se_theta1, "se_theta2": r.se_theta2,
                      "non_converged": r.failures} for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "n", "rmse_theta1", "rmse_theta2", "se_theta1", "se_theta2", "non_converged"])
        for r in self.rows:
            w.writerow([r.n_particles, r.n_steps, repr(r.rmse_theta1), repr(r.rmse_theta2),
                        repr(r.se_theta1), repr(r.se_theta2), len(r.failures)])
        return buf.getvalue()


def _rmse_with_se(err: np.ndarray) -> tuple[float, float]:
    sq = err * err
    rmse = math.sqrt(float(np.mean(sq)))
    if err.size < 2 or rmse == 0:
        return rmse, 0.0
    return rmse, float(np.std(sq, ddof=1) / math.sqrt(err.size) / (2.0 * rmse))


def rate_study(model: ModelSpec, theta0: ThetaPair, Ns: Sequence[int], n_of_N: Mapping[int, int],
               reps: int, seed: int, horizon: float = 1.0, substeps: int = 8, scheme: str | None = None,
               threads: int = 1, progress=None) -> RateReport:
    """RMSE of the contrast estimator across particle counts.

    For every ``N`` in ``Ns`` the data use ``n_of_N[N]`` observation steps;
    replication ``r`` of size ``N`` uses seed ``derive_seed(seed, N, r)``.
    Non-converged runs are kept in the RMSE and listed in ``failures``.
    """
    if reps < 1:
        raise DomainError("reps must be >= 1")
    if len(Ns) < 1:
        raise DomainError("need at least one N")
    if scheme is None:
        scheme = "exact" if isinstance(model, MeanFieldOU) else "euler"
    rows = []
    for N in Ns:
        n = int(n_of_N[N])
        base = SimConfig(int(N), n, horizon, model, theta0, substeps=substeps, scheme=scheme)

        def work(r, base=base, N=N):
            grid = simulate_particles(base.replace(seed=derive_seed(seed, int(N), r)))
            return estimate(grid, model, theta0)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(work, range(reps)))
        else:
            results = [work(r) for r in range(reps)]
        e1 = np.array([res.theta_hat.theta1 - theta0.theta1 for res in results])
        e2 = np.array([res.theta_hat.theta2 - theta0.theta2 for res in results])
        r1, s1 = _rmse_with_se(e1)
        r2, s2 = _rmse_with_se(e2)
        rows.append(RateRow(int(N), n, horizon / n, r1, r2, s1, s2, e1.tolist(), e2.tolist(),
                            [r for r, res in enumerate(results) if not res.converged]))
        if progress is not None:
            progress(rows[-1])
    cfg = {"model_id": model.model_id, "model_params": model.hyperparameters(), "horizon": horizon,
           "substeps": substeps, "scheme": scheme, "Ns": list(map(int, Ns)),
           "n_of_N": {str(k): int(v) for k, v in n_of_N.items()}}
    return RateReport(theta0, rows, reps, seed, cfg)
