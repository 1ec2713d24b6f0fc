"""McKean-Vlasov model interface and the two built-in models.

All callbacks are vectorised over a leading batch axis: ``x`` has shape
``(..., d)``; vectors come back as ``(..., d)`` and matrices as
``(..., d, d)``. Measures are weighted point clouds (:class:`MeasureSnapshot`).
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np

from .errors import DomainError, ModelStructureError


@dataclass(frozen=True)
class ThetaPair:
    """Joint parameter (drift ``theta1``, diffusion ``theta2``) inside a compact box."""

    theta1: float
    theta2: float
    box1: tuple[float, float] = (-10.0, 10.0)
    box2: tuple[float, float] = (1e-3, 10.0)

    def __post_init__(self):
        for name, (lo, hi) in (("box1", self.box1), ("box2", self.box2)):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise DomainError(f"{name} must be a bounded interval with lo < hi, got {(lo, hi)}")
        object.__setattr__(self, "box1", (float(self.box1[0]), float(self.box1[1])))
        object.__setattr__(self, "box2", (float(self.box2[0]), float(self.box2[1])))
        if not self.box1[0] <= self.theta1 <= self.box1[1]:
            raise DomainError(f"theta1={self.theta1} outside {self.box1}")
        if not self.box2[0] <= self.theta2 <= self.box2[1]:
            raise DomainError(f"theta2={self.theta2} outside {self.box2}")

    def replace(self, theta1: float | None = None, theta2: float | None = None) -> "ThetaPair":
        return ThetaPair(
            self.theta1 if theta1 is None else float(theta1),
            self.theta2 if theta2 is None else float(theta2),
            self.box1,
            self.box2,
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2])

    def contains(self, theta1: float, theta2: float) -> bool:
        return self.box1[0] <= theta1 <= self.box1[1] and self.box2[0] <= theta2 <= self.box2[1]


@dataclass(frozen=True, eq=False)
class MeasureSnapshot:
    """Weighted point cloud standing in for a probability measure on R^d."""

    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise DomainError(f"points must have shape (M, d), got {pts.shape}")
        m = pts.shape[0]
        if self.weights is None:
            w = np.full(m, 1.0 / m) if m else np.zeros(0)
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (m,):
                raise DomainError(f"weights shape {w.shape} does not match {m} points")
            if np.any(w < 0):
                raise DomainError("weights must be non-negative")
            if m and abs(w.sum() - 1.0) > 1e-12:
                raise DomainError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def dirac(cls, point) -> "MeasureSnapshot":
        return cls(np.atleast_1d(np.asarray(point, dtype=float))[None, :])

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @cached_property
    def mean(self) -> np.ndarray:
        return mean_of(self)


def mean_of(mu: MeasureSnapshot) -> np.ndarray:
    """Weighted first moment of a snapshot."""
    if mu.size == 0:
        raise DomainError("mean of an empty measure is undefined")
    return mu.weights @ mu.points


class ModelSpec(abc.ABC):
    """Drift/diffusion pair of a McKean-Vlasov SDE plus the derivatives the
    score and tangent machinery needs.

    Subclasses must be stateless after construction; every method is a pure
    function of its arguments.
    """

    model_id: str = "abstract"
    dimension: int = 1
    #: drift is ``theta1 * g(x, mu)``; enables the profiled estimator
    drift_linear_in_theta1: bool = False
    #: drift touches ``mu`` only through its mean
    mean_field_only: bool = False
    #: diffusion is ``s(theta2, x) * I``
    scalar_diffusion: bool = False
    #: known violation of bounded drift; usable only as an exact reference
    oracle_only: bool = False
    depends_on_measure: bool = True

    @abc.abstractmethod
    def drift(self, theta1: float, x: np.ndarray, mu: MeasureSnapshot) -> np.ndarray: ...

    @abc.abstractmethod
    def diffusion(self, theta2: float, x: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def d_drift_dtheta1(self, theta1: float, x: np.ndarray, mu: MeasureSnapshot) -> np.ndarray: ...

    @abc.abstractmethod
    def d_diffusion_dtheta2(self, theta2: float, x: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def grad_x_drift(self, theta1: float, x: np.ndarray, mu: MeasureSnapshot) -> np.ndarray:
        """Jacobian ``J[..., p, q] = d b_p / d x_q``."""

    @abc.abstractmethod
    def grad_x_diffusion_col(self, theta2: float, x: np.ndarray, r: int) -> np.ndarray:
        """Jacobian of column ``r`` of the diffusion matrix with respect to ``x``."""

    @abc.abstractmethod
    def lfd_drift(self, theta1: float, x: np.ndarray, y: np.ndarray, mu: MeasureSnapshot) -> np.ndarray:
        """Linear functional derivative of ``mu -> b(x, mu)`` evaluated at ``y``."""

    @abc.abstractmethod
    def grad_y_lfd_drift(self, theta1: float, x: np.ndarray, y: np.ndarray, mu: MeasureSnapshot) -> np.ndarray: ...

    @abc.abstractmethod
    def initial_law(self, normals: np.ndarray) -> np.ndarray:
        """Map standard normal vectors ``(..., d)`` to draws from ``mu_0``."""

    @abc.abstractmethod
    def ellipticity_bounds(self, theta2: float) -> tuple[float, float]:
        """Declared lower/upper bounds on the eigenvalues of the diffusion matrix."""

    def lipschitz_constants(self, theta: ThetaPair) -> tuple[float, float]:
        """Declared Lipschitz constants (drift in (x, W2), diffusion in x)."""
        return math.inf, math.inf

    def drift_bound(self, theta1: float) -> float:
        return math.inf

    def hyperparameters(self) -> dict[str, Any]:
        return {}

    def diffusion_scale(self, theta2: float, x: np.ndarray) -> np.ndarray:
        """Scalar ``s`` with ``a = s I``; only meaningful when ``scalar_diffusion``."""
        raise NotImplementedError

    def d_diffusion_scale_dtheta2(self, theta2: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def drift_feature(self, x: np.ndarray, mu: MeasureSnapshot) -> np.ndarray:
        """``g`` with ``b = theta1 * g``; only meaningful when ``drift_linear_in_theta1``."""
        raise NotImplementedError

    def interaction_tangent(
        self, theta1: float, x: np.ndarray, mu: MeasureSnapshot, velocities: np.ndarray
    ) -> np.ndarray:
        """Particle chain rule ``sum_j w_j grad_y lfd(x, y_j, mu) v_j`` for each row of ``x``.

        Generic O(len(x) * len(mu)) implementation; models with more
        structure override it.
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(velocities, dtype=float)
        out = np.zeros_like(x)
        for j in range(mu.size):
            y = np.broadcast_to(mu.points[j], x.shape)
            jac = self.grad_y_lfd_drift(theta1, x, y, mu)
            out += mu.weights[j] * np.einsum("...pq,q->...p", jac, v[j])
        return out

    def __repr__(self) -> str:
        params = ", ".join(f"{k}={v!r}" for k, v in self.hyperparameters().items())
        return f"{type(self).__name__}({params})"


def _eye(x: np.ndarray, d: int) -> np.ndarray:
    return np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy()


@dataclass(repr=False)
class MeanFieldOU(ModelSpec):
    """Linear mean-field Ornstein-Uhlenbeck model.

    ``b(x, mu) = theta1 (kappa <mu> - x)`` and ``a(x) = theta2 I``, with
    ``mu_0 = N(init_mean, init_std^2 I)``. Its drift is unbounded, so it is
    kept as an exactly solvable reference (``oracle_only``).
    """

    kappa: float = 0.0
    init_mean: float = 0.0
    init_std: float = 1.0
    dimension: int = 1

    model_id = "mean_field_ou"
    drift_linear_in_theta1 = True
    mean_field_only = True
    scalar_diffusion = True
    oracle_only = True
    metadata = {"oracle_only": True, "note": "oracle-only, unbounded drift"}

    def __post_init__(self):
        if self.dimension < 1:
            raise DomainError("dimension must be positive")
        if self.init_std < 0:
            raise DomainError("init_std must be non-negative")

    @property
    def depends_on_measure(self) -> bool:  # type: ignore[override]
        return self.kappa != 0.0

    def hyperparameters(self):
        return {"kappa": self.kappa, "init_mean": self.init_mean, "init_std": self.init_std,
                "dimension": self.dimension}

    def drift_feature(self, x, mu):
        return self.kappa * mu.mean - np.asarray(x, dtype=float)

    def drift(self, theta1, x, mu):
        return theta1 * self.drift_feature(x, mu)

    def d_drift_dtheta1(self, theta1, x, mu):
        return self.drift_feature(x, mu)

    def grad_x_drift(self, theta1, x, mu):
        x = np.asarray(x, dtype=float)
        return -theta1 * _eye(x, self.dimension)

    def diffusion(self, theta2, x):
        x = np.asarray(x, dtype=float)
        return theta2 * _eye(x, self.dimension)

    def diffusion_scale(self, theta2, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], float(theta2))

    def d_diffusion_scale_dtheta2(self, theta2, x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1])

    def d_diffusion_dtheta2(self, theta2, x):
        return _eye(np.asarray(x, dtype=float), self.dimension)

    def grad_x_diffusion_col(self, theta2, x, r):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.dimension, self.dimension))

    def lfd_drift(self, theta1, x, y, mu):
        y = np.asarray(y, dtype=float)
        return theta1 * self.kappa * np.broadcast_to(y, np.broadcast_shapes(np.shape(x), y.shape)).copy()

    def grad_y_lfd_drift(self, theta1, x, y, mu):
        shape = np.broadcast_shapes(np.shape(x), np.shape(y))
        return theta1 * self.kappa * _eye(np.empty(shape), self.dimension)

    def interaction_tangent(self, theta1, x, mu, velocities):
        v = np.asarray(velocities, dtype=float)
        avg = mu.weights @ v
        return np.broadcast_to(theta1 * self.kappa * avg, np.shape(x)).copy()

    def initial_law(self, normals):
        return self.init_mean + self.init_std * np.asarray(normals, dtype=float)

    def ellipticity_bounds(self, theta2):
        return float(theta2), float(theta2)

    def lipschitz_constants(self, theta):
        return abs(theta.theta1) * max(1.0, abs(self.kappa)), 0.0

    @staticmethod
    def stationary_std(theta1: float, theta2: float) -> float:
        """Standard deviation of the invariant law when ``kappa = 0``."""
        return theta2 / math.sqrt(2.0 * theta1)


@dataclass(repr=False)
class TanhInteraction(ModelSpec):
    """Bounded nonlinear interaction model.

    ``b(x, mu) = theta1 tanh(kappa <mu> - x)`` componentwise and
    ``a(x) = theta2 (1 + eps cos(x_1) / 2) I`` with ``0 <= eps < 1``.
    """

    kappa: float = 1.0
    eps: float = 0.5
    init_mean: float = 0.0
    init_std: float = 1.0
    dimension: int = 1

    model_id = "tanh_interaction"
    drift_linear_in_theta1 = True
    mean_field_only = True
    scalar_diffusion = True

    def __post_init__(self):
        if not 0.0 <= self.eps < 1.0:
            raise DomainError(f"eps must lie in [0, 1), got {self.eps}")
        if self.dimension < 1:
            raise DomainError("dimension must be positive")

    @property
    def depends_on_measure(self) -> bool:  # type: ignore[override]
        return self.kappa != 0.0

    def hyperparameters(self):
        return {"kappa": self.kappa, "eps": self.eps, "init_mean": self.init_mean,
                "init_std": self.init_std, "dimension": self.dimension}

    def _arg(self, x, mu):
        return self.kappa * mu.mean - np.asarray(x, dtype=float)

    def drift_feature(self, x, mu):
        return np.tanh(self._arg(x, mu))

    def drift(self, theta1, x, mu):
        return theta1 * self.drift_feature(x, mu)

    def d_drift_dtheta1(self, theta1, x, mu):
        return self.drift_feature(x, mu)

    def grad_x_drift(self, theta1, x, mu):
        sech2 = 1.0 / np.cosh(self._arg(x, mu)) ** 2
        return -theta1 * sech2[..., :, None] * np.eye(self.dimension)

    def diffusion_scale(self, theta2, x):
        x = np.asarray(x, dtype=float)
        return theta2 * (1.0 + 0.5 * self.eps * np.cos(x[..., 0]))

    def d_diffusion_scale_dtheta2(self, theta2, x):
        x = np.asarray(x, dtype=float)
        return 1.0 + 0.5 * self.eps * np.cos(x[..., 0])

    def diffusion(self, theta2, x):
        return self.diffusion_scale(theta2, x)[..., None, None] * np.eye(self.dimension)

    def d_diffusion_dtheta2(self, theta2, x):
        return self.d_diffusion_scale_dtheta2(theta2, x)[..., None, None] * np.eye(self.dimension)

    def grad_x_diffusion_col(self, theta2, x, r):
        x = np.asarray(x, dtype=float)
        d = self.dimension
        out = np.zeros(x.shape[:-1] + (d, d))
        # column r is s(x) e_r and s depends on x_1 only
        out[..., r, 0] = -0.5 * theta2 * self.eps * np.sin(x[..., 0])
        return out

    def lfd_drift(self, theta1, x, y, mu):
        sech2 = 1.0 / np.cosh(self._arg(x, mu)) ** 2
        return theta1 * self.kappa * sech2 * np.asarray(y, dtype=float)

    def grad_y_lfd_drift(self, theta1, x, y, mu):
        sech2 = 1.0 / np.cosh(self._arg(x, mu)) ** 2
        shape = np.broadcast_shapes(sech2.shape, np.shape(y))
        return theta1 * self.kappa * np.broadcast_to(sech2, shape)[..., :, None] * np.eye(self.dimension)

    def interaction_tangent(self, theta1, x, mu, velocities):
        sech2 = 1.0 / np.cosh(self._arg(x, mu)) ** 2
        avg = mu.weights @ np.asarray(velocities, dtype=float)
        return theta1 * self.kappa * sech2 * avg

    def initial_law(self, normals):
        return self.init_mean + self.init_std * np.asarray(normals, dtype=float)

    def ellipticity_bounds(self, theta2):
        return theta2 * (1.0 - 0.5 * self.eps), theta2 * (1.0 + 0.5 * self.eps)

    def lipschitz_constants(self, theta):
        return abs(theta.theta1) * max(1.0, abs(self.kappa)), abs(theta.theta2) * 0.5 * self.eps

    def drift_bound(self, theta1):
        return abs(theta1)


MODEL_REGISTRY: dict[str, type[ModelSpec]] = {
    MeanFieldOU.model_id: MeanFieldOU,
    TanhInteraction.model_id: TanhInteraction,
}


def build_model(model_id: str, **params) -> ModelSpec:
    """Instantiate a built-in model from its string id and hyperparameters."""
    try:
        cls = MODEL_REGISTRY[model_id]
    except KeyError:
        raise DomainError(f"unknown model id {model_id!r}; known: {sorted(MODEL_REGISTRY)}") from None
    return cls(**params)


# ---------------------------------------------------------------------------
# runtime assumption checks


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    bound: float | None = None
    note: str = ""
    observed_range: tuple[float, float] | None = None
    #: informational checks are reported but do not fail the model
    required: bool = True


@dataclass
class ValidationReport:
    model: str
    probes: int
    seed: int
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.required)

    def get(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "probes": self.probes,
            "seed": self.seed,
            "passed": self.passed,
            "checks": [vars(c).copy() for c in self.checks],
        }


FD_REL_STEP = 1e-5
FD_TOL = 1e-4


def _expect_shape(name: str, value, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.asarray(value)
    if arr.shape != shape:
        raise ModelStructureError(name, f"returned shape {arr.shape}, expected {shape}")
    if not np.issubdtype(arr.dtype, np.number):
        raise ModelStructureError(name, f"returned non-numeric dtype {arr.dtype}")
    return arr.astype(float)


def _central(f, x0: float) -> float | np.ndarray:
    h = FD_REL_STEP * max(1.0, abs(x0))
    return (f(x0 + h) - f(x0 - h)) / (2.0 * h)


def _rel_err(fd, exact) -> float:
    fd, exact = np.asarray(fd, float), np.asarray(exact, float)
    return float(np.max(np.abs(fd - exact)) / max(1.0, float(np.max(np.abs(exact)))))


def _w2_1d_or_mean_bound(mu: MeasureSnapshot, nu: MeasureSnapshot) -> float:
    from .measure import EmpiricalMeasure, wasserstein_1d, wasserstein_sliced

    a, b = EmpiricalMeasure.from_snapshot(mu), EmpiricalMeasure.from_snapshot(nu)
    if mu.dimension == 1:
        return wasserstein_1d(a, b, 2.0)
    # the sliced distance never exceeds W2, so the quotient is conservative
    return wasserstein_sliced(a, b, 2.0, n_directions=64, seed=0)


def validate_model(model: ModelSpec, theta: ThetaPair, probes: int = 100, seed: int = 0,
                   cloud_size: int = 8, sample_theta: bool = False) -> ValidationReport:
    """Spot-check the structural and regularity assumptions of ``model`` by sampling.

    Probes draw states from ``N(0, 4 I)`` and random equal-weight clouds of
    ``cloud_size`` points; ``theta`` is held fixed unless ``sample_theta``, in
    which case it is drawn uniformly from the box. Derivatives are
    compared to central differences at relative step 1e-5 (tolerance 1e-4).
    """
    if probes < 1:
        raise DomainError("probes must be >= 1")
    rng = np.random.default_rng(seed)
    d = int(model.dimension)
    report = ValidationReport(model=repr(model), probes=probes, seed=seed)

    worst = {k: 0.0 for k in ("d_drift_dtheta1", "d_diffusion_dtheta2", "grad_x_drift",
                             "grad_x_diffusion_col", "grad_y_lfd_drift", "lfd_consistency",
                             "lipschitz_drift", "lipschitz_diffusion", "drift_sup")}
    eig_lo, eig_hi = math.inf, -math.inf
    ell_ok = True

    for _ in range(probes):
        if sample_theta:
            t1, t2 = rng.uniform(*theta.box1), rng.uniform(*theta.box2)
        else:
            t1, t2 = theta.theta1, theta.theta2
        x = rng.normal(0.0, 2.0, size=d)
        x2 = rng.normal(0.0, 2.0, size=d)
        y = rng.normal(0.0, 2.0, size=d)
        mu = MeasureSnapshot(rng.normal(rng.normal(), 1.5, size=(cloud_size, d)))
        nu = MeasureSnapshot(rng.normal(rng.normal(), 1.5, size=(cloud_size, d)))

        b = _expect_shape("drift", model.drift(t1, x, mu), (d,))
        a = _expect_shape("diffusion", model.diffusion(t2, x), (d, d))
        db1 = _expect_shape("d_drift_dtheta1", model.d_drift_dtheta1(t1, x, mu), (d,))
        da2 = _expect_shape("d_diffusion_dtheta2", model.d_diffusion_dtheta2(t2, x), (d, d))
        gxb = _expect_shape("grad_x_drift", model.grad_x_drift(t1, x, mu), (d, d))
        lfd = _expect_shape("lfd_drift", model.lfd_drift(t1, x, y, mu), (d,))
        gyl = _expect_shape("grad_y_lfd_drift", model.grad_y_lfd_drift(t1, x, y, mu), (d, d))
        cols = [_expect_shape("grad_x_diffusion_col", model.grad_x_diffusion_col(t2, x, r), (d, d))
                for r in range(d)]
        del lfd

        # ellipticity
        if not np.allclose(a, a.T, atol=1e-12):
            ell_ok = False
        ev = np.linalg.eigvalsh(0.5 * (a + a.T))
        eig_lo, eig_hi = min(eig_lo, ev.min()), max(eig_hi, ev.max())
        lo, hi = model.ellipticity_bounds(t2)
        if ev.min() < lo * (1 - 1e-12) or ev.max() > hi * (1 + 1e-12) or ev.min() <= 0:
            ell_ok = False

        # parameter derivatives
        worst["d_drift_dtheta1"] = max(worst["d_drift_dtheta1"],
                                       _rel_err(_central(lambda s: model.drift(s, x, mu), t1), db1))
        worst["d_diffusion_dtheta2"] = max(worst["d_diffusion_dtheta2"],
                                           _rel_err(_central(lambda s: model.diffusion(s, x), t2), da2))
        # spatial derivatives
        for q in range(d):
            def shift(s, q=q):
                z = x.copy()
                z[q] = s
                return z
            fd_b = _central(lambda s: model.drift(t1, shift(s), mu), x[q])
            worst["grad_x_drift"] = max(worst["grad_x_drift"], _rel_err(fd_b, gxb[:, q]))
            fd_a = _central(lambda s: model.diffusion(t2, shift(s)), x[q])
            for r in range(d):
                worst["grad_x_diffusion_col"] = max(worst["grad_x_diffusion_col"],
                                                    _rel_err(fd_a[:, r], cols[r][:, q]))

            def yshift(s, q=q):
                z = y.copy()
                z[q] = s
                return z
            fd_l = _central(lambda s: model.lfd_drift(t1, x, yshift(s), mu), y[q])
            worst["grad_y_lfd_drift"] = max(worst["grad_y_lfd_drift"], _rel_err(fd_l, gyl[:, q]))

        # linear functional derivative: b(mu) - b(nu) = int_0^1 int lfd(y, l mu + (1-l) nu)(mu - nu)(dy) dl
        nodes, wts = np.polynomial.legendre.leggauss(16)
        lam = 0.5 * (nodes + 1.0)
        integral = np.zeros(d)
        for lk, wk in zip(lam, wts):
            mix = MeasureSnapshot(np.vstack([mu.points, nu.points]),
                                  np.concatenate([lk * mu.weights, (1 - lk) * nu.weights]))
            f_mu = mu.weights @ np.asarray(model.lfd_drift(t1, np.broadcast_to(x, mu.points.shape),
                                                           mu.points, mix))
            f_nu = nu.weights @ np.asarray(model.lfd_drift(t1, np.broadcast_to(x, nu.points.shape),
                                                           nu.points, mix))
            integral += 0.5 * wk * (f_mu - f_nu)
        direct = np.asarray(model.drift(t1, x, mu)) - np.asarray(model.drift(t1, x, nu))
        worst["lfd_consistency"] = max(worst["lfd_consistency"], _rel_err(integral, direct))

        # Lipschitz quotients
        w2 = _w2_1d_or_mean_bound(mu, nu)
        num = np.linalg.norm(np.asarray(model.drift(t1, x, mu)) - np.asarray(model.drift(t1, x2, nu)))
        den = np.linalg.norm(x - x2) + w2
        lb, la = model.lipschitz_constants(ThetaPair(t1, t2, theta.box1, theta.box2))
        if den > 0:
            worst["lipschitz_drift"] = max(worst["lipschitz_drift"], num / den / max(lb, 1e-300))
        num_a = np.linalg.norm(a - np.asarray(model.diffusion(t2, x2)), 2)
        dx = np.linalg.norm(x - x2)
        if dx > 0 and num_a > 0:
            worst["lipschitz_diffusion"] = max(worst["lipschitz_diffusion"],
                                               num_a / dx / max(la, 1e-300))
        worst["drift_sup"] = max(worst["drift_sup"], float(np.max(np.abs(b))) / max(model.drift_bound(t1), 1e-300))

    for name in ("d_drift_dtheta1", "d_diffusion_dtheta2", "grad_x_drift", "grad_x_diffusion_col",
                 "grad_y_lfd_drift"):
        report.checks.append(CheckResult(name, worst[name] < FD_TOL, worst[name], FD_TOL,
                                         "central difference, relative step 1e-5"))
    report.checks.append(CheckResult("lfd_consistency", worst["lfd_consistency"] < FD_TOL,
                                     worst["lfd_consistency"], FD_TOL, "16-point Gauss-Legendre in lambda"))
    report.checks.append(CheckResult("ellipticity", ell_ok, float(eig_lo), None,
                                     "eigenvalues inside the declared bounds",
                                     (float(eig_lo), float(eig_hi))))
    report.checks.append(CheckResult("lipschitz_drift", worst["lipschitz_drift"] <= 1.0 + 1e-9,
                                     worst["lipschitz_drift"], 1.0, "quotient / declared constant"))
    report.checks.append(CheckResult("lipschitz_diffusion", worst["lipschitz_diffusion"] <= 1.0 + 1e-9,
                                     worst["lipschitz_diffusion"], 1.0, "quotient / declared constant"))
    bounded = math.isfinite(model.drift_bound(theta.theta1))
    report.checks.append(CheckResult(
        "bounded_drift", bounded and worst["drift_sup"] <= 1.0 + 1e-12,
        worst["drift_sup"] if bounded else math.inf, 1.0,
        "sup |b| / declared bound" if bounded else "oracle-only, unbounded drift",
        required=not model.oracle_only))
    return report
