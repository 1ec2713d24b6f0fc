"""Euler-Maruyama engine for interacting particle systems and their parameter tangents.

Particles are advanced on a fine grid of ``n * substeps`` steps; every
``substeps``-th state is stored. The interaction uses the equal-weight
empirical measure of the driving cloud frozen at the start of each fine step.
The driving cloud is either the observed particles themselves or, in two-stage
mode, a larger independent "law cloud" that stands in for the limit law.

Tangents ``d X / d theta1`` and ``d X / d theta2`` are the exact derivatives of
the Euler recursion. The measure term is evaluated with the particle chain
rule ``mean_j grad_y lfd(x, X^j) . dX^j``.
"""

from __future__ import annotations

import io
import math
import struct
import warnings
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from . import __version__
from .errors import DomainError, PropagationError
from .model import MeanFieldOU, MeasureSnapshot, ModelSpec, ThetaPair
from .rng import (STREAM_EULER, STREAM_EXACT, STREAM_INIT, STREAM_LAW_EULER, STREAM_LAW_INIT,
                  NoiseStream)

SCHEMES = ("euler", "exact")
BINARY_MAGIC = b"MKVG"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sIQQQd")


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines a simulated data set.

    ``scheme="exact"`` samples the mean-field OU transition law directly (an
    i.i.d. array of limit-law particles); it is only available for
    :class:`~mkvlan.model.MeanFieldOU`. ``law_cloud_factor >= 10`` switches on
    the two-stage mode with a driving cloud of ``law_cloud_factor * N``
    particles.
    """

    n_particles: int
    n_steps: int
    horizon: float
    model: ModelSpec
    theta: ThetaPair
    seed: int = 0
    substeps: int = 8
    scheme: str = "euler"
    law_cloud_factor: int = 0
    allow_degenerate: bool = False
    particle_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        if int(self.n_particles) < 1:
            raise DomainError("n_particles must be >= 1")
        if int(self.n_steps) < 1:
            raise DomainError("n_steps must be >= 1")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise DomainError("horizon must be positive and finite")
        if int(self.substeps) < 1:
            raise DomainError("substeps must be >= 1")
        if self.scheme not in SCHEMES:
            raise DomainError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.scheme == "exact" and not isinstance(self.model, MeanFieldOU):
            raise DomainError("the exact scheme exists only for mean_field_ou")
        if self.law_cloud_factor and self.law_cloud_factor < 10:
            raise DomainError("law_cloud_factor must be 0 (off) or >= 10")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")
        if self.particle_ids is not None:
            ids = tuple(int(i) for i in self.particle_ids)
            if len(ids) != self.n_particles or len(set(ids)) != len(ids) or min(ids) < 0:
                raise DomainError("particle_ids must be n_particles distinct non-negative integers")
            object.__setattr__(self, "particle_ids", ids)
        lo, _ = self.model.ellipticity_bounds(self.theta.theta2)
        if lo <= 0 and not self.allow_degenerate:
            raise DomainError("degenerate diffusion; set allow_degenerate=True (tests only)")

    @property
    def delta(self) -> float:
        return self.horizon / self.n_steps

    @property
    def fine_step(self) -> float:
        return self.horizon / (self.n_steps * self.substeps)

    @property
    def ids(self) -> np.ndarray:
        if self.particle_ids is None:
            return np.arange(self.n_particles, dtype=np.uint64)
        return np.asarray(self.particle_ids, dtype=np.uint64)

    def replace(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def describe(self) -> dict[str, Any]:
        return {
            "model_id": self.model.model_id,
            "model_params": self.model.hyperparameters(),
            "theta1": self.theta.theta1,
            "theta2": self.theta.theta2,
            "n_particles": self.n_particles,
            "n_steps": self.n_steps,
            "horizon": self.horizon,
            "substeps": self.substeps,
            "scheme": self.scheme,
            "law_cloud_factor": self.law_cloud_factor,
            "seed": self.seed,
        }


def observation_times(n_steps: int, horizon: float) -> np.ndarray:
    # k * T / n for every k, never cumulative addition
    return np.arange(n_steps + 1) * horizon / n_steps


@dataclass(eq=False)
class TrajectoryGrid:
    """Observed states ``[N, n+1, d]`` at times ``k T / n``."""

    states: np.ndarray
    horizon: float
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        if s.ndim == 2:
            s = s[:, :, None]
        if s.ndim != 3 or s.shape[1] < 2:
            raise DomainError(f"states must have shape (N, n+1, d) with n >= 1, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise DomainError("states must be finite")
        self.states = s

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def dimension(self) -> int:
        return self.states.shape[2]

    @property
    def delta(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return observation_times(self.n_steps, self.horizon)

    def snapshot(self, k: int) -> MeasureSnapshot:
        return MeasureSnapshot(self.states[:, k, :])

    def increments(self) -> np.ndarray:
        return np.diff(self.states, axis=1)

    # -- serialisation -------------------------------------------------

    def to_csv(self) -> str:
        """CSV with columns ``particle, k, t, x_1..x_d``; floats in round-trip ``repr`` form."""
        N, n1, d = self.states.shape
        buf = io.StringIO()
        buf.write(",".join(["particle", "k", "t"] + [f"x_{r + 1}" for r in range(d)]) + "\n")
        times = self.times
        for i in range(N):
            for k in range(n1):
                vals = [repr(float(times[k]))] + [repr(float(v)) for v in self.states[i, k]]
                buf.write(f"{i},{k}," + ",".join(vals) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, horizon: float | None = None) -> "TrajectoryGrid":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = lines[0].split(",")
        d = len(header) - 3
        rows = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]])
        N = int(rows[:, 0].max()) + 1
        n1 = int(rows[:, 1].max()) + 1
        states = np.empty((N, n1, d))
        states[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 3:]
        T = float(rows[rows[:, 1] == n1 - 1, 2][0]) if horizon is None else horizon
        return cls(states, T)

    def to_bytes(self) -> bytes:
        N, n1, d = self.states.shape
        head = _HEADER.pack(BINARY_MAGIC, BINARY_VERSION, N, n1 - 1, d, float(self.horizon))
        return head + np.ascontiguousarray(self.states, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TrajectoryGrid":
        if len(blob) < _HEADER.size:
            raise DomainError("truncated trajectory block")
        magic, version, N, n, d, T = _HEADER.unpack_from(blob)
        if magic != BINARY_MAGIC:
            raise DomainError(f"bad magic {magic!r}")
        if version != BINARY_VERSION:
            raise DomainError(f"unsupported version {version}")
        body = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
        if body.size != N * (n + 1) * d:
            raise DomainError("trajectory block length does not match its header")
        return cls(body.reshape(N, n + 1, d).astype(float), T)


@dataclass(eq=False)
class TangentCloud:
    """Parameter tangents aligned with a :class:`TrajectoryGrid`.

    ``restart_step = 0`` means global tangents started at time 0. Otherwise
    the particle's own tangent restarts from zero at that observation step,
    while the measure term keeps the global tangents (the law derivative does
    not restart). Rows before the restart are zero.
    """

    d_theta1: np.ndarray
    d_theta2: np.ndarray
    config: SimConfig
    restart_step: int = 0

    def __post_init__(self):
        if self.d_theta1.shape != self.d_theta2.shape:
            raise DomainError("tangent blocks differ in shape")
        if not (np.all(np.isfinite(self.d_theta1)) and np.all(np.isfinite(self.d_theta2))):
            raise DomainError("tangents must be finite")

    @property
    def shape(self):
        return self.d_theta1.shape

    def aligned_with(self, grid: TrajectoryGrid) -> bool:
        return self.d_theta1.shape == grid.states.shape


# ---------------------------------------------------------------------------
# stepping


def euler_step(x, mu: MeasureSnapshot, theta: ThetaPair, dt: float, noise, model: ModelSpec,
               particle: int = 0, time: float = math.nan) -> np.ndarray:
    """One Euler-Maruyama step ``x + b dt + a sqrt(dt) noise``; batched over leading axes."""
    if dt <= 0:
        raise DomainError("dt must be positive")
    x = np.asarray(x, dtype=float)
    noise = np.asarray(noise, dtype=float)
    a = model.diffusion(theta.theta2, x)
    out = x + dt * np.asarray(model.drift(theta.theta1, x, mu)) + math.sqrt(dt) * np.einsum("...pq,...q->...p", a, noise)
    _check_finite(out, time, particle)
    return out


def _check_finite(x: np.ndarray, time: float, offset: int = 0, ids=None):
    if np.all(np.isfinite(x)):
        return
    bad = ~np.isfinite(x)
    if x.ndim > 1:
        bad = bad.reshape(x.shape[0], -1).any(axis=1)
        i = int(np.argmax(bad))
        particle = int(ids[i]) if ids is not None else offset + i
    else:
        particle = offset
    raise PropagationError(particle, time)


def _diffuse(model: ModelSpec, theta2: float, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    if model.scalar_diffusion:
        return model.diffusion_scale(theta2, x)[:, None] * xi
    return np.einsum("npq,nq->np", model.diffusion(theta2, x), xi)


def _tangent_step(model: ModelSpec, theta: ThetaPair, x, mu, own, measure_tangent, xi, dt, block: int):
    """Advance one tangent block by the derivative of the Euler map."""
    t1, t2 = theta.theta1, theta.theta2
    drift = np.einsum("npq,nq->np", model.grad_x_drift(t1, x, mu), own)
    if model.depends_on_measure:
        drift = drift + model.interaction_tangent(t1, x, mu, measure_tangent)
    if block == 1:
        drift = drift + model.d_drift_dtheta1(t1, x, mu)
    noise = np.zeros_like(own)
    for r in range(x.shape[1]):
        col = model.grad_x_diffusion_col(t2, x, r)
        noise += np.einsum("npq,nq->np", col, own) * xi[:, r:r + 1]
    if block == 2:
        noise += np.einsum("npq,nq->np", model.d_diffusion_dtheta2(t2, x), xi)
    return own + dt * drift + math.sqrt(dt) * noise


def _provenance(cfg: SimConfig, notes: list[str]) -> dict[str, Any]:
    return {"artifact_version": __version__, "config": cfg.describe(), "warnings": list(notes)}


def _warn_single(cfg: SimConfig) -> list[str]:
    notes = []
    if cfg.n_particles < 2 and cfg.model.depends_on_measure and not cfg.law_cloud_factor and cfg.scheme == "euler":
        msg = "N < 2 with a measure-dependent model: the empirical measure is the particle itself"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        notes.append(msg)
    return notes


def _simulate_exact(cfg: SimConfig) -> np.ndarray:
    from .oracle import ou_mean, ou_variance

    model: MeanFieldOU = cfg.model  # type: ignore[assignment]
    t1, t2 = cfg.theta.theta1, cfg.theta.theta2
    N, n, d = cfg.n_particles, cfg.n_steps, model.dimension
    ids = cfg.ids
    times = observation_times(n, cfg.horizon)
    dt = cfg.delta
    sd = math.sqrt(ou_variance(t1, t2, dt))
    states = np.empty((N, n + 1, d))
    states[:, 0] = model.initial_law(NoiseStream(cfg.seed, STREAM_INIT).normals(ids, 0, d))
    noise = NoiseStream(cfg.seed, STREAM_EXACT)
    for k in range(n):
        xi = noise.normals(ids, k, d)
        states[:, k + 1] = ou_mean(t1, model.kappa, model.init_mean, times[k], states[:, k], dt) + sd * xi
    _check_finite(states, cfg.horizon, ids=ids)
    return states


def _run(cfg: SimConfig, tangents: bool, restart_step: int = 0):
    model, theta = cfg.model, cfg.theta
    t1, t2 = theta.theta1, theta.theta2
    N, n, m, d = cfg.n_particles, cfg.n_steps, cfg.substeps, model.dimension
    h = cfg.fine_step
    sq = math.sqrt(h)
    ids = cfg.ids

    X = np.asarray(model.initial_law(NoiseStream(cfg.seed, STREAM_INIT).normals(ids, 0, d)), dtype=float)
    noise = NoiseStream(cfg.seed, STREAM_EULER)
    law = cfg.law_cloud_factor > 0
    if law:
        n_law = cfg.law_cloud_factor * N
        law_ids = np.arange(n_law, dtype=np.uint64)
        Y = np.asarray(model.initial_law(NoiseStream(cfg.seed, STREAM_LAW_INIT).normals(law_ids, 0, d)))
        law_noise = NoiseStream(cfg.seed, STREAM_LAW_EULER)

    states = np.empty((N, n + 1, d))
    states[:, 0] = X
    if tangents:
        G1, G2 = np.zeros_like(X), np.zeros_like(X)          # global tangents, observed particles
        if law:
            H1, H2 = np.zeros_like(Y), np.zeros_like(Y)      # global tangents, law cloud
        R1 = R2 = None                                       # restarted tangents
        out1 = np.zeros((N, n + 1, d))
        out2 = np.zeros((N, n + 1, d))

    for k in range(n):
        if tangents and restart_step and k == restart_step:
            R1, R2 = np.zeros_like(X), np.zeros_like(X)
        for s in range(m):
            j = k * m + s
            t_now = j * h
            mu = MeasureSnapshot(Y if law else X)
            xi = noise.normals(ids, j, d)
            if law:
                zeta = law_noise.normals(law_ids, j, d)
            if tangents:
                P1, P2 = (H1, H2) if law else (G1, G2)
                nG1 = _tangent_step(model, theta, X, mu, G1, P1, xi, h, 1)
                nG2 = _tangent_step(model, theta, X, mu, G2, P2, xi, h, 2)
                if R1 is not None:
                    R1 = _tangent_step(model, theta, X, mu, R1, P1, xi, h, 1)
                    R2 = _tangent_step(model, theta, X, mu, R2, P2, xi, h, 2)
                if law:
                    nH1 = _tangent_step(model, theta, Y, mu, H1, H1, zeta, h, 1)
                    nH2 = _tangent_step(model, theta, Y, mu, H2, H2, zeta, h, 2)
                    H1, H2 = nH1, nH2
                G1, G2 = nG1, nG2
            X = X + h * model.drift(t1, X, mu) + sq * _diffuse(model, t2, X, xi)
            _check_finite(X, t_now + h, ids=ids)
            if law:
                Y = Y + h * model.drift(t1, Y, mu) + sq * _diffuse(model, t2, Y, zeta)
                _check_finite(Y, t_now + h, offset=0)
        states[:, k + 1] = X
        if tangents:
            if restart_step:
                if R1 is not None:
                    out1[:, k + 1], out2[:, k + 1] = R1, R2
            else:
                out1[:, k + 1], out2[:, k + 1] = G1, G2
    if not tangents:
        return states, None
    _check_finite(out1, cfg.horizon, ids=ids)
    _check_finite(out2, cfg.horizon, ids=ids)
    return states, (out1, out2)


def simulate_particles(cfg: SimConfig) -> TrajectoryGrid:
    """Simulate the particle system and return the observed grid. Deterministic in ``cfg.seed``."""
    notes = _warn_single(cfg)
    if cfg.scheme == "exact":
        states = _simulate_exact(cfg)
    else:
        states, _ = _run(cfg, tangents=False)
    return TrajectoryGrid(states, cfg.horizon, _provenance(cfg, notes))


def simulate_with_tangents(cfg: SimConfig) -> tuple[TrajectoryGrid, TangentCloud]:
    """Joint Euler evolution of the particles and their global ``theta1``/``theta2`` tangents.

    Uses exactly the noise of :func:`simulate_particles` under the same seed,
    so the returned grid is bit-identical to it.
    """
    if cfg.scheme != "euler":
        raise DomainError("tangents are defined for the Euler scheme only")
    notes = _warn_single(cfg)
    states, (d1, d2) = _run(cfg, tangents=True)
    return TrajectoryGrid(states, cfg.horizon, _provenance(cfg, notes)), TangentCloud(d1, d2, cfg)


def restart_tangents(cloud: TangentCloud, at_step: int) -> TangentCloud:
    """Tangents re-zeroed at observation step ``at_step``.

    The particle's own tangent starts from zero at ``t_k``; the measure term
    still uses the global tangents. The fine path is recomputed from the
    counter-based noise, so the result is exact rather than a difference of
    stored values.
    """
    n = cloud.shape[1] - 1
    if not 0 <= at_step <= n:
        raise DomainError(f"at_step {at_step} outside 0..{n}")
    if at_step == 0:
        return TangentCloud(cloud.d_theta1.copy(), cloud.d_theta2.copy(), cloud.config, 0)
    if at_step == n:
        z = np.zeros(cloud.shape)
        return TangentCloud(z, z.copy(), cloud.config, at_step)
    _, (d1, d2) = _run(cloud.config, tangents=True, restart_step=at_step)
    return TangentCloud(d1, d2, cloud.config, at_step)
