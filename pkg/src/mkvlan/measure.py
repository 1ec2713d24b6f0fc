"""Empirical measures, Wasserstein distances and tangent-measure integrals."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import DomainError
from .model import MeasureSnapshot


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure(MeasureSnapshot):
    """A :class:`MeasureSnapshot` with a lazily built sorted view for d = 1."""

    @classmethod
    def from_snapshot(cls, mu: MeasureSnapshot) -> "EmpiricalMeasure":
        if isinstance(mu, cls):
            return mu
        return cls(mu.points, mu.weights)

    @cached_property
    def sorted_order(self) -> np.ndarray:
        if self.dimension != 1:
            raise DomainError("sorted view exists only for one-dimensional measures")
        return np.argsort(self.points[:, 0], kind="stable")

    @cached_property
    def sorted_points(self) -> np.ndarray:
        return self.points[self.sorted_order, 0]

    @cached_property
    def sorted_weights(self) -> np.ndarray:
        return self.weights[self.sorted_order]

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0])) if self.size else True

    def moment(self, order: int = 2) -> float:
        """``int ||x||^order dmu``."""
        return float(self.weights @ np.linalg.norm(self.points, axis=1) ** order)


@dataclass(frozen=True, eq=False)
class TangentMeasure:
    """Particle representation of a measure derivative: base points with velocities."""

    base: EmpiricalMeasure
    velocities: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.velocities, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape != self.base.points.shape:
            raise DomainError(f"velocities shape {v.shape} does not match base {self.base.points.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("velocities must be finite")
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "base", EmpiricalMeasure.from_snapshot(self.base))


def _check_pair(a: MeasureSnapshot, b: MeasureSnapshot):
    if a.size == 0 or b.size == 0:
        raise DomainError("Wasserstein distance of an empty measure")
    if a.dimension != b.dimension:
        raise DomainError(f"dimension mismatch {a.dimension} vs {b.dimension}")


def _quantile_cost(xa, wa, xb, wb, order: float) -> float:
    # xa, xb sorted; integrate |F_a^-1(q) - F_b^-1(q)|^p over the merged grid of cumulative weights
    ca = np.cumsum(wa)
    cb = np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    grid = np.union1d(ca, cb)
    grid = grid[grid > 0]
    widths = np.diff(np.concatenate([[0.0], grid]))
    mids = grid - 0.5 * widths
    ia = np.minimum(np.searchsorted(ca, mids, side="left"), len(xa) - 1)
    ib = np.minimum(np.searchsorted(cb, mids, side="left"), len(xb) - 1)
    return float(np.sum(widths * np.abs(xa[ia] - xb[ib]) ** order))


def wasserstein_1d(a: MeasureSnapshot, b: MeasureSnapshot, order: float = 2.0) -> float:
    """Exact ``W_order`` between one-dimensional point clouds via the monotone coupling."""
    if order < 1:
        raise DomainError("order must be >= 1")
    _check_pair(a, b)
    if a.dimension != 1:
        raise DomainError("wasserstein_1d needs d = 1; use wasserstein_sliced")
    a, b = EmpiricalMeasure.from_snapshot(a), EmpiricalMeasure.from_snapshot(b)
    if a.size == b.size and a.uniform and b.uniform:
        cost = float(np.mean(np.abs(a.sorted_points - b.sorted_points) ** order))
    else:
        cost = _quantile_cost(a.sorted_points, a.sorted_weights, b.sorted_points, b.sorted_weights, order)
    return cost ** (1.0 / order)


def random_directions(d: int, n_directions: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(n_directions, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def wasserstein_sliced(a: MeasureSnapshot, b: MeasureSnapshot, order: float = 2.0,
                       n_directions: int = 50, seed: int = 0,
                       directions: np.ndarray | None = None) -> float:
    """Average of one-dimensional ``W_order`` over unit projection directions.

    A diagnostic surrogate, not ``W_order`` itself: each projected distance is
    a lower bound on the full one, and so is the average.
    """
    _check_pair(a, b)
    if directions is None:
        if n_directions < 1:
            raise DomainError("n_directions must be >= 1")
        directions = random_directions(a.dimension, n_directions, seed)
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    if directions.shape[1] != a.dimension:
        raise DomainError("direction dimension mismatch")
    vals = [
        wasserstein_1d(MeasureSnapshot(a.points @ u, a.weights), MeasureSnapshot(b.points @ u, b.weights), order)
        for u in directions
    ]
    return float(np.mean(vals))


def integrate_tangent(tm: TangentMeasure, f_grad: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """``int f d(dmu)`` through the particle chain rule ``sum_j w_j grad f(y_j) v_j``.

    ``f_grad`` receives all base points ``(N, d)`` and returns ``(N, d)`` for a
    scalar ``f`` or ``(N, p, d)`` Jacobians for an ``R^p``-valued ``f``.
    """
    pts = tm.base.points
    g = np.asarray(f_grad(pts), dtype=float)
    if g.shape[0] != pts.shape[0]:
        raise DomainError(f"gradient batch {g.shape[0]} does not match {pts.shape[0]} points")
    if g.ndim == 2:
        per_point = np.einsum("nd,nd->n", g, tm.velocities)
    elif g.ndim == 3:
        per_point = np.einsum("npd,nd->np", g, tm.velocities)
    else:
        raise DomainError(f"gradient must have shape (N, d) or (N, p, d), got {g.shape}")
    return tm.base.weights @ per_point
