"""Shared types for constrained sampling in the unit hypercube.

Points are plain numpy arrays: a single point has shape ``(d,)`` and a
collection of points has shape ``(n, d)``.  Likelihood evaluators always
return natural-log values and accept either shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import cdist

EUCLIDEAN = "euclidean"
SUPREMUM = "supremum"
NORMS = (EUCLIDEAN, SUPREMUM)
_METRICS = {EUCLIDEAN: "euclidean", SUPREMUM: "chebyshev"}

# likelihood evaluations allowed for a single replacement draw
STALL_BUDGET = 10**6


class SamplerStalled(RuntimeError):
    """A constrained sampler could not find a point above the threshold.

    ``partial`` carries whatever result was accumulated before the stall
    (an :class:`~nsverify.integrator.NSResult` when raised from a run).
    """

    def __init__(self, message="sampler stalled", partial=None):
        super().__init__(message)
        self.partial = partial


class RngStream:
    """Seeded random stream (PCG64). Same seed, same sequence."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size=None, low=0.0, high=1.0):
        return self.gen.uniform(low, high, size)

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def integers(self, n, size=None):
        return self.gen.integers(0, n, size)


@dataclass
class EvalCounter:
    n_evaluations: int = 0

    def add(self, k: int = 1) -> None:
        if k < 0:
            raise ValueError("evaluation count cannot decrease")
        self.n_evaluations += int(k)


@dataclass(frozen=True)
class LivePoint:
    point: np.ndarray
    log_l: float

    def __post_init__(self):
        if np.isnan(self.log_l):
            raise ValueError("log-likelihood is NaN")


@dataclass
class LiveSet:
    """The N live points, stored column-wise for vectorised access."""

    u: np.ndarray
    log_l: np.ndarray

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        self.log_l = np.asarray(self.log_l, dtype=float)
        if len(self.u) != len(self.log_l):
            raise ValueError("points and log-likelihoods differ in length")

    @property
    def n_live(self) -> int:
        return len(self.log_l)

    @property
    def dim(self) -> int:
        return self.u.shape[1]

    def __len__(self):
        return self.n_live

    def __getitem__(self, i) -> LivePoint:
        return LivePoint(self.u[i].copy(), float(self.log_l[i]))


@dataclass(frozen=True)
class Problem:
    """A benchmark likelihood on the unit hypercube.

    ``contour_log_volume`` maps a log-likelihood value to the log prior
    volume above it; only problems with closed-form contours have one.
    """

    name: str
    dim: int
    log_likelihood: Callable[[np.ndarray], np.ndarray]
    true_log_z: Optional[float] = None
    contour_log_volume: Optional[Callable[[float], float]] = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be positive")

    def __call__(self, u):
        return self.log_likelihood(u)


def prior_sample(rng: RngStream, d: int, size: Optional[int] = None) -> np.ndarray:
    """Uniform draw(s) from the unit hypercube, shape ``(d,)`` or ``(size, d)``."""
    if d < 1:
        raise ValueError("dimension must be positive")
    shape = d if size is None else (size, d)
    return rng.uniform(shape)


def _as_points(live):
    pts = live.u if isinstance(live, LiveSet) else np.atleast_2d(np.asarray(live, float))
    if pts.size == 0:
        raise ValueError("empty live set")
    return pts


def distances(p, live, norm: str = EUCLIDEAN) -> np.ndarray:
    """Distance from ``p`` (shape ``(d,)`` or ``(m, d)``) to every live point.

    Returns shape ``(n,)`` for a single point and ``(m, n)`` for several.
    """
    pts = _as_points(live)
    p = np.asarray(p, float)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    if p2.shape[1] != pts.shape[1]:
        raise ValueError("dimension mismatch between point and live set")
    if norm not in _METRICS:
        raise ValueError(f"unknown norm {norm!r}")
    out = cdist(p2, pts, metric=_METRICS[norm])
    return out[0] if single else out


def min_dist(p, live, norm: str = EUCLIDEAN):
    """Shortest distance from ``p`` to any member of the live set."""
    return distances(p, live, norm).min(axis=-1)


def count_within(p, live, radius: float, norm: str = EUCLIDEAN):
    """Number of live points strictly closer than ``radius`` to ``p``."""
    return (distances(p, live, norm) < radius).sum(axis=-1)
