"""The nested sampling loop and its evidence bookkeeping."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .core import EvalCounter, LiveSet, Problem, RngStream, SamplerStalled, prior_sample
from .samplers import SamplerSpec, make_sampler

log = logging.getLogger(__name__)

FIXED = "fixed_iterations"
TOLERANCE = "evidence_tolerance"

MEAN_T = "mean_t"
MEAN_LOG_T = "mean_log_t"


class DeadPoint(NamedTuple):
    iteration: int
    log_l: float
    point: np.ndarray
    n_evals_at_removal: int


@dataclass(frozen=True)
class NSConfig:
    n_live: int = 400
    stop_mode: str = TOLERANCE
    n_iterations: int = 0
    epsilon: float = 1e-3
    seed: int = 0
    max_iterations: int = 10**7
    shrinkage_estimator: str = MEAN_T

    def __post_init__(self):
        if self.n_live < 1:
            raise ValueError("n_live must be positive")
        if self.stop_mode == FIXED and self.n_iterations < 1:
            raise ValueError("iterations must be positive")
        if self.stop_mode == TOLERANCE and not self.epsilon > 0:
            raise ValueError("tolerance must be positive")
        if self.stop_mode not in (FIXED, TOLERANCE):
            raise ValueError(f"unknown stop mode {self.stop_mode!r}")
        if self.shrinkage_estimator not in (MEAN_T, MEAN_LOG_T):
            raise ValueError(f"unknown estimator {self.shrinkage_estimator!r}")

    @classmethod
    def fixed(cls, n_iterations: int, **kw) -> "NSConfig":
        return cls(stop_mode=FIXED, n_iterations=n_iterations, **kw)

    @classmethod
    def tolerance(cls, epsilon: float = 1e-3, **kw) -> "NSConfig":
        return cls(stop_mode=TOLERANCE, epsilon=epsilon, **kw)


@dataclass
class NSResult:
    log_z: float
    log_z_err: float
    information_h: float
    dead_log_l: np.ndarray
    dead_u: np.ndarray
    dead_n_evals: np.ndarray
    n_evaluations: int
    final_live: LiveSet
    n_live: int
    problem: str = ""
    sampler: str = ""
    seed: int = 0
    update_interval: int = 1
    wall_seconds: float = 0.0
    hit_max_iterations: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_iterations(self) -> int:
        return len(self.dead_log_l)

    @property
    def dead_points(self) -> list:
        return [DeadPoint(k + 1, float(l), u, int(n))
                for k, (l, u, n) in enumerate(zip(self.dead_log_l, self.dead_u, self.dead_n_evals))]

    @property
    def efficiency(self) -> float:
        return self.n_iterations / self.n_evaluations if self.n_evaluations else 0.0

    def to_record(self) -> dict:
        rec = {
            "kind": "integrate",
            "problem": self.problem,
            "sampler": self.sampler,
            "seed": self.seed,
            "n_live": self.n_live,
            "log_z": self.log_z,
            "log_z_err": self.log_z_err,
            "h": self.information_h,
            "n_iterations": self.n_iterations,
            "n_evaluations": self.n_evaluations,
            "wall_seconds": self.wall_seconds,
            "update_interval": self.update_interval,
        }
        if self.hit_max_iterations:
            rec["warning"] = "max_iterations reached before tolerance"
        rec.update(self.meta)
        return rec

    def write_iterations_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "log_l", "n_evals"])
            for k, (l, n) in enumerate(zip(self.dead_log_l, self.dead_n_evals), start=1):
                w.writerow([k, repr(float(l)), int(n)])


def _log_shrink(n_live: int, estimator: str) -> float:
    """Log of the per-iteration volume shrinkage factor."""
    if estimator == MEAN_T:
        return math.log(n_live / (n_live + 1.0))
    return -1.0 / n_live


def _log_width0(n_live: int, estimator: str) -> float:
    """Log weight of the first dead point (volume 1 before it)."""
    if estimator == MEAN_T:
        return -math.log(n_live)
    return math.log(-math.expm1(-1.0 / n_live))


def step_log_weights(n_dead: int, n_live: int, estimator: str = MEAN_T) -> np.ndarray:
    """Log weight of each dead point, ``(k-1) log t + log w_1``."""
    k = np.arange(n_dead)
    return k * _log_shrink(n_live, estimator) + _log_width0(n_live, estimator)


def _logsumexp(a) -> float:
    a = np.asarray(a, float)
    if a.size == 0:
        return -math.inf
    m = np.max(a)
    if m == -math.inf:
        return -math.inf
    return float(m + math.log(np.sum(np.exp(a - m))))


def _weighted_terms(dead_log_ls, n_live, estimator, live_log_ls=None):
    dead_log_ls = np.asarray(dead_log_ls, float)
    terms = step_log_weights(len(dead_log_ls), n_live, estimator) + dead_log_ls
    logls = dead_log_ls
    if live_log_ls is not None and len(live_log_ls):
        live_log_ls = np.asarray(live_log_ls, float)
        log_x = len(dead_log_ls) * _log_shrink(n_live, estimator)
        terms = np.concatenate([terms, log_x - math.log(len(live_log_ls)) + live_log_ls])
        logls = np.concatenate([logls, live_log_ls])
    return terms, logls


def accumulate_log_evidence(dead_log_ls, n_live: int, estimator: str = MEAN_T,
                            live_log_ls=None) -> float:
    """Log of the nested sampling evidence sum over the dead points.

    With ``live_log_ls`` the remaining live points are added, each
    carrying an equal share of the final volume.
    """
    if len(dead_log_ls) == 0:
        raise ValueError("no dead points")
    terms, _ = _weighted_terms(dead_log_ls, n_live, estimator, live_log_ls)
    return _logsumexp(terms)


def reported_uncertainty(dead_log_ls, n_live: int, estimator: str = MEAN_T,
                         live_log_ls=None) -> tuple:
    """Information ``H`` in nats and the usual ``sqrt(H / N)`` error on log Z."""
    terms, logls = _weighted_terms(dead_log_ls, n_live, estimator, live_log_ls)
    log_z = _logsumexp(terms)
    if log_z == -math.inf:
        raise ValueError("evidence is zero; information undefined")
    finite = np.isfinite(logls)
    post = np.exp(terms[finite] - log_z)
    h = float(np.sum(post * (logls[finite] - log_z)))
    return h, math.sqrt(max(h, 0.0) / n_live)


def should_terminate(max_live_log_l: float, log_volume: float, log_z: float, epsilon: float) -> bool:
    """True once the live points can add at most a fraction ``epsilon`` to Z."""
    if epsilon == math.inf:
        return True
    return max_live_log_l + log_volume <= math.log(epsilon) + log_z


def ns_run(problem: Problem, sampler, config: NSConfig) -> NSResult:
    """Run nested sampling on ``problem`` with the given constrained sampler.

    In fixed-iteration mode the evidence covers the dead points only; in
    tolerance mode the final live points are added.
    """
    spec = SamplerSpec.parse(sampler) if isinstance(sampler, str) else sampler
    n = config.n_live
    d = problem.dim
    rng = RngStream(config.seed)
    counter = EvalCounter()
    draw = make_sampler(spec, problem, rng, counter)
    log_t = _log_shrink(n, config.shrinkage_estimator)
    log_w1 = _log_width0(n, config.shrinkage_estimator)
    fixed = config.stop_mode == FIXED
    cap = min(config.n_iterations, config.max_iterations) if fixed else config.max_iterations

    t0 = time.perf_counter()
    u = prior_sample(rng, d, n)
    logl = np.asarray(problem(u), float).copy()
    counter.add(n)

    dead_l, dead_u, dead_n = [], [], []
    log_z = -math.inf
    hit_max = False

    def result(final=True):
        dl = np.array(dead_l)
        live_part = logl if (final and not fixed) else None
        if len(dl):
            z = accumulate_log_evidence(dl, n, config.shrinkage_estimator, live_part)
            try:
                h, err = reported_uncertainty(dl, n, config.shrinkage_estimator, live_part)
            except ValueError:
                h, err = 0.0, 0.0
        else:
            z, h, err = -math.inf, 0.0, 0.0
        return NSResult(
            log_z=z, log_z_err=err, information_h=h,
            dead_log_l=dl, dead_u=np.array(dead_u).reshape(-1, d), dead_n_evals=np.array(dead_n, int),
            n_evaluations=counter.n_evaluations, final_live=LiveSet(u.copy(), logl.copy()),
            n_live=n, problem=problem.name, sampler=str(spec), seed=config.seed,
            update_interval=spec.update_interval, wall_seconds=time.perf_counter() - t0,
            hit_max_iterations=hit_max,
        )

    k = 0
    while True:
        if fixed:
            if k >= cap:
                break
        else:
            if should_terminate(float(logl.max()), k * log_t, log_z, config.epsilon):
                break
            if k >= cap:
                hit_max = True
                log.warning("max_iterations reached before the tolerance was met")
                break
        worst = int(np.argmin(logl))
        l_min = float(logl[worst])
        log_z = float(np.logaddexp(log_z, k * log_t + log_w1 + l_min))
        k += 1
        dead_l.append(l_min)
        dead_u.append(u[worst].copy())
        dead_n.append(counter.n_evaluations)

        others = LiveSet(np.delete(u, worst, axis=0), np.delete(logl, worst))
        try:
            new = draw.draw(others, l_min, iteration=k)
        except SamplerStalled as exc:
            exc.partial = result(final=False)
            raise
        assert new.log_l > l_min, "replacement below the likelihood threshold"
        u[worst] = new.point
        logl[worst] = new.log_l
        if k % 1000 == 0:
            log.debug("iteration %d  log_z %.4f  evaluations %d", k, log_z, counter.n_evaluations)

    return result()
