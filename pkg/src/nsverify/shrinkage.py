"""Shrinkage Test: does a constrained sampler shrink the volume correctly?

Each dead point of a run on a problem with known contour volumes gives a
volume ratio ``t = V_{i+1} / V_i``.  Under uniform sampling ``t`` follows
Beta(N, 1).  The test maps ``t`` to the border ``S = 1 - t**(1/d)`` with
CDF ``1 - (1 - S)**(d N)`` and compares with a one-sample KS test.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .core import Problem
from .integrator import NSConfig, NSResult, ns_run
from .problems import get_problem
from .samplers import SamplerSpec

HIST_BINS = 60


class InvalidDeadSequence(ValueError):
    pass


class ShrinkageSample(NamedTuple):
    iteration: int
    log_v: float
    t: float
    s_border: float


@dataclass
class ShrinkageSeries:
    """Column-wise shrinkage samples; row ``i`` pairs dead points i and i+1."""

    iteration: np.ndarray
    log_l: np.ndarray
    log_v: np.ndarray
    t: np.ndarray
    s: np.ndarray

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> ShrinkageSample:
        return ShrinkageSample(int(self.iteration[i]), float(self.log_v[i]),
                               float(self.t[i]), float(self.s[i]))

    @classmethod
    def concat(cls, parts: Sequence["ShrinkageSeries"]) -> "ShrinkageSeries":
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("iteration", "log_l", "log_v", "t", "s")))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "log_l", "log_v", "t", "s"])
            for row in zip(self.iteration, self.log_l, self.log_v, self.t, self.s):
                w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


@dataclass(frozen=True)
class KSReport:
    n: int
    d_stat: float
    p_value: float


def _dead_log_ls(dead) -> np.ndarray:
    if isinstance(dead, NSResult):
        return np.asarray(dead.dead_log_l, float)
    dead = list(dead)
    if dead and hasattr(dead[0], "log_l"):
        return np.array([p.log_l for p in dead], float)
    return np.asarray(dead, float)


def series_from_log_volumes(log_v, d: int, log_l=None) -> ShrinkageSeries:
    log_v = np.asarray(log_v, float)
    if len(log_v) < 2:
        raise InvalidDeadSequence("need at least two dead points")
    step = np.diff(log_v)
    if np.any(np.isnan(step)) or np.any(step > 0):
        raise InvalidDeadSequence("invalid dead sequence: contour volume increases")
    s = -np.expm1(step / d)
    log_l = np.full(len(log_v), np.nan) if log_l is None else np.asarray(log_l, float)
    return ShrinkageSeries(np.arange(1, len(log_v)), log_l[:-1], log_v[:-1], np.exp(step), s)


def shrinkage_series(dead, problem: Problem) -> ShrinkageSeries:
    """Volume ratios between consecutive dead points of ``problem``."""
    if problem.contour_log_volume is None:
        raise ValueError(f"problem {problem.name} has no analytic contour volume")
    log_l = _dead_log_ls(dead)
    log_v = np.array([problem.contour_log_volume(v) for v in log_l])
    return series_from_log_volumes(log_v, problem.dim, log_l)


def expected_cdf_s(s, d: int, n_live: int):
    """CDF of the border ``S`` under uniform sampling."""
    s = np.asarray(s, float)
    with np.errstate(divide="ignore"):
        out = -np.expm1(d * n_live * np.log1p(-s))
    return float(out) if out.ndim == 0 else out


def ks_statistic(samples, cdf: Callable) -> float:
    x = np.asarray(samples, float)
    n = len(x)
    if n < 1:
        raise ValueError("no samples")
    f = np.asarray(cdf(x), float)
    i = np.arange(1, n + 1)
    return float(max(np.abs(i / n - f).max(), np.abs((i - 1) / n - f).max()))


def ks_p_value(d_stat: float, n: int) -> float:
    """Asymptotic Kolmogorov survival probability with the usual
    small-sample correction to the argument."""
    if n < 1:
        raise ValueError("need at least one sample")
    sq = math.sqrt(n)
    lam = (sq + 0.12 + 0.11 / sq) * d_stat
    if lam < 1e-3:
        return 1.0
    total = 0.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term < 1e-12:
            break
        k += 1
    return min(max(2.0 * total, 0.0), 1.0)


def ks_test(samples, cdf: Callable) -> KSReport:
    x = np.sort(np.asarray(samples, float))
    d = ks_statistic(x, cdf)
    return KSReport(len(x), d, ks_p_value(d, len(x)))


def shrinkage_ks(series: ShrinkageSeries, d: int, n_live: int) -> KSReport:
    return ks_test(series.s, lambda s: expected_cdf_s(s, d, n_live))


@dataclass
class RunSummary:
    seed: int
    n_iterations: int
    n_evaluations: int
    ks: KSReport


@dataclass
class ShrinkageReport:
    sampler: str
    dim: int
    n_live: int
    samples: ShrinkageSeries
    ks: KSReport
    n_iterations: int
    n_evaluations: int
    seed: int = 0
    runs: list = field(default_factory=list)
    update_interval: int = 1

    @property
    def efficiency(self) -> float:
        return self.n_iterations / self.n_evaluations

    @property
    def pooled(self) -> bool:
        return len(self.runs) > 1

    def to_record(self) -> dict:
        return {
            "kind": "shrink",
            "sampler": self.sampler,
            "dim": self.dim,
            "n_live": self.n_live,
            "n_iterations": self.n_iterations,
            "n_evaluations": self.n_evaluations,
            "efficiency": self.efficiency,
            "ks_d": self.ks.d_stat,
            "ks_p": self.ks.p_value,
            "ks_n": self.ks.n,
            "p_kind": "pooled" if self.pooled else "single-run",
            "seed": self.seed,
            "repeats": len(self.runs),
            "update_interval": self.update_interval,
            "runs": [{"seed": r.seed, "n_iterations": r.n_iterations,
                      "n_evaluations": r.n_evaluations, "ks_d": r.ks.d_stat,
                      "ks_p": r.ks.p_value} for r in self.runs],
        }

    def histogram(self, bins: int = HIST_BINS):
        """Bin centres and counts over ``[0, 1.05 max(S)]``."""
        top = float(self.samples.s.max()) * 1.05 if len(self.samples) else 0.0
        if top <= 0:
            top = 1.0 / (self.dim * self.n_live)
        counts, edges = np.histogram(self.samples.s, bins=bins, range=(0.0, top))
        return 0.5 * (edges[1:] + edges[:-1]), counts

    def cdf_table(self):
        """Sorted S with its empirical and theoretical CDF."""
        s = np.sort(self.samples.s)
        emp = np.arange(1, len(s) + 1) / len(s)
        return s, emp, expected_cdf_s(s, self.dim, self.n_live)

    def write_histogram_csv(self, path) -> None:
        centres, counts = self.histogram()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_center", "count"])
            w.writerows([repr(float(c)), int(n)] for c, n in zip(centres, counts))

    def write_cdf_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "empirical_cdf", "theoretical_cdf"])
            w.writerows([repr(float(a)), repr(float(b)), repr(float(c))]
                        for a, b, c in zip(*self.cdf_table()))


def _single_run(spec: SamplerSpec, d: int, n_live: int, n_iterations: int, seed: int,
                problem_overrides: dict):
    problem = get_problem(f"pyramid-{d}", **problem_overrides)
    res = ns_run(problem, spec, NSConfig.fixed(n_iterations, n_live=n_live, seed=seed))
    series = shrinkage_series(res, problem)
    ks = shrinkage_ks(series, d, n_live)
    return series, RunSummary(seed, res.n_iterations, res.n_evaluations, ks)


def run_shrinkage_test(sampler, d: int, n_live: int = 400, n_iterations: int = 10_000,
                       seed: int = 0, repeats: int = 1, jobs: int = 1,
                       problem_overrides: dict | None = None) -> ShrinkageReport:
    """Run the sampler on the hyper-pyramid (s=100, unit scales by default)
    and compare the shrinkage borders with their expected distribution.
    ``problem_overrides`` go to :func:`~nsverify.problems.get_problem`.

    With ``repeats > 1`` runs use seeds ``seed, seed+1, ...`` and their
    samples are pooled in seed order before the KS test; each run's own
    p-value is kept in ``runs``.
    """
    spec = SamplerSpec.parse(sampler) if isinstance(sampler, str) else sampler
    if n_iterations < 1:
        raise ValueError("iterations must be positive")
    if repeats < 1:
        raise ValueError("repeats must be positive")
    overrides = dict(problem_overrides or {})
    seeds = [seed + i for i in range(repeats)]
    args = [(spec, d, n_live, n_iterations, s, overrides) for s in seeds]
    if jobs > 1 and repeats > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_single_run, *zip(*args)))
    else:
        outs = [_single_run(*a) for a in args]
    series = ShrinkageSeries.concat([o[0] for o in outs])
    runs = [o[1] for o in outs]
    ks = runs[0].ks if repeats == 1 else shrinkage_ks(series, d, n_live)
    return ShrinkageReport(
        sampler=str(spec), dim=d, n_live=n_live, samples=series, ks=ks,
        n_iterations=sum(r.n_iterations for r in runs),
        n_evaluations=sum(r.n_evaluations for r in runs),
        seed=seed, runs=runs, update_interval=spec.update_interval,
    )
