"""Constrained samplers: draw uniformly from the prior above a threshold.

Three families are provided:

* plain rejection from the whole unit cube,
* random-walk Metropolis started at a live point, with a fixed or
  adaptively tuned isotropic Gaussian proposal,
* RADFRIENDS / SUPFRIENDS, which rejection-sample from the union of
  norm balls of radius ``R`` around the live points, where ``R`` comes
  from a bootstrap over the live set.

Trials are generated in vectorised batches.  Only the trials up to and
including the first success are charged to the evaluation counter, so
counts match a trial-by-trial loop exactly; the surplus of a batch is
discarded.
"""

from __future__ import annotations

import logging
import math
import re
from collections import deque
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    EUCLIDEAN,
    NORMS,
    STALL_BUDGET,
    SUPREMUM,
    EvalCounter,
    LivePoint,
    LiveSet,
    Problem,
    RngStream,
    SamplerStalled,
    _as_points,
    count_within,
    distances,
    min_dist,
    prior_sample,
)

log = logging.getLogger(__name__)

REJECTION = "rejection"
MCMC = "mcmc"
REGION = "region"

GLOBAL_REJECTION = "global_rejection"
NEAR_POINT = "near_point"
AUTO = "auto"
DRAW_VARIANTS = (GLOBAL_REJECTION, NEAR_POINT, AUTO)

# draw_near candidates (not likelihood calls) before giving up
MAX_CANDIDATES = 10**8
_MAX_BATCH = 8192


@dataclass(frozen=True)
class SamplerSpec:
    kind: str
    steps: int = 0
    adaptive: bool = True
    scale: float = 0.1
    norm: str = EUCLIDEAN
    bootstrap_rounds: int = 50
    draw_variant: str = NEAR_POINT
    update_interval: int = 1
    label: str = ""

    def __post_init__(self):
        if self.kind not in (REJECTION, MCMC, REGION):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.kind == MCMC:
            if self.steps < 1:
                raise ValueError("MCMC needs at least one step")
            if self.scale <= 0:
                raise ValueError("proposal scale must be positive")
        if self.kind == REGION:
            if self.norm not in NORMS:
                raise ValueError(f"unknown norm {self.norm!r}")
            if self.bootstrap_rounds < 1:
                raise ValueError("need at least one bootstrap round")
            if self.update_interval < 1:
                raise ValueError("update interval must be at least 1")
            if self.draw_variant not in DRAW_VARIANTS:
                raise ValueError(f"unknown draw variant {self.draw_variant!r}")

    @classmethod
    def parse(cls, text: str, **extra) -> "SamplerSpec":
        """Parse ``rejection``, ``mcmc-adapt-<steps>``,
        ``mcmc-fixed-<sigma>-<steps>``, ``radfriends`` or ``supfriends``."""
        text = text.strip()
        if text == "rejection":
            spec = cls(REJECTION, label=text)
        elif text in ("radfriends", "supfriends"):
            norm = EUCLIDEAN if text == "radfriends" else SUPREMUM
            spec = cls(REGION, norm=norm, label=text)
        elif m := re.fullmatch(r"mcmc-adapt-(\d+)", text):
            spec = cls(MCMC, steps=int(m.group(1)), adaptive=True, scale=0.1, label=text)
        elif m := re.fullmatch(r"mcmc-fixed-(.+)-(\d+)", text):
            try:
                sigma = float(m.group(1))
            except ValueError:
                raise ValueError(f"unknown sampler {text!r}") from None
            spec = cls(MCMC, steps=int(m.group(2)), adaptive=False, scale=sigma, label=text)
        else:
            raise ValueError(f"unknown sampler {text!r}")
        return replace(spec, **extra) if extra else spec

    def __str__(self):
        return self.label or self.kind


@dataclass
class ScaleState:
    sigma: float = 0.1


@dataclass
class RegionState:
    norm: str = EUCLIDEAN
    radius_r: float = 0.0
    computed_at_iteration: Optional[int] = None


def _stalled(what="sampler stalled"):
    return SamplerStalled(what)


def _next_batch(current: int, used: int) -> int:
    return int(min(max(2 * used, 16), _MAX_BATCH, max(current, 16) * 4))


def rejection_draw(problem: Problem, log_l_min: float, rng: RngStream, counter: EvalCounter,
                   budget: int = STALL_BUDGET, batch: int = 64) -> LivePoint:
    """Draw from the whole cube until the likelihood exceeds ``log_l_min``."""
    used = 0
    while used < budget:
        b = min(batch, budget - used)
        cand = prior_sample(rng, problem.dim, b)
        logl = np.asarray(problem(cand))
        ok = np.flatnonzero(logl > log_l_min)
        if ok.size:
            counter.add(ok[0] + 1)
            return LivePoint(cand[ok[0]], float(logl[ok[0]]))
        counter.add(b)
        used += b
        batch = min(batch * 4, _MAX_BATCH)
    raise _stalled()


def adapt_scale(sigma: float, n_accepts: int, n_rejects: int) -> float:
    """Grow the proposal after a mostly-accepting chain, shrink it otherwise."""
    if n_accepts + n_rejects < 1:
        raise ValueError("no proposals to adapt from")
    if n_accepts > n_rejects:
        return sigma * math.exp(1.0 / n_accepts)
    if n_accepts < n_rejects:
        return sigma * math.exp(-1.0 / n_rejects)
    return sigma


def mcmc_draw(problem: Problem, log_l_min: float, live, spec: SamplerSpec, rng: RngStream,
              counter: EvalCounter, scale_state: ScaleState) -> LivePoint:
    """Random walk of ``spec.steps`` Gaussian proposals from a random live point.

    Proposals leaving the cube or falling below the threshold are
    rejected and the chain stays put.  Out-of-cube proposals cost no
    likelihood evaluation.
    """
    pts = _as_points(live)
    logls = live.log_l if isinstance(live, LiveSet) else np.asarray(problem(pts), float)
    # a stuck chain duplicates its start, so ties with the threshold are not valid starts
    starts = np.flatnonzero(logls > log_l_min)
    if starts.size == 0:
        raise _stalled("sampler stalled: no live point above the threshold")
    i = int(starts[rng.integers(starts.size)])
    x = pts[i].copy()
    lx = float(logls[i])
    sigma = scale_state.sigma
    steps = rng.normal((spec.steps, pts.shape[1])) * sigma
    n_acc = n_rej = 0
    # speculative segments: walk as if every proposal were accepted, keep
    # the prefix up to the first rejection; evaluations past it are not
    # counted, so chain and counts match a step-by-step walk

    i, seg = 0, 4
    while i < spec.steps:
        dx = steps[i:i + seg]
        # cumsum adds left to right, the same rounding as stepping
        path = np.cumsum(np.vstack([x, dx]), axis=0)[1:]
        inside = np.all((path >= 0.0) & (path <= 1.0), axis=1)
        ok = inside.copy()
        if inside.any():
            ly = np.full(len(path), -np.inf)
            ly[inside] = problem(path[inside])
            ok &= ly > log_l_min
        bad = np.flatnonzero(~ok)
        if bad.size == 0:
            counter.add(len(path))
            n_acc += len(path)
            x, lx = path[-1], float(ly[-1])
            i += len(path)
            seg *= 2
            continue
        j = int(bad[0])
        counter.add(j + int(inside[j]))
        n_acc += j
        n_rej += 1
        if j:
            x, lx = path[j - 1], float(ly[j - 1])
        i += j + 1
        seg = max(4, 2 * j)
    if spec.adaptive:
        scale_state.sigma = adapt_scale(sigma, n_acc, n_rej)
    return LivePoint(x, lx)


def _round_bits(mask: np.ndarray) -> np.ndarray:
    """Pack a (rounds, n) boolean table into (n, words) uint64 bitsets."""
    rounds, n = mask.shape
    words = -(-rounds // 64)
    padded = np.zeros((words * 64, n), bool)
    padded[:rounds] = mask
    packed = np.packbits(padded, axis=0, bitorder="little")
    return np.ascontiguousarray(packed.T).view("<u8")


def compute_r(live, rounds: int = 50, norm: str = EUCLIDEAN, rng: RngStream | None = None,
              k_near: int = 6) -> float:
    """Bootstrap radius: the largest distance from a left-out live point to
    its nearest neighbour among the resampled ones, over ``rounds`` rounds.

    Each point's ``k_near`` nearest neighbours come from a kd-tree; the
    rare case where all of them were left out falls back to a full scan,
    so the result is exact.
    """
    pts = _as_points(live)
    n = len(pts)
    if n < 2 or np.all(pts == pts[0]):
        log.warning("fewer than 2 distinct live points; radius is 0")
        return 0.0
    rng = rng or RngStream(0)
    chosen = rng.integers(n, size=(rounds, n))
    mask = np.zeros((rounds, n), bool)
    mask[np.arange(rounds)[:, None], chosen] = True

    k = min(n, k_near)
    tree = cKDTree(pts)
    dk, nbr = tree.query(pts, k=k, p=2 if norm == EUCLIDEAN else np.inf)
    dk = dk.reshape(n, k)
    nbr = nbr.reshape(n, k)

    # bit r of in_[i] says point i was resampled in round r; walking the
    # sorted neighbour list, a left-out point is resolved by its first
    # resampled neighbour
    in_ = _round_bits(mask)
    open_ = ~in_ & _round_bits(np.ones_like(mask))
    r = 0.0
    for j in range(k):
        hit = in_[nbr[:, j]]
        resolved = (open_ & hit).any(axis=1)
        if resolved.any():
            r = max(r, float(dk[resolved, j].max()))
        open_ &= ~hit
    left = np.flatnonzero(open_.any(axis=1))
    if left.size:
        miss_r, miss_i = np.nonzero(~mask[:, left])
        bit = (open_[left[miss_i], miss_r // 64] >> (miss_r % 64).astype(np.uint64)) & np.uint64(1)
        miss_r, miss_i = miss_r[bit == 1], left[miss_i[bit == 1]]
        full = distances(pts[miss_i], pts, norm)
        full[~mask[miss_r]] = np.inf
        r = max(r, float(full.min(axis=1).max()))
    return r


# per-round chance that a given point is left out, (1 - 1/N)**N rounded
P_LEAVE_OUT = 0.37


def bootstrap_round_count(n_live: int, target_p: float = 1e-6, exact: bool = False) -> float:
    """Rounds needed so that some live point is never left out with
    probability at most ``target_p`` (union bound).

    By default the per-round leave-out probability is the rounded 0.37;
    ``exact=True`` uses ``(1 - 1/N)**N``, which gives about 0.5 more rounds.
    """
    p1 = (1.0 - 1.0 / n_live) ** n_live if exact else P_LEAVE_OUT
    return (math.log(target_p) - math.log(n_live)) / math.log(1.0 - p1)


def _ball_log_volume(d: int, radius: float, norm: str) -> float:
    if norm == EUCLIDEAN:
        return 0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1) + d * math.log(radius)
    return d * math.log(2 * radius)


def _min_dist(cand, pts, norm, tree, radius):
    if tree is None:
        return min_dist(cand, pts, norm)
    return tree.query(cand, k=1, p=2 if norm == EUCLIDEAN else np.inf, distance_upper_bound=radius)[0]


def _count_within(cand, pts, radius, norm, tree):
    if tree is None:
        return count_within(cand, pts, radius, norm)
    # the ball query counts ties at distance R; they have probability zero
    return tree.query_ball_point(cand, radius, p=2 if norm == EUCLIDEAN else np.inf,
                                 return_length=True)


def _near_v1(d, pts, radius, norm, rng, batch, tree=None):
    """Uniform cube candidates kept if within ``radius``; also returns
    the per-trial acceptance."""
    cand = prior_sample(rng, d, batch)
    inside = _min_dist(cand, pts, norm, tree, radius) < radius
    return cand[inside], inside.astype(float)


def _near_v2(d, pts, radius, norm, rng, batch, tree=None):
    """Ball candidates thinned by ``1/m``.  The returned per-trial weights
    estimate the region's share of the cube: ``n * V_ball * accept``."""
    mothers = pts[rng.integers(len(pts), size=batch)]
    if norm == EUCLIDEAN:
        v = rng.normal((batch, d))
        v /= np.linalg.norm(v, axis=1)[:, None]
        cand = mothers + (radius * rng.uniform(batch) ** (1.0 / d))[:, None] * v
    else:
        cand = mothers + rng.uniform((batch, d), -radius, radius)
    keep = np.all((cand >= 0.0) & (cand <= 1.0), axis=1)
    if keep.any():
        m = _count_within(cand[keep], pts, radius, norm, tree)
        keep[keep] = (m > 0) & (rng.uniform(len(m)) * m < 1.0)
    share = math.exp(math.log(len(pts)) + _ball_log_volume(d, radius, norm))
    return cand[keep], keep * share


def _draw_near(variant, d, live, radius, norm, rng, max_trials=MAX_CANDIDATES, batch=64):
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = _as_points(live)
    fn = _near_v1 if variant == GLOBAL_REJECTION else _near_v2
    tried = 0
    while tried < max_trials:
        got, _ = fn(d, pts, radius, norm, rng, batch)
        tried += batch
        if len(got):
            return got[0]
        batch = min(batch * 4, _MAX_BATCH)
    raise _stalled()


def draw_near_v1(d: int, live, radius: float, norm: str, rng: RngStream,
                 max_trials: int = MAX_CANDIDATES) -> np.ndarray:
    """Uniform point of the cube within ``radius`` of some live point, by
    rejection from the whole cube."""
    return _draw_near(GLOBAL_REJECTION, d, live, radius, norm, rng, max_trials)


def draw_near_v2(d: int, live, radius: float, norm: str, rng: RngStream,
                 max_trials: int = MAX_CANDIDATES) -> np.ndarray:
    """Same distribution as :func:`draw_near_v1`, sampled around a random
    live point and thinned by ``1/m`` for the ``m`` overlapping balls."""
    return _draw_near(NEAR_POINT, d, live, radius, norm, rng, max_trials)


class ConstrainedSampler:
    """Stateful per-run wrapper around one of the draw functions."""

    def __init__(self, spec: SamplerSpec, problem: Problem, rng: RngStream, counter: EvalCounter):
        self.spec = spec
        self.problem = problem
        self.rng = rng
        self.counter = counter
        self.scale = ScaleState(spec.scale)
        self.region = RegionState(norm=spec.norm)
        self.batch = 64
        # estimated acceptance of whole-cube rejection, one entry per trial
        self.region_share = deque(maxlen=100)

    def draw(self, live: LiveSet, log_l_min: float, iteration: int = 0) -> LivePoint:
        kind = self.spec.kind
        if kind == REJECTION:
            before = self.counter.n_evaluations
            p = rejection_draw(self.problem, log_l_min, self.rng, self.counter, batch=self.batch)
            self.batch = _next_batch(self.batch, self.counter.n_evaluations - before)
            return p
        if kind == MCMC:
            return mcmc_draw(self.problem, log_l_min, live, self.spec, self.rng, self.counter, self.scale)
        return region_draw(self.problem, log_l_min, live, self.spec, self.rng, self.counter,
                           self.region, iteration, sampler=self)

    def pick_variant(self) -> str:
        """Whole-cube rejection while it accepts more than 5% of trials
        (estimated from whichever variant ran last), else near-point."""
        if self.spec.draw_variant != AUTO:
            return self.spec.draw_variant
        h = self.region_share
        if not h or sum(h) > 0.05 * len(h):
            return GLOBAL_REJECTION
        return NEAR_POINT


def region_draw(problem: Problem, log_l_min: float, live, spec: SamplerSpec, rng: RngStream,
                counter: EvalCounter, region_state: RegionState, iteration: int = 0,
                budget: int = STALL_BUDGET, sampler: ConstrainedSampler | None = None) -> LivePoint:
    """RADFRIENDS draw: refresh ``R`` if due, then sample the ball union
    until a candidate beats the threshold."""
    pts = _as_points(live)
    due = (region_state.computed_at_iteration is None
           or iteration - region_state.computed_at_iteration >= spec.update_interval)
    if due:
        region_state.radius_r = compute_r(pts, spec.bootstrap_rounds, spec.norm, rng)
        region_state.computed_at_iteration = iteration
    radius = region_state.radius_r
    if radius <= 0:
        raise _stalled("sampler stalled: region radius is zero")

    d = pts.shape[1]
    batch = sampler.batch if sampler is not None else 64
    variant = sampler.pick_variant() if sampler is not None else spec.draw_variant
    near = _near_v1 if variant == GLOBAL_REJECTION else _near_v2
    tree = cKDTree(pts) if len(pts) > 32 else None
    used = candidates = 0
    while used < budget and candidates < MAX_CANDIDATES:
        cand, share = near(d, pts, radius, spec.norm, rng, batch, tree)
        candidates += batch
        if sampler is not None:
            sampler.region_share.extend(share[-100:].tolist())
        if len(cand) == 0:
            batch = min(batch * 4, _MAX_BATCH)
            continue
        cand = cand[: budget - used]
        logl = np.asarray(problem(cand))
        ok = np.flatnonzero(logl > log_l_min)
        if ok.size:
            counter.add(ok[0] + 1)
            if sampler is not None:
                needed = candidates - batch + batch * (ok[0] + 1) / len(cand)
                sampler.batch = _next_batch(batch, int(math.ceil(needed)))
            return LivePoint(cand[ok[0]], float(logl[ok[0]]))
        counter.add(len(cand))
        used += len(cand)
        batch = min(batch * 4, _MAX_BATCH)
    raise _stalled()


def make_sampler(spec: SamplerSpec | str, problem: Problem, rng: RngStream,
                 counter: EvalCounter) -> ConstrainedSampler:
    if isinstance(spec, str):
        spec = SamplerSpec.parse(spec)
    return ConstrainedSampler(spec, problem, rng, counter)
