"""Benchmark likelihoods: hyper-pyramid, eggbox and the LogGamma mixture."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import partial
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .core import Problem

LOG_2PI = math.log(2.0 * math.pi)

EGGBOX_LOG_Z = 235.88


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class PyramidParams:
    s: float
    sigmas: tuple

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("slope s must be positive")
        if len(self.sigmas) == 0 or min(self.sigmas) <= 0:
            raise ValueError("all scales must be positive")

    @classmethod
    def cube(cls, d: int, s: float = 100.0) -> "PyramidParams":
        return cls(s, (1.0,) * d)

    @classmethod
    def multiscale(cls, d: int, s: float = 100.0) -> "PyramidParams":
        """Scales 10**(-3 i / d) for i = 1..d."""
        return cls(s, tuple(10 ** (-3.0 * i / d) for i in range(1, d + 1)))


@dataclass(frozen=True)
class LogGammaParams:
    c: float
    mu: float
    sigma: float

    def __post_init__(self):
        if self.c <= 0 or self.sigma <= 0:
            raise ValueError("shape and scale must be positive")


def pyramid_log_l(x, params: PyramidParams):
    x = np.asarray(x, float)
    r = np.max(np.abs(x - 0.5) / np.asarray(params.sigmas), axis=-1)
    return -(r ** (1.0 / params.s))


def pyramid_contour_log_volume(log_l: float, params: PyramidParams, d: int | None = None) -> float:
    """Log volume of the hyper-rectangle ``{x : ln L(x) >= log_l}``.

    Raises :class:`DomainError` when the rectangle pokes out of the unit
    cube, where the closed form no longer holds.
    """
    d = len(params.sigmas) if d is None else d
    if log_l > 0:
        raise DomainError("log-likelihood above the pyramid maximum of 0")
    if log_l == 0:
        return -math.inf
    log_r0 = params.s * math.log(-log_l)
    log_sig = np.log(params.sigmas)
    # clipped rectangles would need the intersection volume instead
    if np.any(log_r0 + log_sig > math.log(0.5) + 1e-9):
        raise DomainError("contour rectangle exceeds the unit cube")
    return float(d * (math.log(2.0) + log_r0) + log_sig.sum())


def eggbox_log_l(x):
    x = np.asarray(x, float)
    if x.shape[-1] != 2:
        raise ValueError("eggbox is two-dimensional")
    return (2.0 + np.cos(5 * np.pi * x[..., 0]) * np.cos(5 * np.pi * x[..., 1])) ** 5


def log_gamma_log_pdf(x, params: LogGammaParams):
    z = (np.asarray(x, float) - params.mu) / params.sigma
    return params.c * z - np.exp(z) - math.log(params.sigma) - gammaln(params.c)


def normal_log_pdf(x, mu: float, sigma: float):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    z = (np.asarray(x, float) - mu) / sigma
    return -0.5 * z * z - math.log(sigma) - 0.5 * LOG_2PI


_G_A = LogGammaParams(1.0, 1 / 3, 1 / 30)
_G_B = LogGammaParams(1.0, 2 / 3, 1 / 30)


def _mixture(a, b):
    return np.logaddexp(a, b) - math.log(2.0)


def log_gamma_problem_log_l(x, d: int | None = None):
    x = np.asarray(x, float)
    d = x.shape[-1] if d is None else d
    if d < 2:
        raise ValueError("LogGamma problem needs at least 2 dimensions")
    if x.shape[-1] != d:
        raise ValueError("dimension mismatch")
    total = _mixture(log_gamma_log_pdf(x[..., 0], _G_A), log_gamma_log_pdf(x[..., 0], _G_B))
    total = total + _mixture(normal_log_pdf(x[..., 1], 1 / 3, 1 / 30),
                             normal_log_pdf(x[..., 1], 2 / 3, 1 / 30))
    # 1-based index i in 3..(d+2)/2 is LogGamma, the rest Normal
    split = (d + 2) // 2
    if d > 2:
        total = total + log_gamma_log_pdf(x[..., 2:split], _G_B).sum(axis=-1)
        total = total + normal_log_pdf(x[..., split:], 2 / 3, 1 / 30).sum(axis=-1)
    return total


def loggamma_extra_kinds(d: int) -> list:
    """Kind of each extra coordinate (1-based index 3..d)."""
    split = (d + 2) // 2
    return ["loggamma" if i <= split else "normal" for i in range(3, d + 1)]


def make_pyramid(d: int, s: float = 100.0, sigmas: Sequence[float] | str | None = None) -> Problem:
    if sigmas is None or sigmas == "cube":
        params = PyramidParams.cube(d, s)
    elif sigmas == "multiscale":
        params = PyramidParams.multiscale(d, s)
    else:
        params = PyramidParams(s, tuple(float(v) for v in sigmas))
        if len(params.sigmas) != d:
            raise ValueError("need one scale per dimension")
    return Problem(
        name=f"pyramid-{d}",
        dim=d,
        log_likelihood=partial(pyramid_log_l, params=params),
        contour_log_volume=partial(pyramid_contour_log_volume, params=params, d=d),
        params={"s": params.s, "sigmas": params.sigmas},
    )


def make_eggbox() -> Problem:
    return Problem("eggbox", 2, eggbox_log_l, true_log_z=EGGBOX_LOG_Z)


def make_loggamma(d: int) -> Problem:
    if d < 2:
        raise ValueError("LogGamma problem needs at least 2 dimensions")
    return Problem(f"loggamma-{d}", d, partial(log_gamma_problem_log_l, d=d), true_log_z=0.0)


def get_problem(name: str, **overrides) -> Problem:
    """Look up a benchmark by registry name.

    Names are ``pyramid-<d>``, ``eggbox`` and ``loggamma-<d>``.  Pyramid
    accepts ``s`` and ``sigmas`` overrides (``sigmas`` may be ``cube``,
    ``multiscale`` or a comma-separated list).
    """
    m = re.fullmatch(r"(pyramid|loggamma)-(\d+)", name)
    if name == "eggbox":
        if overrides:
            raise ValueError("eggbox takes no options")
        return make_eggbox()
    if m is None:
        raise KeyError(f"unknown problem {name!r}")
    d = int(m.group(2))
    if d < 1:
        raise KeyError(f"unknown problem {name!r}")
    allowed = {"s", "sigmas"} if m.group(1) == "pyramid" else set()
    extra = set(overrides) - allowed
    if extra:
        raise ValueError(f"unknown option(s) for {name}: {', '.join(sorted(extra))}")
    if m.group(1) == "loggamma":
        return make_loggamma(d)
    sigmas = overrides.get("sigmas")
    if isinstance(sigmas, str) and sigmas not in ("cube", "multiscale"):
        sigmas = [float(v) for v in sigmas.split(",")]
    return make_pyramid(d, float(overrides.get("s", 100.0)), sigmas)

