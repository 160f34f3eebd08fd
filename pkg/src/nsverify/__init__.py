"""Nested sampling verification toolkit.

Constrained samplers (rejection, random-walk MCMC, RADFRIENDS and
SUPFRIENDS), a nested sampling integrator, the Shrinkage Test and the
hyper-pyramid, eggbox and LogGamma benchmarks.
"""

from .core import LivePoint, LiveSet, Problem, RngStream, SamplerStalled
from .integrator import NSConfig, NSResult, ns_run
from .problems import get_problem, make_eggbox, make_loggamma, make_pyramid
from .samplers import SamplerSpec, compute_r, make_sampler
from .shrinkage import ShrinkageReport, run_shrinkage_test

__version__ = "0.1.0"

__all__ = [
    "LivePoint", "LiveSet", "NSConfig", "NSResult", "Problem", "RngStream",
    "SamplerSpec", "SamplerStalled", "ShrinkageReport", "compute_r", "get_problem",
    "make_eggbox", "make_loggamma", "make_pyramid", "make_sampler", "ns_run",
    "run_shrinkage_test",
]
