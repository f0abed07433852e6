"""Composite studies shared by the command line and the acceptance suite."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import order_parameter, random_equal_density, replica_rng, simulate, test_function
from .estimators import EstimateWithError, batch_means
from .generators import (
    GapResult,
    build_complete_generator,
    build_ring_generator,
    rayleigh_quotient,
    spectral_gap_result,
)
from .continuum import critical_beta
from .lattice import SpeciesConfiguration
from .minimizer import MinimizerSolution, solve_minimizer
from .statespace import DEFAULT_BUDGET_BYTES, build_ensemble, enumerate_states, variance


def cosine(r):
    return np.cos(2 * np.pi * r)


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    residual: float  # root-mean-square residual of the log-log fit


def loglog_slope(xs, ys) -> SlopeFit:
    """Least-squares slope of log(y) against log(x)."""
    x = np.log(np.asarray(xs, dtype=float))
    y = np.log(np.asarray(ys, dtype=float))
    if x.size < 2:
        raise ValueError("a slope needs at least two points")
    slope, intercept = np.polyfit(x, y, 1)
    res = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return SlopeFit(float(slope), float(intercept), res)


def exact_gap(N: int, beta: float, graph: str = "ring", method: str = "auto",
              budget_bytes: int = DEFAULT_BUDGET_BYTES) -> GapResult:
    ens = build_ensemble(enumerate_states(N, budget_bytes), beta)
    build = build_ring_generator if graph == "ring" else build_complete_generator
    return spectral_gap_result(build(ens, budget_bytes), method)


@dataclass
class QuotientProbe:
    N: int
    beta: float
    quotient: float
    variance: float
    gap: float | None


def cosine_quotient(N: int, beta: float, with_gap: bool = True,
                    budget_bytes: int = DEFAULT_BUDGET_BYTES) -> QuotientProbe:
    """Rayleigh quotient of ``f_N`` with phi = cos(2 pi r) for the ring dynamics."""
    ens = build_ensemble(enumerate_states(N, budget_bytes), beta)
    gen = build_ring_generator(ens, budget_bytes)
    f = np.empty(ens.total)
    for start, cfg in ens.indexing.chunks():
        f[start : start + len(cfg)] = test_function(cfg, cosine)
    q = rayleigh_quotient(gen, f)
    var = variance(ens, f)
    gap = spectral_gap_result(gen).gap if with_gap else None
    return QuotientProbe(N, beta, q, var, gap)


def variance_limit(solution: MinimizerSolution) -> float:
    """``int_0^1 ds [int rho_B(r - s) cos(2 pi r) dr]^2 = |c_1|^2 / 2``."""
    return abs(solution.fourier_b) ** 2 / 2.0


@dataclass
class LLNReport:
    N: int
    beta: float
    modulus: EstimateWithError
    threshold: float  # 3 / sqrt(N)
    target: float | None  # |int (rho_B - 1/3) e^{2 pi i r}| from the minimizer
    relative_error: float | None
    caveat: str = ("the modulus concentrates; the phase is uniformly distributed "
                   "over translates, so no single profile is approached")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["modulus"] = self.modulus.as_dict()
        return d


def segregated_start(N: int) -> SpeciesConfiguration:
    """Blocks A..AB..BC..C, the discrete analogue of a segregated profile."""
    return SpeciesConfiguration(np.repeat(np.arange(3, dtype=np.int8), N // 3))


def lln_probe(N: int, beta: float, T: float = 4e5, burn_in: float = 4e4, seed: int = 0,
              sample_dt: float = 100.0, start: str = "random",
              minimizer: MinimizerSolution | None = None) -> LLNReport:
    """Time-averaged k = 1 order parameter of the ring dynamics at size N."""
    rng = replica_rng(seed, 0)
    z0 = segregated_start(N) if start == "segregated" else random_equal_density(N, rng)
    tr = simulate(z0, beta, T, "ring", rng, sample_dt=sample_dt, record_events=False)
    keep = tr.sample_times >= burn_in
    est = batch_means(order_parameter(tr.snapshots[keep]))
    target = rel = None
    sol = minimizer
    if sol is None and beta > critical_beta():
        s = solve_minimizer(beta)
        sol = s if s else None
    if sol is not None:
        target = sol.amplitude
        rel = abs(est.mean - target) / target
    return LLNReport(N, beta, est, 3.0 / math.sqrt(N), target, rel)
