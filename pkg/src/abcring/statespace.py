"""Exhaustive enumeration of the equal-density space and its Gibbs measure.

States are ordered lexicographically in the species codes (A < B < C) and
indexed through the multinomial number system, so ``rank``/``unrank`` are
O(N) per state and fully vectorised over batches.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
from numpy.typing import NDArray

from .lattice import ConfigurationError, SpeciesConfiguration, pair_count

DEFAULT_BUDGET_BYTES = 2 * 1024**3
CHUNK = 1 << 16


class BudgetExceeded(MemoryError):
    """The requested object would exceed the configured memory budget."""

    def __init__(self, what: str, required: int, budget: int):
        self.required = required
        self.budget = budget
        super().__init__(
            f"{what} needs ~{required / 2**20:.1f} MiB, budget is "
            f"{budget / 2**20:.1f} MiB (raise the budget to proceed)"
        )


def multinomial(n: int, parts: tuple[int, ...]) -> int:
    out = math.factorial(n)
    for p in parts:
        out //= math.factorial(p)
    return out


def state_count(N: int) -> int:
    if N <= 0 or N % 3:
        raise ConfigurationError(f"N must be a positive multiple of 3, got {N}")
    return multinomial(N, (N // 3,) * 3)


@dataclass(frozen=True)
class StateIndexing:
    """Bijection between ``0..total-1`` and the equal-density configurations."""

    N: int
    total: int
    table: NDArray[np.int64] = field(repr=False)  # table[a, b, c] = (a+b+c)!/(a!b!c!)

    @property
    def per_species(self) -> int:
        return self.N // 3

    def unrank(self, index) -> NDArray[np.int8]:
        """Configurations (rows) for an array of indices."""
        idx = np.array(index, dtype=np.int64, ndmin=1)
        if idx.size and (idx.min() < 0 or idx.max() >= self.total):
            raise IndexError("state index out of range")
        n = idx.size
        rows = np.arange(n)
        left = np.full((n, 3), self.per_species, dtype=np.int64)
        out = np.empty((n, self.N), dtype=np.int8)
        rem = idx.copy()
        for pos in range(self.N):
            chosen = np.full(n, -1, dtype=np.int64)
            for s in range(3):
                avail = (left[:, s] > 0) & (chosen < 0)
                dec = left.copy()
                dec[:, s] -= 1
                cnt = np.where(
                    avail, self.table[dec[:, 0].clip(0), dec[:, 1].clip(0), dec[:, 2].clip(0)], 0
                )
                take = avail & (rem < cnt)
                chosen[take] = s
                rem = np.where(avail & ~take, rem - cnt, rem)
            out[:, pos] = chosen
            left[rows, chosen] -= 1
        return out

    def rank(self, configs) -> NDArray[np.int64]:
        """Indices of configuration rows (inverse of :meth:`unrank`)."""
        c = np.atleast_2d(np.asarray(configs))
        n = c.shape[0]
        rows = np.arange(n)
        left = np.full((n, 3), self.per_species, dtype=np.int64)
        out = np.zeros(n, dtype=np.int64)
        for pos in range(self.N):
            sym = c[:, pos].astype(np.int64)
            for s in range(2):
                smaller = (sym > s) & (left[:, s] > 0)
                dec = left.copy()
                dec[:, s] -= 1
                out += np.where(
                    smaller,
                    self.table[dec[:, 0].clip(0), dec[:, 1].clip(0), dec[:, 2].clip(0)],
                    0,
                )
            left[rows, sym] -= 1
        if (left != 0).any():
            raise ConfigurationError("rank() needs equal-density configurations")
        return out

    def configuration(self, i: int) -> SpeciesConfiguration:
        return SpeciesConfiguration(self.unrank([i])[0])

    def index_of(self, zeta: SpeciesConfiguration) -> int:
        return int(self.rank(zeta.sites)[0])

    def chunks(self, size: int = CHUNK) -> Iterator[tuple[int, NDArray[np.int8]]]:
        """Yield ``(start, configs)`` over consecutive index ranges."""
        for start in range(0, self.total, size):
            stop = min(start + size, self.total)
            yield start, self.unrank(np.arange(start, stop))

    def all_configurations(self) -> NDArray[np.int8]:
        return self.unrank(np.arange(self.total))


def enumerate_states(N: int, budget_bytes: int = DEFAULT_BUDGET_BYTES) -> StateIndexing:
    """Index the equal-density space for N sites.

    Raises :class:`BudgetExceeded` when storing one energy and one weight per
    state plus a configuration batch would not fit in ``budget_bytes``.
    """
    total = state_count(N)
    required = total * 24 + CHUNK * N * 8
    if required > budget_bytes:
        raise BudgetExceeded(f"state space for N={N} ({total} states)", required, budget_bytes)
    m = N // 3
    table = np.zeros((m + 1, m + 1, m + 1), dtype=np.int64)
    for a in range(m + 1):
        for b in range(m + 1):
            for c in range(m + 1):
                table[a, b, c] = multinomial(a + b + c, (a, b, c))
    return StateIndexing(N=N, total=total, table=table)


@dataclass(frozen=True)
class GibbsEnsemble:
    """Gibbs measure ``nu_N^beta`` on an enumerated state space.

    ``pair_counts`` holds the exact integers ``K = N**2 H_N``, so the
    unnormalised log-weight of a state is ``-beta * K / N``.
    """

    indexing: StateIndexing
    beta: float
    pair_counts: NDArray[np.int64] = field(repr=False)
    log_z: float
    probabilities: NDArray[np.float64] = field(repr=False)

    @property
    def N(self) -> int:
        return self.indexing.N

    @property
    def total(self) -> int:
        return self.indexing.total

    @property
    def log_weights(self) -> NDArray[np.float64]:
        """Unnormalised log-weights ``-beta N H_N``."""
        return -self.beta * self.pair_counts / self.N

    @property
    def partition_function(self) -> float:
        return math.exp(self.log_z)

    @property
    def energies(self) -> NDArray[np.float64]:
        return self.pair_counts / self.N**2

    def summary(self) -> dict:
        return {
            "N": self.N,
            "beta": self.beta,
            "total": self.total,
            "logZ": self.log_z,
            "min_energy": float(self.pair_counts.min()) / self.N**2,
            "max_energy": float(self.pair_counts.max()) / self.N**2,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def build_ensemble(indexing: StateIndexing, beta: float) -> GibbsEnsemble:
    if beta < 0:
        raise ValueError("beta must be non-negative")
    k = np.empty(indexing.total, dtype=np.int64)
    for start, cfg in indexing.chunks():
        k[start : start + len(cfg)] = pair_count(cfg)
    logw = -beta * k / indexing.N
    shift = logw.max()
    w = np.exp(logw - shift)
    s = math.fsum(w)
    return GibbsEnsemble(
        indexing=indexing,
        beta=float(beta),
        pair_counts=k,
        log_z=shift + math.log(s),
        probabilities=w / s,
    )


def gibbs_ensemble(N: int, beta: float, budget_bytes: int = DEFAULT_BUDGET_BYTES) -> GibbsEnsemble:
    return build_ensemble(enumerate_states(N, budget_bytes), beta)


Observable = Callable[[NDArray[np.int8]], NDArray] | NDArray


def _observable_moments(ens: GibbsEnsemble, f: Observable) -> tuple[float, float]:
    p = ens.probabilities
    if not callable(f):
        vals = np.broadcast_to(np.asarray(f, dtype=float), p.shape)
        mean = float(np.dot(p, vals))
        return mean, float(np.dot(p, (vals - mean) ** 2))
    # one pass over index chunks; shifted sums keep the variance accurate
    shift = None
    s1 = s2 = 0.0
    for start, cfg in ens.indexing.chunks():
        vals = np.broadcast_to(np.asarray(f(cfg), dtype=float), (len(cfg),))
        if shift is None:
            shift = float(vals[0])
        d = vals - shift
        pw = p[start : start + len(cfg)]
        s1 += float(np.dot(pw, d))
        s2 += float(np.dot(pw, d * d))
    return shift + s1, max(s2 - s1 * s1, 0.0)


def expectation(ens: GibbsEnsemble, f: Observable) -> float:
    """``nu(f)`` for an array over states or a batched callback on configurations."""
    return _observable_moments(ens, f)[0]


def variance(ens: GibbsEnsemble, f: Observable) -> float:
    """``nu(f, f)``."""
    return _observable_moments(ens, f)[1]


def sample_indices(probabilities: NDArray, rng: np.random.Generator, size: int) -> NDArray[np.int64]:
    """I.i.d. draws from a probability vector by CDF inversion."""
    cdf = np.cumsum(probabilities)
    u = rng.random(size) * cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1)


def exact_sample(ens: GibbsEnsemble, rng: np.random.Generator, size: int | None = None):
    """Exact draw(s) from ``nu_N^beta``.

    Returns a :class:`SpeciesConfiguration` when ``size`` is None, otherwise an
    array of state indices.
    """
    if size is None:
        return ens.indexing.configuration(int(sample_indices(ens.probabilities, rng, 1)[0]))
    return sample_indices(ens.probabilities, rng, size)
