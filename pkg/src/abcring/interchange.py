"""Perturbed interchange process on the symmetric group.

Permutations are arrays of values ``1..N`` in one-line notation, ranked
lexicographically through the Lehmer code.  An energy oracle supplies integer
*levels* with ``E = unit * level``, which keeps detailed balance checkable in
exact integer arithmetic, exactly as for the ABC generators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numpy.typing import NDArray

from .generators import SparseGenerator, _assemble, dirichlet_form
from .lattice import ConfigurationError, SpeciesConfiguration, exchange_delta, pair_count
from .statespace import DEFAULT_BUDGET_BYTES, BudgetExceeded, GibbsEnsemble, enumerate_states

DEFAULT_MAX_N = 7


class PermutationError(ValueError):
    pass


class Permutation:
    """Bijection of ``{1..N}`` stored in one-line notation."""

    __slots__ = ("_m",)

    def __init__(self, mapping):
        m = np.array(mapping, dtype=np.int64).reshape(-1)
        if m.size == 0 or not np.array_equal(np.sort(m), np.arange(1, m.size + 1)):
            raise PermutationError(f"{list(m)} is not a permutation of 1..{m.size}")
        m.setflags(write=False)
        self._m = m

    @classmethod
    def identity(cls, N: int) -> Permutation:
        return cls(np.arange(1, N + 1))

    @property
    def mapping(self) -> NDArray[np.int64]:
        return self._m

    @property
    def N(self) -> int:
        return int(self._m.size)

    def __call__(self, x: int) -> int:
        return int(self._m[x - 1])

    def sign(self) -> int:
        seen = np.zeros(self.N, bool)
        s = 1
        for i in range(self.N):
            if not seen[i]:
                j, length = i, 0
                while not seen[j]:
                    seen[j] = True
                    j = self._m[j] - 1
                    length += 1
                if length % 2 == 0:
                    s = -s
        return s

    def __eq__(self, other):
        return isinstance(other, Permutation) and np.array_equal(self._m, other._m)

    def __hash__(self):
        return hash(self._m.tobytes())

    def __repr__(self):
        return f"Permutation({list(map(int, self._m))})"


def apply_transposition(sigma: Permutation, bond) -> Permutation:
    """``sigma^{x,y}``: the values at positions x and y (1-based) exchanged."""
    x, y = bond
    if x == y:
        raise PermutationError("a transposition needs two distinct vertices")
    m = sigma.mapping.copy()
    m[[x - 1, y - 1]] = m[[y - 1, x - 1]]
    return Permutation(m)


# ---------------------------------------------------------------- ranking


def all_permutations(N: int) -> NDArray[np.int64]:
    """All of S_N in lexicographic order, one row per permutation."""
    if N == 1:
        return np.ones((1, 1), dtype=np.int64)
    sub = all_permutations(N - 1)
    blocks = []
    for first in range(1, N + 1):
        rest = sub + (sub >= first)
        blocks.append(np.hstack([np.full((len(sub), 1), first), rest]))
    return np.vstack(blocks)


def rank_permutations(perms) -> NDArray[np.int64]:
    """Lexicographic ranks via the Lehmer code (batched)."""
    p = np.atleast_2d(np.asarray(perms, dtype=np.int64))
    N = p.shape[1]
    fact = np.array([math.factorial(N - 1 - i) for i in range(N)], dtype=np.int64)
    r = np.zeros(p.shape[0], dtype=np.int64)
    for i in range(N):
        smaller = (p[:, i + 1 :] < p[:, i : i + 1]).sum(axis=1)
        r += smaller * fact[i]
    return r


def unrank_permutation(r: int, N: int) -> Permutation:
    items = list(range(1, N + 1))
    out = []
    for i in range(N):
        f = math.factorial(N - 1 - i)
        q, r = divmod(r, f)
        out.append(items.pop(q))
    return Permutation(out)


# ---------------------------------------------------------------- oracles


def colorblind_sites(perms) -> NDArray[np.int8]:
    """Residue map ``sigma(x) mod 3``: 1 -> A, 2 -> B, 0 -> C (batched)."""
    return ((np.asarray(perms) - 1) % 3).astype(np.int8)


def colorblind_project(sigma: Permutation) -> SpeciesConfiguration:
    if sigma.N % 3:
        raise ConfigurationError(f"colorblind projection needs N divisible by 3, got {sigma.N}")
    return SpeciesConfiguration(colorblind_sites(sigma.mapping))


class EnergyOracle:
    """Energy ``E = unit * level`` with integer levels.

    Subclasses implement :meth:`levels` on batches of permutation rows.
    ``bound`` is the declared uniform bound on ``|E(sigma^a) - E(sigma)|``.
    """

    name = "abstract"
    unit = 1.0
    bound = 0.0

    def levels(self, perms) -> NDArray[np.int64]:
        raise NotImplementedError

    def energy(self, sigma: Permutation) -> float:
        return self.unit * int(self.levels(sigma.mapping)[0])

    def level_gradient(self, sigma: Permutation, bond) -> int:
        return int(self.levels(apply_transposition(sigma, bond).mapping)[0]
                   - self.levels(sigma.mapping)[0])

    def gradient(self, sigma: Permutation, bond) -> float:
        return self.unit * self.level_gradient(sigma, bond)


class ZeroOracle(EnergyOracle):
    """No energy: the pure interchange process."""

    name = "zero"

    def levels(self, perms):
        return np.zeros(np.atleast_2d(perms).shape[0], dtype=np.int64)


class ColorblindOracle(EnergyOracle):
    """``E = N H_N`` of the colour-blind image, i.e. ``K / N``.

    For N not divisible by 3 the image is not equal-density; the pair count
    is then taken from origin 0.
    """

    name = "colorblind"
    bound = 1.0

    def __init__(self, N: int):
        self.N = N
        self.unit = 1.0 / N

    def levels(self, perms):
        return np.atleast_1d(pair_count(colorblind_sites(np.atleast_2d(perms))))

    def level_gradient(self, sigma: Permutation, bond) -> int:
        x, y = sorted(bond)
        return int(exchange_delta(colorblind_sites(sigma.mapping), x - 1, y - 1))


def colorblind_energy_oracle(N: int) -> ColorblindOracle:
    return ColorblindOracle(N)


def get_oracle(name: str, N: int) -> EnergyOracle:
    if name == "zero":
        return ZeroOracle()
    if name == "colorblind":
        return ColorblindOracle(N)
    raise ValueError(f"unknown oracle {name!r} (expected 'zero' or 'colorblind')")


def transposition_rate(sigma: Permutation, bond, beta: float, oracle: EnergyOracle) -> float:
    """``(1/N) exp(-(beta/2) grad_a E)``."""
    return math.exp(-0.5 * beta * oracle.gradient(sigma, bond)) / sigma.N


def rate_identity_residual(sigma: Permutation, a, b, beta: float, oracle: EnergyOracle) -> float:
    """``c_a (c_b + c_b^a) - c_b (c_a + c_a^b)`` for disjoint bonds a, b."""
    if set(a) & set(b):
        raise ValueError("bonds must be disjoint")
    ca = transposition_rate(sigma, a, beta, oracle)
    cb = transposition_rate(sigma, b, beta, oracle)
    cb_a = transposition_rate(apply_transposition(sigma, a), b, beta, oracle)
    ca_b = transposition_rate(apply_transposition(sigma, b), a, beta, oracle)
    return ca * (cb + cb_a) - cb * (ca + ca_b)


# ---------------------------------------------------------------- generator


def _gibbs(levels: NDArray, unit: float, beta: float) -> NDArray[np.float64]:
    logw = -beta * unit * levels
    w = np.exp(logw - logw.max())
    return w / math.fsum(w)


def build_interchange_generator(
    N: int, beta: float, oracle: EnergyOracle | None = None, *,
    max_N: int = DEFAULT_MAX_N, budget_bytes: int = DEFAULT_BUDGET_BYTES,
) -> SparseGenerator:
    """Generator of the perturbed interchange process on S_N (lexicographic order).

    States beyond ``max_N`` (default 7) need an explicit override.
    """
    if N > max_N:
        raise BudgetExceeded(f"interchange generator on S_{N} (max_N={max_N})",
                             math.factorial(N) * N * (N - 1) * 24, budget_bytes)
    oracle = ZeroOracle() if oracle is None else oracle
    total = math.factorial(N)
    entries = total * N * (N - 1) // 2
    if entries * 48 > budget_bytes:
        raise BudgetExceeded(f"interchange generator on S_{N}", entries * 48, budget_bytes)
    perms = all_permutations(N)
    levels = oracle.levels(perms)
    idx = np.arange(total)
    rows, cols, exps = [], [], []
    for x in range(N):
        for y in range(x + 1, N):
            swapped = perms.copy()
            swapped[:, [x, y]] = swapped[:, [y, x]]
            target = rank_permutations(swapped)
            rows.append(idx)
            cols.append(target)
            exps.append(-(levels[target] - levels))
    return _assemble(f"interchange-{oracle.name}", levels, _gibbs(levels, oracle.unit, beta),
                     total, rows, cols, exps, 0.5 * beta * oracle.unit, 1.0 / N)


S3_DISPLAY_ORDER = [0, 1, 3, 2, 4, 5]  # 123, 132, 231, 213, 312, 321 as lexicographic ranks


def s3_matrix_exact() -> list[list[Fraction]]:
    """Interchange generator on S_3 at beta = 0 in exact rationals (lexicographic order)."""
    perms = all_permutations(3)
    n = len(perms)
    mat = [[Fraction(0)] * n for _ in range(n)]
    for i, p in enumerate(perms):
        for x in range(3):
            for y in range(x + 1, 3):
                q = p.copy()
                q[[x, y]] = q[[y, x]]
                j = int(rank_permutations(q)[0])
                mat[i][j] += Fraction(1, 3)
                mat[i][i] -= Fraction(1, 3)
    return mat


# ---------------------------------------------------------------- checks


@dataclass
class GapCharacterization:
    lhs: float  # pi[(G f)^2]
    rhs: float  # k * E(f, f)
    holds: bool


def gap_characterization_check(gen: SparseGenerator, f, k: float, rtol: float = 1e-10) -> GapCharacterization:
    """``pi[(G f)^2] >= k E(f, f)``."""
    f = np.asarray(f, dtype=float)
    gf = gen.apply(f)
    lhs = float(np.dot(gen.probabilities, gf * gf))
    rhs = k * dirichlet_form(gen, f)
    return GapCharacterization(lhs, rhs, lhs >= rhs - rtol * max(abs(rhs), 1e-300))


@dataclass
class PushforwardReport:
    N: int
    beta: float
    max_discrepancy: float
    fiber_sizes: NDArray[np.int64]
    exact_levels: bool  # every fiber sits at a single pair count equal to the image's


def pushforward_check(N: int, beta: float, ensemble: GibbsEnsemble | None = None) -> PushforwardReport:
    """Compare fibre sums of the permutation Gibbs measure with the ABC Gibbs measure."""
    if N % 3:
        raise ConfigurationError("pushforward needs N divisible by 3")
    if N > DEFAULT_MAX_N:
        raise BudgetExceeded(f"enumeration of S_{N}", math.factorial(N) * N * 8, DEFAULT_BUDGET_BYTES)
    from .statespace import build_ensemble

    ens = ensemble if ensemble is not None else build_ensemble(enumerate_states(N), beta)
    oracle = ColorblindOracle(N)
    perms = all_permutations(N)
    levels = oracle.levels(perms)
    pi = _gibbs(levels, oracle.unit, beta)
    images = ens.indexing.rank(colorblind_sites(perms))
    push = np.bincount(images, weights=pi, minlength=ens.total)
    sizes = np.bincount(images, minlength=ens.total)
    exact = bool(np.array_equal(levels, ens.pair_counts[images]))
    return PushforwardReport(N, beta, float(np.abs(push - ens.probabilities).max()), sizes, exact)


def marginal_probability(gen: SparseGenerator, N: int) -> float:
    """``pi(sigma(1) = 1)``."""
    perms = all_permutations(N)
    return float(gen.probabilities[perms[:, 0] == 1].sum())
