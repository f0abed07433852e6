"""Sparse generators of the ring and complete-graph ABC dynamics.

Every stored transition carries an integer *rate exponent* ``e`` with

    rate = prefactor * exp(scale * e),      scale = beta / (2N),

and every state an integer *level* (the pair count K) with unnormalised
log-weight ``-2 * scale * level``.  Detailed balance is then the integer
identity ``-2 K_i + e_ij == -2 K_j + e_ji`` and can be checked exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from .lanczos import top_eigenpair
from .lattice import _WIN, exchange_delta
from .statespace import DEFAULT_BUDGET_BYTES, BudgetExceeded, GibbsEnsemble

DENSE_CAP = 5000


class GapError(RuntimeError):
    """Spectral computation failed (non-simple zero eigenvalue, no convergence)."""


@dataclass(frozen=True)
class SparseGenerator:
    """Off-diagonal rates of a reversible continuous-time chain, in row-sorted COO form."""

    graph: str
    dimension: int
    rows: NDArray[np.int64] = field(repr=False)
    cols: NDArray[np.int64] = field(repr=False)
    rates: NDArray[np.float64] = field(repr=False)
    exponents: NDArray[np.int64] = field(repr=False)
    levels: NDArray[np.int64] = field(repr=False)
    probabilities: NDArray[np.float64] = field(repr=False)
    scale: float
    prefactor: float

    @property
    def nnz(self) -> int:
        return int(self.rates.size)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Off-diagonal rate matrix Q (row = origin state)."""
        indptr = np.zeros(self.dimension + 1, dtype=np.int64)
        np.add.at(indptr, self.rows + 1, 1)
        return sp.csr_matrix(
            (self.rates, self.cols, np.cumsum(indptr)), shape=(self.dimension,) * 2
        )

    @cached_property
    def exit_rates(self) -> NDArray[np.float64]:
        return np.bincount(self.rows, weights=self.rates, minlength=self.dimension)

    def apply(self, f: NDArray) -> NDArray:
        """``(L f)(i) = sum_j q_ij (f_j - f_i)``."""
        f = np.asarray(f, dtype=float)
        return self.matrix @ f - self.exit_rates * f

    def dense(self) -> NDArray[np.float64]:
        """Full generator matrix including the diagonal."""
        m = self.matrix.toarray()
        m[np.diag_indices(self.dimension)] = -self.exit_rates
        return m

    def symmetrized(self) -> sp.csr_matrix:
        """``S = W^{1/2} L W^{-1/2}``: off-diagonal ``q_ij sqrt(w_i / w_j)``."""
        # log w = -2 scale K, so sqrt(w_i / w_j) = exp(-scale (K_i - K_j))
        data = self.rates * np.exp(-self.scale * (self.levels[self.rows] - self.levels[self.cols]))
        indptr = self.matrix.indptr
        s = sp.csr_matrix((data, self.cols, indptr), shape=(self.dimension,) * 2)
        return (s - sp.diags(self.exit_rates)).tocsr()

    def to_coo_text(self) -> str:
        return "".join(f"{r} {c} {q:.17g}\n" for r, c, q in zip(self.rows, self.cols, self.rates))


def _assemble(graph, ens_levels, probs, n, rows, cols, exps, scale, prefactor):
    rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    exps = np.concatenate(exps) if exps else np.zeros(0, np.int64)
    order = np.lexsort((cols, rows))
    rows, cols, exps = rows[order], cols[order], exps[order]
    if rows.size > 1:
        dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
        if dup.any():
            raise AssertionError("two bonds lead to the same target state")
    rates = prefactor * np.exp(scale * exps)
    return SparseGenerator(
        graph=graph,
        dimension=n,
        rows=rows,
        cols=cols,
        rates=rates,
        exponents=exps,
        levels=ens_levels,
        probabilities=probs,
        scale=scale,
        prefactor=prefactor,
    )


def _check_budget(what, entries, budget):
    required = entries * 48
    if required > budget:
        raise BudgetExceeded(what, required, budget)


def ring_rate_exponent(s: int | NDArray, t: int | NDArray):
    """Exponent (units beta/2N) of the rate for the ordered pair (s, t) at (x, x+1).

    +1 for (A,C), (C,B), (B,A) (the swap lowers the pair count), -1 for the
    reversed pairs, 0 for equal species.
    """
    s = np.asarray(s)
    t = np.asarray(t)
    e = np.where(_WIN[s, t] == 1, 1, -1)
    return np.where(s == t, 0, e)


def ring_rate(zeta, x: int, beta: float) -> float:
    """Nearest-neighbour rate ``c_x`` of the bond (x, x+1)."""
    n = zeta.N
    e = int(ring_rate_exponent(zeta[x], zeta[(x + 1) % n]))
    return math.exp(beta * e / (2 * n))


def complete_rate(zeta, x: int, y: int, beta: float) -> float:
    """Long-jump rate ``c_{x,y} = N^{-1} exp(-(beta N / 2) grad_{x,y} H_N)``."""
    from .lattice import exchange_delta_count

    n = zeta.N
    dk = exchange_delta_count(zeta, x, y)
    return math.exp(-beta * dk / (2 * n)) / n


def build_ring_generator(
    ens: GibbsEnsemble, budget_bytes: int = DEFAULT_BUDGET_BYTES
) -> SparseGenerator:
    ix = ens.indexing
    n = ix.N
    _check_budget(f"ring generator N={n}", n * ix.total, budget_bytes)
    rows, cols, exps = [], [], []
    for start, cfg in ix.chunks():
        idx = np.arange(start, start + len(cfg))
        for x in range(n):
            y = (x + 1) % n
            s, t = cfg[:, x], cfg[:, y]
            mask = s != t
            if not mask.any():
                continue
            swapped = cfg[mask].copy()
            swapped[:, [x, y]] = swapped[:, [y, x]]
            rows.append(idx[mask])
            cols.append(ix.rank(swapped))
            exps.append(ring_rate_exponent(s[mask], t[mask]).astype(np.int64))
    return _assemble(
        "ring", ens.pair_counts, ens.probabilities, ix.total, rows, cols, exps,
        ens.beta / (2 * n), 1.0,
    )


def build_complete_generator(
    ens: GibbsEnsemble, budget_bytes: int = DEFAULT_BUDGET_BYTES
) -> SparseGenerator:
    ix = ens.indexing
    n = ix.N
    _check_budget(f"complete generator N={n}", n * (n - 1) // 2 * ix.total, budget_bytes)
    rows, cols, exps = [], [], []
    for start, cfg in ix.chunks():
        idx = np.arange(start, start + len(cfg))
        for x in range(n):
            for y in range(x + 1, n):
                mask = cfg[:, x] != cfg[:, y]
                if not mask.any():
                    continue
                sub = cfg[mask]
                dk = exchange_delta(sub, x, y)
                swapped = sub.copy()
                swapped[:, [x, y]] = swapped[:, [y, x]]
                rows.append(idx[mask])
                cols.append(ix.rank(swapped))
                exps.append(-np.asarray(dk, dtype=np.int64))
    return _assemble(
        "complete", ens.pair_counts, ens.probabilities, ix.total, rows, cols, exps,
        ens.beta / (2 * n), 1.0 / n,
    )


def _transpose_positions(gen: SparseGenerator) -> NDArray[np.int64]:
    key = gen.rows * gen.dimension + gen.cols
    tkey = gen.cols * gen.dimension + gen.rows
    pos = np.searchsorted(key, tkey)
    pos = np.minimum(pos, key.size - 1)
    if not np.array_equal(key[pos], tkey):
        raise AssertionError("transition graph is not symmetric")
    return pos


def reversibility_residual(gen: SparseGenerator) -> tuple[int, float]:
    """Detailed-balance residuals.

    Returns the largest integer mismatch of ``-2 K_i + e_ij`` against
    ``-2 K_j + e_ji`` (exact) and the largest floating mismatch of
    ``w_i q_ij - w_j q_ji`` with normalised weights.
    """
    pos = _transpose_positions(gen)
    lhs = -2 * gen.levels[gen.rows] + gen.exponents
    rhs = -2 * gen.levels[gen.cols] + gen.exponents[pos]
    int_res = int(np.abs(lhs - rhs).max()) if lhs.size else 0
    p = gen.probabilities
    flux = p[gen.rows] * gen.rates
    float_res = float(np.abs(flux - flux[pos]).max()) if flux.size else 0.0
    return int_res, float_res


def is_irreducible(gen: SparseGenerator) -> bool:
    n_comp, _ = sp.csgraph.connected_components(gen.matrix, directed=True, connection="strong")
    return n_comp == 1


def dirichlet_form(gen: SparseGenerator, f: NDArray) -> float:
    """``(1/2) sum_i nu_i sum_j q_ij (f_j - f_i)^2``."""
    f = np.asarray(f, dtype=float)
    d = f[gen.cols] - f[gen.rows]
    return 0.5 * float(np.dot(gen.probabilities[gen.rows] * gen.rates, d * d))


def dirichlet_form_quadratic(gen: SparseGenerator, f: NDArray) -> float:
    """``nu(f (-L) f)`` evaluated through the generator action."""
    f = np.asarray(f, dtype=float)
    return -float(np.dot(gen.probabilities, f * gen.apply(f)))


def _variance(p: NDArray, f: NDArray) -> float:
    f = np.asarray(f, dtype=float)
    mean = float(np.dot(p, f))
    return float(np.dot(p, (f - mean) ** 2))


def rayleigh_quotient(gen: SparseGenerator, f: NDArray) -> float:
    """Dirichlet form over variance; an upper bound on the gap."""
    var = _variance(gen.probabilities, f)
    f = np.asarray(f, dtype=float)
    scale = float(np.dot(gen.probabilities, f * f))
    if var <= 1e-14 * max(scale, 1e-300):
        raise ValueError("rayleigh_quotient needs a function with positive variance")
    return dirichlet_form(gen, f) / var


@dataclass
class GapResult:
    gap: float
    method: str
    residual: float
    iterations: int
    wall_time_s: float


def dense_spectrum(gen: SparseGenerator) -> tuple[NDArray, NDArray]:
    """All eigenvalues (descending) and L2(nu)-orthonormal eigenfunctions."""
    if gen.dimension > DENSE_CAP * 4:
        raise BudgetExceeded("dense spectrum", gen.dimension**2 * 8, DENSE_CAP**2 * 128)
    s = gen.symmetrized().toarray()
    vals, vecs = np.linalg.eigh(0.5 * (s + s.T))
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    funcs = vecs / np.sqrt(gen.probabilities)[:, None]
    return vals, funcs


def spectral_gap_result(
    gen: SparseGenerator,
    method: str = "auto",
    *,
    dense_cap: int = DENSE_CAP,
    tol: float = 1e-10,
    maxiter: int = 100_000,
) -> GapResult:
    """Spectral gap of a reversible generator.

    ``dense`` diagonalises the symmetrised matrix; ``iterative`` runs
    thick-restart Lanczos on ``S + cI`` with the ground state ``sqrt(nu)``
    deflated.  ``auto`` picks dense up to ``dense_cap`` states.
    """
    t0 = time.perf_counter()
    if method == "auto":
        method = "dense" if gen.dimension <= dense_cap else "iterative"
    if method == "dense":
        if gen.dimension > dense_cap:
            raise BudgetExceeded(
                f"dense eigensolve of {gen.dimension} states", gen.dimension**2 * 8,
                dense_cap**2 * 8,
            )
        vals, _ = dense_spectrum(gen)
        scale = max(1.0, float(gen.exit_rates.max()))
        if abs(vals[0]) > 1e-9 * scale or vals[1] > -1e-9 * scale:
            raise GapError(f"zero eigenvalue is not simple: top eigenvalues {vals[:3]}")
        return GapResult(float(-vals[1]), "dense", float(abs(vals[0])), 1, time.perf_counter() - t0)
    if method != "iterative":
        raise ValueError(f"unknown method {method!r}")
    s = gen.symmetrized()
    c = 2.0 * float(gen.exit_rates.max())
    ground = np.sqrt(gen.probabilities)
    ground /= np.linalg.norm(ground)
    res = top_eigenpair(
        lambda v: s @ v + c * v,
        gen.dimension,
        deflate=ground[None, :],
        tol=tol,
        scale=c,
        maxiter=maxiter,
    )
    gap = c - res.value
    if gap <= 0:
        raise GapError(f"non-positive gap {gap} from the iterative solver")
    return GapResult(gap, "iterative", res.residual, res.matvecs, time.perf_counter() - t0)


def spectral_gap(gen: SparseGenerator, method: str = "auto", **kw) -> float:
    return spectral_gap_result(gen, method, **kw).gap


@dataclass
class ComparisonReport:
    lhs: float
    rhs: float
    holds: bool


def comparison_check(
    ring: SparseGenerator, complete: SparseGenerator, f: NDArray, beta: float
) -> ComparisonReport:
    """Long-jump versus nearest-neighbour Dirichlet forms:
    ``D_complete(f) <= 2 e^{3 beta} N^2 D_ring(f)``."""
    n = int(round(1.0 / complete.prefactor))
    lhs = dirichlet_form(complete, f)
    rhs = 2.0 * math.exp(3.0 * beta) * n**2 * dirichlet_form(ring, f)
    return ComparisonReport(lhs, rhs, lhs <= rhs + 1e-12)
