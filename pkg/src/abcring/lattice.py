"""Microscopic configurations of the ABC model on the ring Z_N.

Sites hold one of three species coded ``A=0, B=1, C=2``.  The Hamiltonian is
kept as an exact integer *pair count*

    K(zeta) = #{x < y : (zeta(x), zeta(y)) in {(A,C), (B,A), (C,B)}}

so that ``H_N = K / N**2``.  All rate and weight exponents used elsewhere in
the package are integer multiples of ``beta / (2N)`` built from K.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np
from numpy.typing import NDArray

SPECIES = "ABC"
A, B, C = 0, 1, 2

# _WIN[a, b] = 1 when an `a` to the left of a `b` costs one unit of energy.
_WIN = np.zeros((3, 3), dtype=np.int64)
_WIN[A, C] = _WIN[B, A] = _WIN[C, B] = 1
# Antisymmetric part: G[a, b] = W[a, b] - W[b, a].
G = _WIN - _WIN.T


class ConfigurationError(ValueError):
    """Raised for configurations outside the domain of an operation."""


class SpeciesConfiguration:
    """Immutable ring configuration ``zeta``.

    Parameters
    ----------
    sites : sequence of int or str
        Species codes (0, 1, 2) or a string over ``{A, B, C}``.
    """

    __slots__ = ("_sites",)

    def __init__(self, sites: Iterable[int] | str | NDArray):
        if isinstance(sites, str):
            try:
                arr = np.array([SPECIES.index(ch) for ch in sites], dtype=np.int8)
            except ValueError:
                raise ConfigurationError(f"unknown species in {sites!r}") from None
        else:
            arr = np.array(sites, dtype=np.int8).reshape(-1)
            if arr.size and (arr.min() < 0 or arr.max() > 2):
                raise ConfigurationError("species codes must be 0, 1 or 2")
        if arr.size == 0:
            raise ConfigurationError("a configuration needs at least one site")
        arr.setflags(write=False)
        self._sites = arr

    @classmethod
    def parse(cls, text: str) -> SpeciesConfiguration:
        return cls(text.strip())

    @property
    def sites(self) -> NDArray[np.int8]:
        return self._sites

    @property
    def N(self) -> int:
        return int(self._sites.size)

    def counts(self) -> tuple[int, int, int]:
        c = np.bincount(self._sites, minlength=3)
        return int(c[0]), int(c[1]), int(c[2])

    def is_equal_density(self) -> bool:
        n = self.N
        return n % 3 == 0 and self.counts() == (n // 3,) * 3

    def __str__(self) -> str:
        return "".join(SPECIES[s] for s in self._sites)

    def __repr__(self) -> str:
        return f"SpeciesConfiguration('{self}')"

    def __len__(self) -> int:
        return self.N

    def __getitem__(self, x: int) -> int:
        return int(self._sites[x % self.N])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SpeciesConfiguration):
            return NotImplemented
        return np.array_equal(self._sites, other._sites)

    def __hash__(self) -> int:
        return hash(self._sites.tobytes())


def _require_equal_density(zeta: SpeciesConfiguration) -> None:
    if not zeta.is_equal_density():
        raise ConfigurationError(
            f"{zeta} is not equal-density (N={zeta.N}, counts={zeta.counts()})"
        )


def exchange(zeta: SpeciesConfiguration, x: int, y: int) -> SpeciesConfiguration:
    """Return ``zeta^{x,y}``: the particles at sites x and y swapped."""
    n = zeta.N
    x, y = x % n, y % n
    if x == y:
        raise ConfigurationError("exchange needs two distinct sites")
    s = zeta.sites.copy()
    s[x], s[y] = s[y], s[x]
    return SpeciesConfiguration(s)


def translate(zeta: SpeciesConfiguration, k: int) -> SpeciesConfiguration:
    """Microscopic translation: ``(theta^k zeta)(x) = zeta(x - k)``."""
    return SpeciesConfiguration(np.roll(zeta.sites, k))


def occupation(zeta: SpeciesConfiguration, species: int | str) -> NDArray[np.int8]:
    """Occupation field ``eta_alpha``."""
    if isinstance(species, str):
        species = SPECIES.index(species)
    return (zeta.sites == species).astype(np.int8)


def pair_count(sites: NDArray) -> NDArray[np.int64] | int:
    """Integer pair count K for one configuration or a batch (rows).

    Evaluated from origin 0 without any density constraint.
    """
    s = np.asarray(sites)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    n_rows = s.shape[0]
    rows = np.arange(n_rows)
    before = np.zeros((n_rows, 3), dtype=np.int64)  # species counts left of x
    k = np.zeros(n_rows, dtype=np.int64)
    for x in range(s.shape[1]):
        col = s[:, x].astype(np.intp)
        # a site holding species b gains W[a, b] for every a to its left
        k += (before @ _WIN)[rows, col]
        before[rows, col] += 1
    return int(k[0]) if single else k


def energy_count(zeta: SpeciesConfiguration) -> int:
    """Exact ``N**2 * H_N(zeta)``; requires equal density."""
    _require_equal_density(zeta)
    return pair_count(zeta.sites)


def hamiltonian(zeta: SpeciesConfiguration) -> float:
    """Mean-field Hamiltonian ``H_N``."""
    return energy_count(zeta) / zeta.N**2


def exchange_delta(sites: NDArray, x: int, y: int) -> NDArray[np.int64] | int:
    """Change of the pair count under the exchange of sites x < y (batched).

    Only the pair (x, y) and the sites strictly between them contribute:
    ``G[t, s] + sum_{x<z<y} (G[t, u_z] - G[s, u_z])`` with s, t the species at
    x, y.  Evaluated from origin 0, so it is exact for any configuration.
    """
    s_arr = np.atleast_2d(np.asarray(sites))
    if x > y:
        x, y = y, x
    s = s_arr[:, x].astype(np.int64)
    t = s_arr[:, y].astype(np.int64)
    mid = s_arr[:, x + 1 : y]
    counts = np.stack([(mid == a).sum(axis=1) for a in range(3)], axis=1)
    d = G[t, s] + np.einsum("na,na->n", G[t] - G[s], counts)
    return int(d[0]) if np.asarray(sites).ndim == 1 else d


def exchange_delta_count(zeta: SpeciesConfiguration, x: int, y: int) -> int:
    """Integer form of the exchange gradient: ``N**2 * (H(zeta^{x,y}) - H(zeta))``.

    Nearest-neighbour bonds (including the wrap bond {N-1, 0}) cost O(1): by
    translation invariance the bond can be moved to the interior, where only
    the swapped pair itself changes the count.
    """
    _require_equal_density(zeta)
    n = zeta.N
    x, y = x % n, y % n
    if x == y:
        raise ConfigurationError("exchange needs two distinct sites")
    if (y - x) % n == 1:
        return int(G[zeta.sites[y], zeta.sites[x]])
    if (x - y) % n == 1:
        return int(G[zeta.sites[x], zeta.sites[y]])
    return exchange_delta(zeta.sites, x, y)


def exchange_gradient(zeta: SpeciesConfiguration, x: int, y: int) -> float:
    """``H_N(zeta^{x,y}) - H_N(zeta)``."""
    return exchange_delta_count(zeta, x, y) / zeta.N**2
