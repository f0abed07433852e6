"""Density profiles on the unit torus and the free-energy functional.

A profile stores the three channels on the grid ``r_j = j/M``.  For
piecewise-constant profiles each sample is the value on the cell
``[j/M, (j+1)/M)``; the energy double integral is then evaluated exactly.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .lattice import ConfigurationError, SpeciesConfiguration

PIECEWISE = "piecewise-constant"
SMOOTH = "smooth-samples"
SIMPLEX_TOL = 1e-10
_LOG_FLOOR = 1e-300


class ProfileError(ValueError):
    pass


def critical_beta() -> float:
    """Inverse temperature at which the homogeneous profile loses stability."""
    return 2.0 * math.pi * math.sqrt(3.0)


@dataclass(frozen=True)
class DensityProfile:
    """Channels ``rho[alpha, j]`` for alpha in (A, B, C) on an M-point grid."""

    rho: NDArray[np.float64]
    representation: str = SMOOTH

    def __post_init__(self):
        r = np.array(self.rho, dtype=float)
        if r.ndim != 2 or r.shape[0] != 3 or r.shape[1] < 1:
            raise ProfileError(f"expected a (3, M) array, got shape {r.shape}")
        if self.representation not in (PIECEWISE, SMOOTH):
            raise ProfileError(f"unknown representation {self.representation!r}")
        if r.min() < -SIMPLEX_TOL or r.max() > 1 + SIMPLEX_TOL:
            raise ProfileError("channel values must lie in [0, 1]")
        if np.abs(r.sum(axis=0) - 1.0).max() > SIMPLEX_TOL:
            raise ProfileError("channels must sum to 1 at every grid point")
        r.setflags(write=False)
        object.__setattr__(self, "rho", r)

    @property
    def M(self) -> int:
        return self.rho.shape[1]

    @property
    def grid(self) -> NDArray[np.float64]:
        return np.arange(self.M) / self.M

    def means(self) -> NDArray[np.float64]:
        return self.rho.mean(axis=1)

    def in_mean_class(self, tol: float = 1e-10) -> bool:
        """Whether every channel averages to 1/3."""
        return bool(np.abs(self.means() - 1.0 / 3.0).max() <= tol)

    def shift(self, k: int) -> DensityProfile:
        """Profile translated by ``k/M``: new[j] = old[j - k]."""
        return DensityProfile(np.roll(self.rho, k, axis=1), self.representation)

    def relabel(self) -> DensityProfile:
        """Cyclic species permutation A -> B -> C -> A."""
        return DensityProfile(np.roll(self.rho, 1, axis=0), self.representation)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        buf.write(f"# schema=1 representation={self.representation}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "rho_A", "rho_B", "rho_C"])
        for j in range(self.M):
            w.writerow([repr(j / self.M)] + [repr(float(v)) for v in self.rho[:, j]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source: str | Path) -> DensityProfile:
        text = Path(source).read_text() if isinstance(source, Path) or "\n" not in str(source) else str(source)
        rep = SMOOTH
        rows = []
        for line in text.splitlines():
            if line.startswith("#"):
                if "representation=" in line:
                    rep = line.split("representation=", 1)[1].strip()
                continue
            if not line.strip() or line.startswith("r,"):
                continue
            rows.append([float(v) for v in line.split(",")[1:4]])
        return cls(np.array(rows).T, rep)


def homogeneous(M: int = 1) -> DensityProfile:
    return DensityProfile(np.full((3, M), 1.0 / 3.0), PIECEWISE)


def empirical_density(zeta: SpeciesConfiguration) -> DensityProfile:
    """Piecewise-constant profile with cell x holding the occupations of site x."""
    if not zeta.is_equal_density():
        raise ConfigurationError(f"{zeta} is not equal-density")
    occ = np.stack([(zeta.sites == a) for a in range(3)]).astype(float)
    return DensityProfile(occ, PIECEWISE)


def entropy(rho: DensityProfile) -> float:
    """Midpoint-rule relative entropy against the uniform profile (0 log 0 = 0)."""
    r = rho.rho
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(r > 0, r * np.log(np.maximum(r, _LOG_FLOOR) * 3.0), 0.0)
    return float(terms.sum() / rho.M)


def _ordered_pair_sum(a: NDArray, b: NDArray) -> float:
    """``sum_{i<j} a_i b_j + 1/2 sum_i a_i b_i``."""
    before = np.cumsum(a) - a
    return float(np.dot(before, b) + 0.5 * np.dot(a, b))


def energy(rho: DensityProfile) -> float:
    """Cell-pair evaluation of the ordered double integral.

    Exact for piecewise-constant channels; for smooth samples the same sum
    is a second-order quadrature.
    """
    A, B, C = rho.rho
    total = _ordered_pair_sum(A, C) + _ordered_pair_sum(B, A) + _ordered_pair_sum(C, B)
    return total / rho.M**2


def free_energy(rho: DensityProfile, beta: float) -> float:
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return entropy(rho) + beta * energy(rho)


def el_rhs(point, beta: float) -> NDArray[np.float64]:
    """Right-hand side of the stationary-profile ODE at one simplex point."""
    a, b, c = (float(v) for v in point)
    return np.array([beta * a * (c - b), beta * b * (a - c), beta * c * (b - a)])
