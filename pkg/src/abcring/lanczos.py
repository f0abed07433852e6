"""Thick-restart (Krylov-Schur) Lanczos for the top of a symmetric spectrum.

Used for spectral gaps of symmetrised generators that are too large for a
dense eigensolve.  Known eigenvectors (the ground state) are deflated by
projecting every Krylov vector onto their orthogonal complement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray


class LanczosNotConverged(RuntimeError):
    def __init__(self, residual: float, matvecs: int):
        self.residual = residual
        self.matvecs = matvecs
        super().__init__(
            f"Lanczos did not converge: residual {residual:.3e} after {matvecs} matvecs"
        )


@dataclass
class LanczosResult:
    value: float
    vector: NDArray[np.float64]
    residual: float
    matvecs: int


def top_eigenpair(
    matvec: Callable[[NDArray], NDArray],
    n: int,
    *,
    deflate: NDArray | None = None,
    tol: float = 1e-10,
    scale: float = 1.0,
    maxiter: int = 100_000,
    ncv: int = 40,
    nkeep: int | None = None,
    rng: np.random.Generator | None = None,
) -> LanczosResult:
    """Largest eigenvalue of a symmetric operator restricted to ``deflate``'s complement.

    Parameters
    ----------
    matvec : callable
        Symmetric linear map on R^n.
    deflate : (d, n) array, optional
        Orthonormal rows spanning a known invariant subspace to exclude.
    tol, scale : float
        Converged when the Ritz residual is at most ``tol * scale``.
    ncv, nkeep : int
        Krylov basis size and number of Ritz vectors kept at each restart.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    d = 0 if deflate is None else deflate.shape[0]
    m = max(2, min(ncv, n - d))
    keep = nkeep if nkeep is not None else m // 2
    keep = max(1, min(keep, m - 1))

    def project(w):
        if deflate is not None:
            w -= deflate.T @ (deflate @ w)
        return w

    V = np.zeros((m + 1, n))
    H = np.zeros((m + 1, m))
    v = project(rng.standard_normal(n))
    V[0] = v / np.linalg.norm(v)
    k = 0
    matvecs = 0
    residual = np.inf
    while True:
        size = m
        for j in range(k, m):
            w = project(np.asarray(matvec(V[j]), dtype=float).copy())
            matvecs += 1
            h = np.zeros(j + 1)
            for _ in range(2):  # classical Gram-Schmidt, repeated once
                c = V[: j + 1] @ w
                w -= V[: j + 1].T @ c
                h += c
            project(w)
            H[: j + 1, j] = h
            b = np.linalg.norm(w)
            if b <= 1e-13 * max(scale, 1.0):
                # invariant subspace reached: the Ritz values are exact
                size = j + 1
                H[j + 1, j] = 0.0
                break
            H[j + 1, j] = b
            V[j + 1] = w / b
        Hm = H[:size, :size]
        theta, U = np.linalg.eigh(0.5 * (Hm + Hm.T))
        order = np.argsort(theta)[::-1]
        theta, U = theta[order], U[:, order]
        coupling = H[size, :size] @ U
        residual = abs(coupling[0])
        if residual <= tol * scale or size < m:
            return LanczosResult(float(theta[0]), U[:, 0] @ V[:size], float(residual), matvecs)
        if matvecs >= maxiter:
            raise LanczosNotConverged(residual, matvecs)
        # thick restart on the leading Ritz vectors
        V[:keep] = U[:, :keep].T @ V[:size]
        V[keep] = V[size]
        H[:] = 0.0
        H[:keep, :keep] = np.diag(theta[:keep])
        H[keep, :keep] = coupling[:keep]
        k = keep
