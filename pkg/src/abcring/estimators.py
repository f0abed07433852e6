"""Error bars and autocorrelation times for correlated time series."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

DEFAULT_BATCHES = 32
MIN_BATCHES = 8


class InsufficientData(ValueError):
    """The series is too short for the requested estimator."""


@dataclass(frozen=True)
class EstimateWithError:
    mean: float
    standard_error: float
    effective_samples: float
    method: str

    def within(self, target: float, k: float = 4.0) -> bool:
        """True when ``target`` lies within ``k`` standard errors of the mean."""
        return abs(self.mean - target) <= k * self.standard_error

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "standard_error": self.standard_error,
            "effective_samples": self.effective_samples,
            "method": self.method,
        }


def batch_means(series, batches: int = DEFAULT_BATCHES) -> EstimateWithError:
    """Mean of a stationary series with a batch-means standard error.

    The series is cut into ``batches`` equal consecutive blocks (a short
    leading remainder is dropped).  Fewer than ``MIN_BATCHES`` blocks, or
    blocks of a single sample, are refused.
    """
    x = np.asarray(series, dtype=float).ravel()
    if batches < MIN_BATCHES:
        raise InsufficientData(f"at least {MIN_BATCHES} batches are required, got {batches}")
    length = x.size // batches
    if length < 2:
        raise InsufficientData(
            f"{x.size} samples cannot fill {batches} batches; run longer "
            f"(need >= {2 * batches})"
        )
    x = x[x.size - length * batches :]
    means = x.reshape(batches, length).mean(axis=1)
    mean = float(means.mean())
    spread = float(np.var(means, ddof=1))
    se = float(np.sqrt(spread / batches))
    naive = float(np.var(x, ddof=1))
    if spread > 0:
        ess = min(float(x.size), naive / spread * batches) if naive > 0 else float(batches)
    else:
        ess = float(x.size)
    return EstimateWithError(mean, se, max(ess, 1.0), f"batch-means(b={batches},len={length})")


def autocorrelation(x: NDArray) -> NDArray[np.float64]:
    """Normalised autocorrelation function via FFT (lags 0..n-1)."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0:
        return np.concatenate([[1.0], np.zeros(n - 1)])
    return acov / acov[0]


def autocorrelation_time(series, spacing: float = 1.0, c: float = 6.0) -> float:
    """Integrated autocorrelation time in the units of ``spacing``.

    ``tau = spacing * (1/2 + sum_{t=1}^{W} rho(t))`` where the window W is the
    first one with ``W >= c * tau(W) / spacing`` (self-consistent windowing).
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 1000:
        raise InsufficientData(f"autocorrelation_time needs >= 1000 samples, got {x.size}")
    rho = autocorrelation(x)
    partial = 0.5 + np.cumsum(rho[1:])
    windows = np.arange(1, x.size)
    ok = np.nonzero(windows >= c * partial)[0]
    if ok.size == 0 or windows[ok[0]] > x.size // 2:
        raise InsufficientData(
            f"autocorrelation window did not converge: tau estimate "
            f"{partial[min(x.size // 2, partial.size - 1)]:.1f} samples over {x.size} samples"
        )
    return float(spacing * partial[ok[0]])
