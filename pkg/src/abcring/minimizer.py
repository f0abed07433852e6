"""Periodic orbits of the stationary-profile ODE and the segregated minimizer.

The ODE ``rho_A' = beta rho_A (rho_C - rho_B)`` (and its cyclic images) is
integrated in logarithmic coordinates ``u = log rho``.  There the channel
product is the linear invariant ``sum(u)``, which any Runge-Kutta method keeps
to round-off; the channel sum ``sum(exp(u)) = 1`` is monitored and steps that
move it by more than ``invariant_tol`` per unit length are rejected.

Alongside ``u`` the integrator carries the quadratures ``int rho_alpha`` and
``int r rho_B`` so periods, channel means and the B moment come out at the
integrator's accuracy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import brentq

from .continuum import DensityProfile, critical_beta, free_energy, homogeneous

RTOL = 1e-11
ATOL = 1e-13
INVARIANT_TOL = 1e-10
PERIOD_TOL = 1e-10

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class StepUnderflow(RuntimeError):
    """The step controller shrank below a usable size (orbit too close to the boundary)."""


class NoReturn(RuntimeError):
    """No return to the Poincare section within the search horizon."""


class BracketError(RuntimeError):
    """The shooting scan could not bracket a period-one orbit."""


@dataclass(frozen=True)
class NoNontrivialSolution:
    """Sentinel: only the homogeneous profile is critical at this beta."""

    beta: float
    reason: str

    def __bool__(self) -> bool:
        return False


def _rhs(r: float, y: NDArray, beta: float) -> NDArray:
    rho = np.exp(y[:3])
    a, b, c = rho
    return np.array([
        beta * (c - b), beta * (a - c), beta * (b - a),
        a, b, c, r * b,
    ])


def _dp_step(r: float, y: NDArray, f0: NDArray, h: float, beta: float):
    """One Dormand-Prince step; returns (y_new, f_new, error_vector)."""
    k = [f0]
    for i in range(1, 7):
        yi = y + h * sum(a * kj for a, kj in zip(_A[i], k) if a)
        k.append(_rhs(r + _C[i] * h, yi, beta))
    y_new = y + h * sum(b * kj for b, kj in zip(_B5, k) if b)
    err = h * sum(e * kj for e, kj in zip(_E, k))
    return y_new, k[6], err


def _channel_sum(y: NDArray) -> float:
    return math.fsum(np.exp(y[:3]))


class _Integrator:
    """Adaptive DP5(4) with invariant-based step rejection."""

    def __init__(self, beta: float, rtol: float = RTOL, atol: float = ATOL,
                 invariant_tol: float = INVARIANT_TOL, h_min: float = 1e-14):
        self.beta = beta
        self.rtol = rtol
        self.atol = atol
        self.invariant_tol = invariant_tol
        self.h_min = h_min
        self.rejected = 0
        self.accepted = 0

    def step(self, r: float, y: NDArray, f: NDArray, h: float, h_cap: float):
        """Take one accepted step of size <= min(h, h_cap); returns (r, y, f, h_used, h_next)."""
        s0 = _channel_sum(y)
        while True:
            hh = min(h, h_cap)
            if hh < self.h_min:
                raise StepUnderflow(f"step size {hh:.2e} at r={r:.6f}")
            y_new, f_new, err = _dp_step(r, y, f, hh, self.beta)
            scale = self.atol + self.rtol * np.maximum(np.abs(y), np.abs(y_new))
            en = float(np.sqrt(np.mean((err / scale) ** 2)))
            drift = abs(_channel_sum(y_new) - s0)
            if en <= 1.0 and drift <= self.invariant_tol * hh + 4e-16:
                self.accepted += 1
                fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
                return r + hh, y_new, f_new, hh, max(hh * fac, h) if hh < h else hh * fac
            self.rejected += 1
            fac = 0.2 if not np.isfinite(en) else max(0.2, 0.9 * en ** -0.2)
            h = hh * min(fac, 0.5 if drift > self.invariant_tol * hh else 1.0)


def _state(point) -> NDArray:
    p = np.asarray(point, dtype=float)
    if p.shape == (2,):
        p = np.array([p[0], p[1], 1.0 - p[0] - p[1]])
    if p.shape != (3,) or p.min() <= 0 or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"initial point must lie in the open simplex, got {point}")
    return np.concatenate([np.log(p), np.zeros(4)])


@dataclass
class OrbitSolution:
    """Samples of an integrated orbit.

    ``samples[:, j]`` is the point at ``r_j``; ``integrals`` holds the running
    quadratures ``(int rho_A, int rho_B, int rho_C, int r rho_B)`` at the end.
    """

    initial: NDArray[np.float64]
    beta: float
    length: float
    r: NDArray[np.float64] = field(repr=False)
    samples: NDArray[np.float64] = field(repr=False)
    integrals: NDArray[np.float64]
    final: NDArray[np.float64]
    steps: int
    rejected: int

    @property
    def product(self) -> float:
        return float(np.prod(self.initial))

    def product_drift(self) -> float:
        return float(np.abs(np.prod(self.samples, axis=0) - self.product).max())

    def sum_drift(self) -> float:
        return float(np.abs(self.samples.sum(axis=0) - 1.0).max())


def integrate_orbit(point, beta: float, length: float, n_samples: int = 1, *,
                    rtol: float = RTOL, invariant_tol: float = INVARIANT_TOL) -> OrbitSolution:
    """Integrate from ``point`` over ``[0, length]``.

    The orbit is reported at ``n_samples`` equally spaced abscissae
    ``k * length / n_samples`` (the integrator lands on each exactly) plus
    the end point in ``final``.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    y = _state(point)
    init = np.exp(y[:3])
    integ = _Integrator(beta, rtol=rtol, invariant_tol=invariant_tol)
    targets = np.arange(1, n_samples + 1) * (length / n_samples)
    targets[-1] = length
    out = np.empty((3, n_samples))
    out[:, 0] = init
    r = 0.0
    f = _rhs(r, y, beta)
    h = min(1e-3, length) if beta == 0 else min(0.01 / max(beta, 1e-12), length)
    for j, tgt in enumerate(targets):
        while r < tgt:
            remaining = tgt - r
            r_new, y, f, used, h_next = integ.step(r, y, f, h, remaining)
            r = tgt if used == remaining else r_new
            if used < remaining:
                h = h_next
            elif h_next > h:
                h = h_next
        if j + 1 < n_samples:
            out[:, j + 1] = np.exp(y[:3])
    return OrbitSolution(
        initial=init,
        beta=beta,
        length=length,
        r=np.arange(n_samples) * (length / n_samples),
        samples=out,
        integrals=y[3:].copy(),
        final=np.exp(y[:3]),
        steps=integ.accepted,
        rejected=integ.rejected,
    )


@dataclass(frozen=True)
class PeriodResult:
    period: float
    closure: float  # |u(P) - u(0)|
    means: NDArray[np.float64]  # orbit averages of the channels
    steps: int


def orbit_period_result(point, beta: float, horizon: float | None = None) -> PeriodResult:
    """First return to the section through ``point`` orthogonal to the flow (log coordinates)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    y0 = _state(point)
    normal = _rhs(0.0, y0, beta)[:3]
    nn = float(normal @ normal)
    if nn < 1e-24 * beta**2:
        raise ValueError("point is (numerically) the fixed point; no orbit to time")
    if horizon is None:
        horizon = 200.0 / beta

    def g(y):
        return float(normal @ (y[:3] - y0[:3]))

    integ = _Integrator(beta)
    r, y = 0.0, y0.copy()
    f = _rhs(r, y, beta)
    h = 0.01 / beta
    g_prev = 0.0
    left = False
    while r < horizon:
        r_prev, y_prev, f_prev = r, y, f
        r, y, f, used, h = integ.step(r, y, f, h, horizon - r)
        g_new = g(y)
        if g_new < 0:
            left = True
        if left and g_prev < 0 <= g_new:
            def g_of(s):
                return g(_dp_step(r_prev, y_prev, f_prev, s, beta)[0]) if s > 0 else g(y_prev)

            s = brentq(g_of, 0.0, used, xtol=PERIOD_TOL * 1e-2, rtol=1e-15, maxiter=200)
            y_end = _dp_step(r_prev, y_prev, f_prev, s, beta)[0] if s > 0 else y_prev
            period = r_prev + s
            return PeriodResult(
                period=period,
                closure=float(np.abs(y_end[:3] - y0[:3]).max()),
                means=y_end[3:6] / period,
                steps=integ.accepted,
            )
        g_prev = g_new
    raise NoReturn(f"no return to the section within r={horizon:g} (beta={beta:g}, point={point})")


def orbit_period(point, beta: float, horizon: float | None = None) -> float:
    return orbit_period_result(point, beta, horizon).period


def ray_point(a: float) -> NDArray[np.float64]:
    """Point on the shooting ray: rho_A = a, rho_B = rho_C = (1 - a)/2."""
    return np.array([a, (1.0 - a) / 2.0, (1.0 - a) / 2.0])


def small_amplitude_period(beta: float) -> float:
    """Limit of the orbit period at vanishing amplitude (linearisation at 1/3)."""
    return critical_beta() / beta


@dataclass
class PeriodScan:
    amplitudes: NDArray[np.float64]
    periods: NDArray[np.float64]

    @property
    def monotone(self) -> bool:
        p = self.periods[np.isfinite(self.periods)]
        return bool(np.all(np.diff(p) > 0))


def period_scan(beta: float, n: int = 24, a_max: float = 0.995) -> PeriodScan:
    """Periods along the shooting ray at ``n`` amplitudes in ``(1/3, a_max]``."""
    a = 1.0 / 3.0 + (a_max - 1.0 / 3.0) * (np.arange(1, n + 1) / n) ** 1.5
    p = np.empty(n)
    for i, ai in enumerate(a):
        try:
            p[i] = orbit_period(ray_point(ai), beta)
        except (NoReturn, StepUnderflow):
            p[i] = np.inf
    return PeriodScan(a, p)


@dataclass
class MinimizerSolution:
    beta: float
    profile: DensityProfile
    start: NDArray[np.float64]  # point at r = 0 of the centred profile
    amplitude_parameter: float  # rho_A on the shooting ray
    period: float
    period_residual: float
    closure: float
    means: NDArray[np.float64]
    product: float
    product_drift: float
    moment: float  # 3 int r rho_B
    free_energy: float
    monotone_scan: bool
    fourier_b: complex  # int rho_B(r) exp(2 pi i r) dr

    @property
    def amplitude(self) -> float:
        return abs(self.fourier_b)

    def record(self) -> dict:
        return {
            "beta": self.beta,
            "period_residual": self.period_residual,
            "means": [float(m) for m in self.means],
            "product": self.product,
            "free_energy": self.free_energy,
            "amplitude": self.amplitude,
        }

    def to_json(self) -> str:
        return json.dumps(self.record(), indent=2)


def subharmonic_order(period: float, tol: float = 1e-6) -> int | None:
    """n >= 2 when ``period`` equals 1/n, else None."""
    n = round(1.0 / period)
    if n >= 2 and abs(period * n - 1.0) <= tol:
        return n
    return None


def check_candidate(point, beta: float) -> PeriodResult:
    """Accept an orbit only when its fundamental period is one.

    Orbits closing at ``1/n`` (n >= 2) are also one-periodic but are rejected.
    """
    res = orbit_period_result(point, beta)
    n = subharmonic_order(res.period)
    if n is not None:
        raise ValueError(f"fundamental period is 1/{n}: subharmonic critical point rejected")
    if abs(res.period - 1.0) > 1e-8:
        raise ValueError(f"fundamental period {res.period:.12f} is not one")
    return res


def _moment_from(start: NDArray, beta: float) -> tuple[float, float]:
    """``3 int_0^1 r rho_B`` along the orbit from ``start`` and rho_B(start)."""
    sol = integrate_orbit(start, beta, 1.0)
    return 3.0 * float(sol.integrals[3]), float(start[1])


def _advance(point: NDArray, beta: float, s: float) -> NDArray:
    if s == 0:
        return np.asarray(point, dtype=float)
    p = integrate_orbit(point, beta, s).final
    return p / p.sum()


def center_orbit(point, beta: float, tol: float = 1e-12) -> NDArray[np.float64]:
    """Point of a period-one orbit at which ``3 int_0^1 r rho_B = 1/2``.

    The B channel is first centred at 1/2 by its circular mean, which puts the
    origin near the B minimum where Newton on the linear moment is well
    conditioned (its derivative is ``3 rho_B(origin) - 1``).
    """
    point = np.asarray(point, dtype=float)
    coarse = integrate_orbit(point, beta, 1.0, 256)
    grid = np.arange(256) / 256
    c = np.angle(np.sum(coarse.samples[1] * np.exp(2j * np.pi * grid))) / (2 * np.pi)
    phi = (c - 0.5) % 1.0
    start = _advance(point, beta, phi)
    for _ in range(30):
        moment, rb = _moment_from(start, beta)
        gval = moment - 0.5
        if abs(gval) < tol:
            return start
        phi = (phi - gval / (3.0 * rb - 1.0)) % 1.0
        start = _advance(point, beta, phi)
    raise RuntimeError(f"centring did not converge (moment residual {gval:.2e})")


def solve_minimizer(beta: float, M: int = 1024, *, scan_points: int = 24):
    """Segregated minimizer at ``beta`` or :class:`NoNontrivialSolution`.

    Shoots along :func:`ray_point` for the orbit of fundamental period one,
    then translates it so that ``3 int r rho_B(r) dr = 1/2``.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    scan = period_scan(beta, scan_points)
    finite = np.isfinite(scan.periods)
    if not finite.any():
        raise BracketError(f"no closed orbits detected along the ray at beta={beta}")
    if beta <= critical_beta() or scan.periods[finite].min() > 1.0:
        if scan.periods[finite].min() <= 1.0:
            raise BracketError(f"period below one at beta={beta} <= beta_c: scan {scan.periods}")
        return NoNontrivialSolution(
            beta, f"all periods exceed one (minimum scanned {scan.periods[finite].min():.6f}, "
                  f"small-amplitude limit {small_amplitude_period(beta):.6f})"
        )

    def excess(a):
        return orbit_period(ray_point(a), beta) - 1.0

    above = np.nonzero(finite & (scan.periods > 1.0))[0]
    if scan.monotone:
        if above.size == 0:
            raise BracketError(f"period stays below one along the ray at beta={beta}")
        i = above[0]
        lo = 1.0 / 3.0 + 1e-6 if i == 0 else scan.amplitudes[i - 1]
        hi = scan.amplitudes[i]
    else:
        # fall back to the first sign change of the scanned excess
        pts = np.concatenate([[1.0 / 3.0 + 1e-6], scan.amplitudes])
        vals = np.concatenate([[small_amplitude_period(beta) - 1.0], scan.periods - 1.0])
        ch = np.nonzero((vals[:-1] < 0) & (vals[1:] > 0))[0]
        if ch.size == 0:
            raise BracketError(f"no sign change of period - 1 along the ray at beta={beta}")
        lo, hi = pts[ch[0]], pts[ch[0] + 1]
    a_star = brentq(excess, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    res = check_candidate(ray_point(a_star), beta)
    point = ray_point(a_star)

    start = center_orbit(point, beta)
    sol = integrate_orbit(start, beta, 1.0, M)
    profile = DensityProfile(sol.samples / sol.samples.sum(axis=0), "smooth-samples")
    means = sol.integrals[:3]
    rj = np.arange(M) / M
    fourier_b = complex(np.mean(sol.samples[1] * np.exp(2j * np.pi * rj)))
    return MinimizerSolution(
        beta=beta,
        profile=profile,
        start=start,
        amplitude_parameter=a_star,
        period=res.period,
        period_residual=abs(res.period - 1.0),
        closure=float(np.abs(np.log(sol.final) - np.log(start)).max()),
        means=means,
        product=float(np.prod(start)),
        product_drift=sol.product_drift(),
        moment=3.0 * float(sol.integrals[3]),
        free_energy=free_energy(profile, beta),
        monotone_scan=scan.monotone,
        fourier_b=fourier_b,
    )


def homogeneous_free_energy(beta: float) -> float:
    return free_energy(homogeneous(), beta)
