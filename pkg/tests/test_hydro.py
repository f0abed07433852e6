import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from abcring.continuum import DensityProfile, critical_beta, homogeneous
from abcring.hydro import (
    CFLViolation,
    HydroBlowup,
    discrete_threshold,
    empirical_threshold,
    free_energy_dissipation,
    hydro_rhs,
    integrate_hydro,
    log_mean,
    mode_amplitudes,
    stationarity_residual,
)
from abcring.minimizer import solve_minimizer

_star = {}


def rho_star(beta=15.0):
    if beta not in _star:
        _star[beta] = solve_minimizer(beta)
    return _star[beta]


def resample(rho, M, shift=0.0):
    """Spectral resampling of a smooth periodic profile onto M points, translated by ``shift``."""
    n = rho.shape[1]
    F = np.fft.rfft(rho, axis=1)
    F = F * np.exp(-2j * np.pi * np.arange(F.shape[1]) * shift)
    G = np.zeros((3, M // 2 + 1), dtype=complex)
    m = min(G.shape[1], F.shape[1])
    G[:, :m] = F[:, :m] * (M / n)
    return np.fft.irfft(G, n=M, axis=1)


def mode_profile(M, eps, k=1):
    d = eps * np.cos(2 * np.pi * k * np.arange(M) / M)
    return DensityProfile(np.stack([1 / 3 + d, 1 / 3 - d / 2, 1 / 3 - d / 2]))


@st.composite
def simplex_profiles(draw, M=16):
    w = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=3 * M, max_size=3 * M))).reshape(3, M)
    return DensityProfile(w / w.sum(axis=0))


def test_homogeneous_rhs_zero():
    assert np.array_equal(hydro_rhs(homogeneous(64), 15.0), np.zeros((3, 64)))
    assert stationarity_residual(homogeneous(64), 30.0) == 0.0


@settings(max_examples=50)
@given(simplex_profiles(), st.floats(0, 40))
def test_rhs_channel_sum_zero(p, beta):
    assert np.abs(hydro_rhs(p, beta).sum(axis=0)).max() < 1e-12 * max(1.0, beta) * p.M**2


def test_random_profile_not_stationary():
    rng = np.random.default_rng(0)
    w = rng.random((3, 32))
    assert stationarity_residual(DensityProfile(w / w.sum(axis=0)), 5.0) > 0.1


def test_heat_mode_second_order():
    eps = 0.01
    errs = []
    for M in (32, 64, 128):
        r = np.arange(M) / M
        rhs = hydro_rhs(mode_profile(M, eps), 0.0)[0]
        errs.append(np.abs(rhs + eps * (2 * np.pi) ** 2 * np.cos(2 * np.pi * r)).max())
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.02)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.02)


@pytest.mark.parametrize("scheme", ["explicit", "semi-implicit"])
def test_homogeneous_stays_put(scheme):
    tr = integrate_hydro(homogeneous(32), 20.0, 0.05, scheme=scheme)
    assert np.array_equal(tr.final.profile.rho, np.full((3, 32), 1 / 3))


def test_cfl_violation():
    with pytest.raises(CFLViolation):
        integrate_hydro(homogeneous(32), 1.0, 0.1, dt=1e-3, scheme="explicit")
    with pytest.raises(ValueError):
        integrate_hydro(homogeneous(8), 1.0, 0.1, scheme="rk4")


def test_blowup_detected():
    with pytest.raises(HydroBlowup) as info:
        integrate_hydro(mode_profile(32, 0.3), 1e6, 1.0, dt=0.05, track_free_energy=False)
    assert info.value.step >= 1


def test_mass_conservation_long_run():
    tr = integrate_hydro(mode_profile(32, 0.05, 2), 15.0, 100_000 / 32, record_every=10_000)
    assert tr.steps == 100_000
    assert tr.max_mass_step_drift < 1e-12
    assert np.abs(np.array(tr.masses) - 1 / 3).max() < 1e-12
    assert tr.max_simplex_error < 1e-8


def rough_profile(M, seed):
    w = 1 + 0.5 * np.random.default_rng(seed).random((3, M))
    return DensityProfile(w / w.sum(axis=0))


@pytest.mark.parametrize("scheme,beta,T", [("explicit", 8.0, 0.1), ("semi-implicit", 8.0, 2.0),
                                           ("semi-implicit", 25.0, 2.0)])
def test_free_energy_descent(scheme, beta, T):
    tr = integrate_hydro(rough_profile(64, 2), beta, T, scheme=scheme)
    assert tr.max_free_energy_increase <= 1e-8
    assert tr.free_energies[-1] < tr.free_energies[0]
    assert tr.max_simplex_error < 1e-8


def test_free_energy_descent_averaged_flux_smooth_data():
    tr = integrate_hydro(mode_profile(256, 0.01), 15.0, 8.0, flux="averaged", record_every=50)
    assert tr.max_free_energy_increase <= 1e-8


@settings(max_examples=50)
@given(simplex_profiles(), st.floats(0, 40))
def test_gradient_flux_dissipates(p, beta):
    assert free_energy_dissipation(p.rho, beta) <= 1e-12


@given(st.floats(0, 1), st.floats(0, 1))
def test_log_mean(x, y):
    L = log_mean(np.array(x), np.array(y))
    if x == 0 or y == 0:
        assert L == 0
    elif abs(x - y) > 1e-3 * (x + y):
        assert L == pytest.approx((x - y) / (math.log(x) - math.log(y)), rel=1e-12)
    assert min(x, y) - 1e-15 <= L <= max(x, y) + 1e-15


def test_fluxes_agree_to_second_order():
    errs = []
    for M in (32, 64, 128):
        p = mode_profile(M, 0.1)
        errs.append(np.abs(hydro_rhs(p, 12.0, "gradient") - hydro_rhs(p, 12.0, "averaged")).max())
    assert 3.5 < errs[0] / errs[1] < 4.5 and 3.5 < errs[1] / errs[2] < 4.5


@pytest.mark.parametrize("flux", ["gradient", "averaged"])
def test_minimizer_stationary_second_order(flux):
    s = rho_star()
    res, drift = [], []
    for M in (128, 256, 512):
        rho = resample(s.profile.rho, M)
        res.append(stationarity_residual(rho, 15.0, flux))
        tr = integrate_hydro(DensityProfile(np.clip(rho, 0, 1)), 15.0, 0.05, dt=0.1 / M, flux=flux,
                             track_free_energy=False, record_every=10**9)
        drift.append(np.abs(tr.final.profile.rho - rho).max())
    for seq in (res, drift):
        assert 3.5 < seq[0] / seq[1] < 4.5
        assert 3.5 < seq[1] / seq[2] < 4.5


@pytest.mark.parametrize("flux", ["gradient", "averaged"])
def test_perturbed_homogeneous_relaxes_to_minimizer(flux):
    s = rho_star()
    M = 256
    tr = integrate_hydro(mode_profile(M, 0.01), 15.0, 8.0, flux=flux, record_every=50)
    amp = np.array(tr.modes)[:, 0]
    assert amp[len(amp) // 4] > 5 * amp[0]
    final = tr.final.profile.rho
    dist = lambda c: np.abs(resample(s.profile.rho, M, c) - final).max()
    best = min(
        (minimize_scalar(dist, bounds=(c, c + 1 / 32), method="bounded", options={"xatol": 1e-12})
         for c in np.arange(32) / 32),
        key=lambda o: o.fun,
    )
    assert best.fun < 1e-4
    assert tr.free_energies[-1] == pytest.approx(s.free_energy, abs=1e-4)


def test_subcritical_perturbation_decays():
    tr = integrate_hydro(mode_profile(128, 0.05), 8.0, 3.0, record_every=100)
    assert tr.modes[-1][0] < 0.01 * tr.modes[0][0]


def test_mode_amplitudes():
    a = mode_amplitudes(mode_profile(64, 0.02, 3).rho)
    assert a[2] == pytest.approx(0.005, rel=1e-12)
    assert np.abs(a[[0, 1, 3]]).max() < 1e-15


def test_discrete_threshold_limit():
    assert discrete_threshold(10**6) == pytest.approx(critical_beta(), rel=1e-10)
    assert abs(discrete_threshold(256) / critical_beta() - 1) < 1e-4


def test_empirical_threshold_m256():
    b = empirical_threshold(256)
    assert abs(b / critical_beta() - 1) < 0.02
    assert b == pytest.approx(discrete_threshold(256), rel=1e-3)


def test_trace_csv():
    tr = integrate_hydro(mode_profile(16, 0.01), 2.0, 0.5, record_every=4)
    lines = tr.to_csv().splitlines()
    assert lines[0].startswith("# schema=1")
    assert lines[1].split(",") == ["t", "free_energy", "mass_A", "mass_B", "mass_C", "residual",
                                   "mode_1", "mode_2", "mode_3", "mode_4"]
    assert len(lines) == 2 + len(tr.times)
