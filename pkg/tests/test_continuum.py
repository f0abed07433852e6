import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abcring.continuum import (
    DensityProfile,
    ProfileError,
    critical_beta,
    el_rhs,
    empirical_density,
    energy,
    entropy,
    free_energy,
    homogeneous,
)
from abcring.lattice import SpeciesConfiguration, hamiltonian, translate
from abcring.statespace import enumerate_states


def blocks(M):
    m = M // 3
    rho = np.zeros((3, M))
    for a in range(3):
        rho[a, a * m:(a + 1) * m] = 1.0
    return DensityProfile(rho)


@st.composite
def simplex_profiles(draw, M=12):
    w = np.array(draw(st.lists(st.floats(0.01, 1.0), min_size=3 * M, max_size=3 * M))).reshape(3, M)
    return DensityProfile(w / w.sum(axis=0))


def test_empirical_density_examples():
    p = empirical_density(SpeciesConfiguration("ABC"))
    assert np.array_equal(p.rho, np.eye(3))
    z = SpeciesConfiguration("AABCBCACB")
    assert np.array_equal(empirical_density(z).means(), np.full(3, 1 / 3))
    for k in range(9):
        assert np.array_equal(empirical_density(translate(z, k)).rho, empirical_density(z).shift(k).rho)


def test_profile_validation():
    with pytest.raises(ProfileError):
        DensityProfile(np.full((3, 4), 0.5))
    with pytest.raises(ProfileError):
        DensityProfile(np.array([[1.2, 0], [-0.2, 0], [0, 1.0]]))


def test_profile_csv_roundtrip(tmp_path):
    p = blocks(9)
    text = p.to_csv(tmp_path / "p.csv")
    assert text.startswith("# schema=1")
    q = DensityProfile.from_csv(tmp_path / "p.csv")
    assert np.array_equal(q.rho, p.rho)


def test_entropy_examples():
    assert entropy(homogeneous(30)) == 0.0
    assert entropy(blocks(30)) == pytest.approx(math.log(3), rel=1e-14)
    assert entropy(blocks(30)) == pytest.approx(1.0986, abs=1e-4)


@settings(max_examples=100)
@given(simplex_profiles())
def test_entropy_nonnegative(p):
    assert entropy(p) >= -1e-15


def test_energy_examples():
    assert energy(homogeneous(1)) == pytest.approx(1 / 6, abs=1e-16)
    assert energy(homogeneous(48)) == pytest.approx(1 / 6, abs=1e-15)


@pytest.mark.parametrize("N", [3, 6, 9])
def test_energy_bridge_exact(N):
    configs = enumerate_states(N).all_configurations()
    for row in configs:
        z = SpeciesConfiguration(row)
        assert energy(empirical_density(z)) == hamiltonian(z)


def test_energy_shift_invariance_m6():
    rng = np.random.default_rng(4)
    for _ in range(20):
        d = rng.uniform(-0.1, 0.1, (2, 6))
        d -= d.mean(axis=1, keepdims=True)
        p = DensityProfile(np.stack([1 / 3 + d[0], 1 / 3 + d[1], 1 / 3 - d[0] - d[1]]))
        assert p.in_mean_class()
        e0 = energy(p)
        for k in range(6):
            assert energy(p.shift(k)) == pytest.approx(e0, abs=1e-12)


@given(st.permutations([0] * 4 + [1] * 4 + [2] * 4), st.integers(0, 11))
def test_energy_shift_invariance_empirical(sites, k):
    p = empirical_density(SpeciesConfiguration(sites))
    assert energy(p.shift(k)) == pytest.approx(energy(p), abs=1e-14)


def test_free_energy_examples():
    for beta in np.linspace(0, 30, 13):
        assert free_energy(homogeneous(16), beta) == pytest.approx(beta / 6, abs=1e-14)
    p = blocks(12)
    assert free_energy(p, 0.0) == entropy(p)


def test_critical_beta():
    bc = critical_beta()
    assert round(bc, 4) == 10.8828
    assert bc**2 == pytest.approx(12 * math.pi**2, rel=1e-15)
    assert bc / math.pi == pytest.approx(2 * math.sqrt(3), rel=1e-15)


def test_el_rhs_examples():
    assert np.array_equal(el_rhs((1 / 3, 1 / 3, 1 / 3), 7.0), np.zeros(3))
    assert el_rhs((0.5, 0.3, 0.2), 1.0) == pytest.approx([-0.05, 0.09, -0.04], abs=1e-16)


@given(st.floats(0.01, 0.98), st.floats(0.01, 0.98), st.floats(0, 50))
def test_el_rhs_sums_to_zero(a, b, beta):
    if a + b >= 0.99:
        return
    v = el_rhs((a, b, 1 - a - b), beta)
    assert abs(v.sum()) < 1e-13
