import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from abcring.dynamics import (
    mcmc_expectation,
    order_parameter,
    random_equal_density,
    replica_rng,
    simulate,
    test_function as f_N,
)
from abcring.estimators import InsufficientData, autocorrelation_time, batch_means
from abcring.generators import build_ring_generator, spectral_gap
from abcring.lattice import SpeciesConfiguration, pair_count, translate
from abcring.statespace import expectation, gibbs_ensemble

cos2pi = lambda r: np.cos(2 * np.pi * r)


def test_trajectory_invariants():
    z = SpeciesConfiguration("AABBCCABC")
    for graph in ("ring", "complete"):
        tr = simulate(z, 4.0, 500.0, graph, replica_rng(2), sample_dt=0.5)
        assert np.all(np.diff(tr.event_times) > 0)
        assert np.all(tr.event_bonds[:, 0] != tr.event_bonds[:, 1])
        counts = np.stack([(tr.snapshots == a).sum(axis=1) for a in range(3)], axis=1)
        assert np.all(counts == 3)
        assert np.array_equal(pair_count(tr.snapshots), tr.sample_pair_counts)
        assert tr.final.counts() == (3, 3, 3)


def test_replay_events_reconstructs_final_state():
    z = SpeciesConfiguration("ABCABCABCABC")
    tr = simulate(z, 6.0, 200.0, "complete", replica_rng(4))
    s = z.sites.copy()
    for x, y in tr.event_bonds:
        s[[x, y]] = s[[y, x]]
    assert np.array_equal(s, tr.final.sites)


@pytest.mark.parametrize("graph", ["ring", "complete"])
def test_determinism(graph):
    z = SpeciesConfiguration("ACBACBACB")
    a = simulate(z, 3.0, 300.0, graph, replica_rng(9, 3), sample_dt=1.0)
    b = simulate(z, 3.0, 300.0, graph, replica_rng(9, 3), sample_dt=1.0)
    assert a.event_times.tobytes() == b.event_times.tobytes()
    assert a.event_bonds.tobytes() == b.event_bonds.tobytes()
    assert a.snapshots.tobytes() == b.snapshots.tobytes()
    c = simulate(z, 3.0, 300.0, graph, replica_rng(9, 4))
    assert c.event_times.tobytes() != a.event_times.tobytes()


def test_recording_does_not_change_path():
    z = SpeciesConfiguration("ACBACBACB")
    a = simulate(z, 3.0, 300.0, "ring", replica_rng(1), sample_dt=1.0)
    b = simulate(z, 3.0, 300.0, "ring", replica_rng(1), sample_dt=1.0, record_events=False)
    assert a.snapshots.tobytes() == b.snapshots.tobytes()


def test_holding_times_constant_rate_with_noops():
    z = random_equal_density(12, replica_rng(0))
    tr = simulate(z, 0.0, 2000.0, "ring", replica_rng(1), noops=True)
    h = tr.holding_times[:10_000]
    assert h.size == 10_000
    assert np.allclose(tr.event_exit_rates, 12.0)
    assert stats.kstest(h, "expon", args=(0, 1 / 12)).pvalue > 0.01


@pytest.mark.parametrize("graph,beta", [("ring", 0.0), ("ring", 5.0), ("complete", 3.0)])
def test_normalised_holding_times_exponential(graph, beta):
    z = random_equal_density(9, replica_rng(5))
    tr = simulate(z, beta, 4000.0, graph, replica_rng(6))
    h = (tr.holding_times * tr.event_exit_rates)[:10_000]
    assert stats.kstest(h, "expon").pvalue > 0.01


def test_indicator_time_average_n6_beta5():
    e = gibbs_ensemble(6, 5.0)
    z = random_equal_density(6, replica_rng(3))
    tr = simulate(z, 5.0, 1e6, "ring", replica_rng(3), sample_dt=1.0, record_events=False)
    keep = tr.sample_times >= 100
    for obs in (lambda c: (c[:, 0] == 0) & (c[:, 1] == 2), lambda c: (c[:, 0] == c[:, 3])):
        est = batch_means(obs(tr.snapshots[keep]).astype(float))
        assert est.within(expectation(e, obs), 4.0)


def test_mcmc_expectation_examples():
    est = mcmc_expectation(lambda c: np.full(len(c), 2.0), 6, 1.0, T=2000.0, burn_in=10.0,
                           rng=replica_rng(1))
    assert est.mean == 2.0 and est.standard_error == 0.0
    e9 = gibbs_ensemble(9, 5.0)
    est = mcmc_expectation(lambda c: pair_count(c) / 81, 9, 5.0, T=2e5, burn_in=1e3, rng=replica_rng(2))
    assert est.within(expectation(e9, e9.energies), 4.0)
    est = mcmc_expectation(lambda c: c[:, 0] == 0, 9, 0.0, T=1e5, burn_in=1e2, rng=replica_rng(3))
    assert est.within(1 / 3, 4.0)
    with pytest.raises(InsufficientData):
        mcmc_expectation(lambda c: c[:, 0], 6, 1.0, T=10.0, burn_in=5.0, rng=replica_rng(1))
    with pytest.raises(ValueError):
        mcmc_expectation(lambda c: c[:, 0], 6, 1.0, T=10.0, burn_in=20.0)


def test_stationarity_chi_square_n3():
    e = gibbs_ensemble(3, 4.0)
    rng = np.random.default_rng(2024)
    starts = rng.choice(6, size=20_000, p=e.probabilities)
    configs = e.indexing.all_configurations()
    finals = np.empty(starts.size, dtype=np.int64)
    for r, s in enumerate(starts):
        tr = simulate(SpeciesConfiguration(configs[s]), 4.0, 0.7, "ring", replica_rng(77, r),
                      record_events=False)
        finals[r] = e.indexing.index_of(tr.final)
    observed = np.bincount(finals, minlength=6)
    assert stats.chisquare(observed, e.probabilities * starts.size).pvalue > 0.01


def test_reversibility_flux_n3():
    e = gibbs_ensemble(3, 3.0)
    z = SpeciesConfiguration("ABC")
    tr = simulate(z, 3.0, 2e4, "ring", replica_rng(8))
    s = tr.initial.sites.copy()
    idx = [e.indexing.index_of(tr.initial)]
    for x, y in tr.event_bonds:
        s[[x, y]] = s[[y, x]]
        idx.append(int(e.indexing.rank(s)[0]))
    idx = np.array(idx)
    flux = np.zeros((6, 6))
    np.add.at(flux, (idx[:-1], idx[1:]), 1)
    for i in range(6):
        for j in range(i + 1, 6):
            n = flux[i, j] + flux[j, i]
            if n:
                assert abs(flux[i, j] - flux[j, i]) <= 4 * math.sqrt(n)


def test_test_function_examples():
    z = SpeciesConfiguration("ABC")
    assert f_N(z, np.zeros(3)) == 0.0
    assert f_N(z, cos2pi) == pytest.approx(-1 / 6, abs=1e-15)
    with pytest.raises(ValueError):
        f_N(z, lambda r: 1 + 0 * r)


@given(st.permutations([0, 0, 1, 1, 2, 2, 0, 1, 2]), st.integers(0, 8))
def test_test_function_translation(sites, k):
    z = SpeciesConfiguration(sites)
    phi = cos2pi(np.arange(9) / 9)
    assert f_N(translate(z, k), phi) == pytest.approx(f_N(z, np.roll(phi, -k)), abs=1e-14)


def test_order_parameter_examples():
    seg = SpeciesConfiguration("AABBCC")
    expected = math.sin(math.pi / 3) / (6 * math.sin(math.pi / 6))
    assert order_parameter(seg, 1) == pytest.approx(expected, rel=1e-13)
    assert order_parameter(seg, 1) == pytest.approx(0.2887, abs=1e-4)
    assert order_parameter(SpeciesConfiguration("ABC" * 5), 1) < 1e-15
    with pytest.raises(ValueError):
        order_parameter(seg, 0)


@given(st.permutations([0] * 4 + [1] * 4 + [2] * 4), st.integers(0, 11), st.integers(1, 3))
def test_order_parameter_translation_invariant(sites, k, mode):
    z = SpeciesConfiguration(sites)
    assert order_parameter(translate(z, k), mode) == pytest.approx(order_parameter(z, mode), abs=1e-14)


def test_batch_means_rules():
    with pytest.raises(InsufficientData):
        batch_means(np.arange(10.0))
    with pytest.raises(InsufficientData):
        batch_means(np.arange(1000.0), batches=4)
    est = batch_means(np.ones(640))
    assert est.standard_error == 0 and est.mean == 1
    rng = np.random.default_rng(0)
    x = rng.standard_normal(64_000)
    est = batch_means(x)
    assert est.standard_error == pytest.approx(1 / math.sqrt(x.size), rel=0.35)


def test_autocorrelation_white_noise():
    x = np.random.default_rng(1).standard_normal(20_000)
    assert autocorrelation_time(x, 0.5) == pytest.approx(0.25, rel=0.2)
    with pytest.raises(InsufficientData):
        autocorrelation_time(x[:100])


def test_autocorrelation_two_state_chain():
    # continuous-time flip at rate lam, sampled every dt: exact Markov sampling
    lam, dt, n = 0.5, 0.05, 100_000
    rng = np.random.default_rng(3)
    p_flip = 0.5 * (1 - math.exp(-2 * lam * dt))
    flips = rng.random(n) < p_flip
    x = np.cumsum(flips) % 2
    assert autocorrelation_time(x, dt) == pytest.approx(1 / (2 * lam), rel=0.1)


def test_autocorrelation_nonconvergent():
    x = np.cumsum(np.random.default_rng(2).standard_normal(2000))
    with pytest.raises(InsufficientData):
        autocorrelation_time(x, c=60.0)


def test_autocorrelation_vs_gap_n6_beta0():
    # at beta = 0 f_N with the cosine is an exact eigenfunction: tau = 1/gap
    gap = spectral_gap(build_ring_generator(gibbs_ensemble(6, 0.0)))
    z = random_equal_density(6, replica_rng(0))
    tr = simulate(z, 0.0, 2e5, "ring", replica_rng(0), sample_dt=0.1, record_events=False)
    tau = autocorrelation_time(f_N(tr.snapshots, cos2pi), 0.1)
    assert tau == pytest.approx(1 / gap, rel=0.3)
