"""Kinetic Monte Carlo for the ring and complete-graph exchange dynamics.

Both chains are simulated exactly (Gillespie): an exponential holding time
at the total exit rate, then one exchange chosen proportionally to its rate.
Each event consumes exactly two uniforms, drawn in fixed-size chunks from a
Philox stream, so a run is a deterministic function of its seed.

Stream derivation: replica ``r`` of seed ``s`` uses
``Philox(SeedSequence(s, spawn_key=(r,)))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from numpy.typing import NDArray

from .estimators import DEFAULT_BATCHES, EstimateWithError, batch_means
from .lattice import G, ConfigurationError, SpeciesConfiguration, pair_count

UNIFORM_CHUNK = 1 << 15
_G = np.ascontiguousarray(G, dtype=np.int64)

# kernel status codes
_DONE, _NEED_UNIFORMS, _NEED_EVENT_SPACE = 0, 1, 2


def replica_rng(seed: int, replica: int = 0) -> np.random.Generator:
    """Independent stream for one replica of one seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(replica,))))


def random_equal_density(N: int, rng: np.random.Generator) -> SpeciesConfiguration:
    if N % 3:
        raise ConfigurationError("N must be a multiple of 3")
    return SpeciesConfiguration(rng.permutation(np.repeat(np.arange(3, dtype=np.int8), N // 3)))


# ---------------------------------------------------------------- kernels


@numba.njit(cache=True)
def _leaf_rate(sites, x, n, table, noops, offset):
    s = sites[x]
    t = sites[(x + 1) % n]
    if s == t:
        return 1.0 if noops else 0.0
    # exponent -dK in units of beta/(2N); dK = G[t, s] for a nearest-neighbour swap
    return table[offset - _G[t, s]]


@numba.njit(cache=True)
def _tree_set(tree, size, x, value):
    i = size + x
    tree[i] = value
    i >>= 1
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i >>= 1


@numba.njit(cache=True)
def _ring_kernel(sites, state, table, noops, tree, size, t_end, dt, snaps, snap_k,
                 u, ev_t, ev_x, ev_y, ev_r, record):
    # state = [t, u_pos, next_sample, K, n_events] (float64 for uniformity)
    n = sites.size
    offset = (table.size - 1) // 2
    t = state[0]
    upos = int(state[1])
    nxt = int(state[2])
    k = int(state[3])
    nev = int(state[4])
    nsamp = snaps.shape[0]
    status = _DONE
    while True:
        if upos + 2 > u.size:
            status = _NEED_UNIFORMS
            break
        if record and nev >= ev_t.size:
            status = _NEED_EVENT_SPACE
            break
        total = tree[1]
        if total <= 0.0:
            t_new = np.inf
        else:
            t_new = t - math.log1p(-u[upos]) / total
        while nxt < nsamp and nxt * dt < t_new and nxt * dt < t_end:
            snaps[nxt, :] = sites
            snap_k[nxt] = k
            nxt += 1
        if t_new >= t_end:
            t = t_end
            upos += 2
            break
        target = u[upos + 1] * total
        upos += 2
        i = 1
        while i < size:
            left = tree[2 * i]
            if target < left:
                i = 2 * i
            else:
                target -= left
                i = 2 * i + 1
        x = i - size
        if x >= n:  # round-off guard
            x = n - 1
        while tree[size + x] <= 0.0:
            x -= 1
        y = (x + 1) % n
        k += _G[sites[y], sites[x]]
        tmp = sites[x]
        sites[x] = sites[y]
        sites[y] = tmp
        for b in (x - 1, x, x + 1):
            bb = b % n
            _tree_set(tree, size, bb, _leaf_rate(sites, bb, n, table, noops, offset))
        if record:
            ev_t[nev] = t_new
            ev_x[nev] = x
            ev_y[nev] = y
            ev_r[nev] = total
        nev += 1
        t = t_new
    state[0] = t
    state[1] = upos
    state[2] = nxt
    state[3] = k
    state[4] = nev
    return status


@numba.njit(cache=True)
def _complete_rates(sites, table, noops, rates):
    # rates[x, y] for x < y; exponent -dK with dK from the long-jump formula
    n = sites.size
    offset = (table.size - 1) // 2
    total = 0.0
    cnt = np.zeros(3, dtype=np.int64)
    for x in range(n):
        s = sites[x]
        cnt[:] = 0
        for y in range(x + 1, n):
            t = sites[y]
            if s == t:
                r = 1.0 if noops else 0.0
            else:
                dk = _G[t, s]
                for a in range(3):
                    dk += (_G[t, a] - _G[s, a]) * cnt[a]
                r = table[offset - dk]
            rates[x, y] = r
            total += r
            cnt[t] += 1
    return total


@numba.njit(cache=True)
def _complete_kernel(sites, state, table, noops, rates, t_end, dt, snaps, snap_k,
                     u, ev_t, ev_x, ev_y, ev_r, record):
    n = sites.size
    t = state[0]
    upos = int(state[1])
    nxt = int(state[2])
    k = int(state[3])
    nev = int(state[4])
    nsamp = snaps.shape[0]
    status = _DONE
    total = _complete_rates(sites, table, noops, rates)
    while True:
        if upos + 2 > u.size:
            status = _NEED_UNIFORMS
            break
        if record and nev >= ev_t.size:
            status = _NEED_EVENT_SPACE
            break
        if total <= 0.0:
            t_new = np.inf
        else:
            t_new = t - math.log1p(-u[upos]) / total
        while nxt < nsamp and nxt * dt < t_new and nxt * dt < t_end:
            snaps[nxt, :] = sites
            snap_k[nxt] = k
            nxt += 1
        if t_new >= t_end:
            t = t_end
            upos += 2
            break
        target = u[upos + 1] * total
        upos += 2
        bx = -1
        by = -1
        acc = 0.0
        for x in range(n):
            for y in range(x + 1, n):
                r = rates[x, y]
                if r > 0.0:
                    bx = x
                    by = y
                    acc += r
                    if target < acc:
                        break
            if target < acc:
                break
        # every rate depends on the species between the endpoints: full refresh
        cnt = np.zeros(3, dtype=np.int64)
        s = sites[bx]
        tt = sites[by]
        for z in range(bx + 1, by):
            cnt[sites[z]] += 1
        dk = _G[tt, s]
        for a in range(3):
            dk += (_G[tt, a] - _G[s, a]) * cnt[a]
        k += dk
        sites[bx] = tt
        sites[by] = s
        if record:
            ev_t[nev] = t_new
            ev_x[nev] = bx
            ev_y[nev] = by
            ev_r[nev] = total
        nev += 1
        total = _complete_rates(sites, table, noops, rates)
        t = t_new
    state[0] = t
    state[1] = upos
    state[2] = nxt
    state[3] = k
    state[4] = nev
    return status


# ---------------------------------------------------------------- driver


@dataclass
class Trajectory:
    """One simulated path.

    Events are stored as parallel arrays: times, the exchanged site pair and
    the total exit rate of the state the event left.  Snapshots are taken at
    ``sample_times`` (the state in force at that instant).
    """

    initial: SpeciesConfiguration
    final: SpeciesConfiguration
    beta: float
    horizon: float
    graph: str
    event_times: NDArray[np.float64] = field(repr=False)
    event_bonds: NDArray[np.int64] = field(repr=False)
    event_exit_rates: NDArray[np.float64] = field(repr=False)
    n_events: int
    sample_times: NDArray[np.float64] = field(repr=False)
    snapshots: NDArray[np.int8] = field(repr=False)
    sample_pair_counts: NDArray[np.int64] = field(repr=False)

    @property
    def holding_times(self) -> NDArray[np.float64]:
        return np.diff(np.concatenate([[0.0], self.event_times]))

    def energies(self) -> NDArray[np.float64]:
        """``H_N`` at each sampling time."""
        return self.sample_pair_counts / self.initial.N**2


def _rate_table(N: int, beta: float, prefactor: float) -> NDArray[np.float64]:
    # |dK| <= 2N - 3 for any single exchange
    e = np.arange(-2 * N, 2 * N + 1)
    return prefactor * np.exp(beta * e / (2.0 * N))


def simulate(
    zeta0: SpeciesConfiguration,
    beta: float,
    horizon: float,
    graph: str = "ring",
    rng: np.random.Generator | None = None,
    *,
    sample_dt: float | None = None,
    record_events: bool = True,
    noops: bool = False,
) -> Trajectory:
    """Simulate the ring (``graph='ring'``) or complete-graph chain up to ``horizon``.

    Equal-species exchanges are left out of the event table unless ``noops``
    is set, in which case they fire at their nominal rate and leave the state
    unchanged.  With ``sample_dt`` the state is recorded at ``0, dt, 2dt, ...``
    strictly before ``horizon``.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if graph not in ("ring", "complete"):
        raise ValueError(f"unknown graph {graph!r}")
    rng = replica_rng(0) if rng is None else rng
    sites = np.array(zeta0.sites, dtype=np.int8)
    N = sites.size
    if N < 2:
        raise ConfigurationError("need at least two sites")
    if sample_dt is None:
        n_samples, dt = 0, horizon
    else:
        if sample_dt <= 0:
            raise ValueError("sample_dt must be positive")
        n_samples, dt = int(math.ceil(horizon / sample_dt)), float(sample_dt)
        if (n_samples - 1) * dt >= horizon:
            n_samples -= 1
    snaps = np.empty((n_samples, N), dtype=np.int8)
    snap_k = np.empty(n_samples, dtype=np.int64)
    cap = 1024 if record_events else 0
    ev_t = np.empty(cap)
    ev_x = np.empty(cap, dtype=np.int64)
    ev_y = np.empty(cap, dtype=np.int64)
    ev_r = np.empty(cap)
    k0 = int(pair_count(sites))
    state = np.array([0.0, UNIFORM_CHUNK, 0.0, float(k0), 0.0])
    u = np.empty(UNIFORM_CHUNK)

    if graph == "ring":
        table = _rate_table(N, beta, 1.0)
        size = 1 << max(1, (N - 1).bit_length())
        tree = np.zeros(2 * size)
        offset = (table.size - 1) // 2
        for x in range(N):
            tree[size + x] = _leaf_rate(sites, x, N, table, noops, offset)
        for i in range(size - 1, 0, -1):
            tree[i] = tree[2 * i] + tree[2 * i + 1]
    else:
        table = _rate_table(N, beta, 1.0 / N)
        rates = np.zeros((N, N))

    while True:
        if graph == "ring":
            status = _ring_kernel(sites, state, table, noops, tree, size, float(horizon), dt,
                                  snaps, snap_k, u, ev_t, ev_x, ev_y, ev_r, record_events)
        else:
            status = _complete_kernel(sites, state, table, noops, rates, float(horizon), dt,
                                      snaps, snap_k, u, ev_t, ev_x, ev_y, ev_r, record_events)
        if status == _DONE:
            break
        if status == _NEED_UNIFORMS:
            left = UNIFORM_CHUNK - int(state[1])
            u = np.concatenate([u[UNIFORM_CHUNK - left :], rng.random(UNIFORM_CHUNK - left)])
            state[1] = 0
        else:
            cap *= 2
            ev_t = np.resize(ev_t, cap)
            ev_x = np.resize(ev_x, cap)
            ev_y = np.resize(ev_y, cap)
            ev_r = np.resize(ev_r, cap)
    nev = int(state[4])
    m = nev if record_events else 0
    return Trajectory(
        initial=zeta0,
        final=SpeciesConfiguration(sites),
        beta=float(beta),
        horizon=float(horizon),
        graph=graph,
        event_times=ev_t[:m].copy(),
        event_bonds=np.stack([ev_x[:m], ev_y[:m]], axis=1),
        event_exit_rates=ev_r[:m].copy(),
        n_events=nev,
        sample_times=np.arange(n_samples) * dt,
        snapshots=snaps,
        sample_pair_counts=snap_k,
    )


# ---------------------------------------------------------------- observables


def _grid_values(phi, N: int) -> NDArray[np.float64]:
    if callable(phi):
        vals = np.asarray(phi(np.arange(N) / N), dtype=float)
        vals = np.broadcast_to(vals, (N,))
    else:
        vals = np.asarray(phi, dtype=float)
        if vals.shape != (N,):
            raise ValueError(f"phi must have {N} grid values, got shape {vals.shape}")
    if abs(vals.mean()) > 1e-10:
        raise ValueError(f"test function must have zero mean, got {vals.mean():.3e}")
    return vals


def test_function(zeta, phi) -> float | NDArray[np.float64]:
    """``f_N = (1/N) sum_x eta_B(x) phi(x/N)``; batched over configuration rows.

    ``phi`` is a callable evaluated at ``x/N`` or an array of grid values.
    """
    s = zeta.sites if isinstance(zeta, SpeciesConfiguration) else np.asarray(zeta)
    N = s.shape[-1]
    vals = _grid_values(phi, N)
    out = (s == 1) @ vals / N
    return float(out) if np.ndim(out) == 0 else out


test_function.__test__ = False  # not a pytest test


def order_parameter(zeta, k: int = 1) -> float | NDArray[np.float64]:
    """``|(1/N) sum_x (eta_B(x) - 1/3) e^{2 pi i k x/N}|`` (batched over rows)."""
    if k < 1:
        raise ValueError("mode k must be >= 1")
    s = zeta.sites if isinstance(zeta, SpeciesConfiguration) else np.asarray(zeta)
    N = s.shape[-1]
    phase = np.exp(2j * np.pi * k * np.arange(N) / N)
    out = np.abs(((s == 1) - 1.0 / 3.0) @ phase) / N
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------- estimation


def mcmc_expectation(
    observable,
    N: int,
    beta: float,
    graph: str = "ring",
    T: float = 1e5,
    burn_in: float = 1e3,
    rng: np.random.Generator | None = None,
    *,
    sample_dt: float = 1.0,
    batches: int = DEFAULT_BATCHES,
    initial: SpeciesConfiguration | None = None,
) -> EstimateWithError:
    """Time average of ``observable`` over ``(burn_in, T)`` with a batch-means error.

    ``observable`` maps a batch of configuration rows to values.
    """
    if not 0 <= burn_in < T:
        raise ValueError("need 0 <= burn_in < T")
    rng = replica_rng(0) if rng is None else rng
    zeta0 = initial if initial is not None else random_equal_density(N, rng)
    traj = simulate(zeta0, beta, T, graph, rng, sample_dt=sample_dt, record_events=False)
    keep = traj.sample_times >= burn_in
    values = np.broadcast_to(np.asarray(observable(traj.snapshots[keep]), dtype=float), (int(keep.sum()),))
    return batch_means(values, batches)
