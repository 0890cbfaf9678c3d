"""Inhomogeneous S_Q Potts lattice of the replicated circuit and its samplers.

Geometry
--------
Spins live on an ``ly x lx`` grid, row 0 being the earliest time layer and
x periodic.  Between layer t and t+1 the sites are paired as by the
brick-wall gates of that layer (offset alternating with the parity of t);
site x of layer t is bonded to both members of its pair in layer t+1.  Each
bulk site therefore has two bonds down and two up.  Above the last row sits
a fixed boundary row that encodes the entanglement cut: ``l_a`` contiguous
sites, centred, carry the swap label and the rest the identity.  The bottom
row is free.

A bond from lower spin g_i (layer t) to upper spin g_k carries
``E_t(g_i^-1 g_k)``, where E_t is the bond-energy table of layer t.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from . import replica
from .rate import RateSchedule

ALGORITHMS = ("wolff", "metropolis")


@dataclass
class ReplicaLattice:
    lx: int
    ly: int
    q: int
    spins: np.ndarray  # (ly, lx) labels
    boundary: np.ndarray  # (lx,) labels, fixed
    energies: np.ndarray  # (ly, Q!) bond energies of each layer
    partner: np.ndarray  # (ly, lx) gate partner of x between layer t and t+1
    p: np.ndarray  # (ly,) layer weights
    l_a: int = 0

    @property
    def n_sites(self) -> int:
        return self.lx * self.ly

    @property
    def n_bonds(self) -> int:
        return 2 * self.lx * (self.ly - 1) + 2 * self.lx

    def copy(self) -> "ReplicaLattice":
        return ReplicaLattice(self.lx, self.ly, self.q, self.spins.copy(), self.boundary.copy(),
                              self.energies, self.partner, self.p, self.l_a)

    def bonds(self):
        """Yield ``(layer, (t, x), (t + 1, y) or None, y)`` for every bond.

        The upper end is None for bonds into the fixed boundary row.
        """
        for t in range(self.ly):
            for x in range(self.lx):
                for y in (x, self.partner[t, x]):
                    upper = (t + 1, int(y)) if t < self.ly - 1 else None
                    yield t, (t, x), upper, int(y)


def gate_partners(lx: int, ly: int) -> np.ndarray:
    if lx % 2:
        raise ValueError("lx must be even for brick-wall pairing")
    x = np.arange(lx)
    even = x ^ 1
    odd = np.where(x % 2 == 1, (x + 1) % lx, (x - 1) % lx)
    return np.array([even if t % 2 == 0 else odd for t in range(ly)], dtype=np.int64)


def boundary_row(lx: int, l_a: int, q: int = 3) -> np.ndarray:
    if not 0 <= l_a <= lx:
        raise ValueError("l_a must lie in [0, lx]")
    e = replica.label(replica.identity(q))
    swap = replica.label((1, 0) + tuple(range(2, q))) if q >= 2 else e
    row = np.full(lx, e, dtype=np.int64)
    start = (lx - l_a) // 2
    row[start:start + l_a] = swap
    return row


def build_lattice(lx: int, ly: int, q: int, schedule, l_a: int, d: float = math.inf,
                  clamp: float = replica.DEFAULT_CLAMP, init: str = "identity",
                  seed: int | None = None) -> ReplicaLattice:
    """Lattice for ``ly`` layers of the schedule with a cut of size ``l_a``.

    ``schedule`` is a RateSchedule or a plain sequence of layer weights.
    ``init`` is ``"identity"`` (all spins aligned) or ``"random"``.
    """
    p = np.asarray(schedule.p if isinstance(schedule, RateSchedule) else schedule, dtype=float)
    if len(p) < ly:
        raise ValueError(f"schedule has {len(p)} layers, lattice needs {ly}")
    p = p[:ly].copy()
    partner = gate_partners(lx, ly)
    boundary = boundary_row(lx, l_a, q)
    energies = replica.bond_energy_table(p, q, d, clamp)
    nl = math.factorial(q)
    if init == "identity":
        spins = np.full((ly, lx), replica.label(replica.identity(q)), dtype=np.int64)
    elif init == "random":
        spins = np.random.default_rng(seed).integers(0, nl, size=(ly, lx)).astype(np.int64)
    else:
        raise ValueError(f"unknown init {init!r}")
    return ReplicaLattice(lx, ly, q, spins, boundary, energies, partner, p, l_a)


# ------------------------------------------------------------------ kernels


@numba.njit(cache=True)
def _seed(s):
    np.random.seed(s)


@numba.njit(cache=True)
def _energies(spins, boundary, partner, E, rel):
    ly, lx = spins.shape
    total = 0.0
    bnd = 0.0
    for t in range(ly):
        for x in range(lx):
            s = spins[t, x]
            for k in range(2):
                y = x if k == 0 else partner[t, x]
                if t < ly - 1:
                    total += E[t, rel[s, spins[t + 1, y]]]
                else:
                    e = E[t, rel[s, boundary[y]]]
                    total += e
                    bnd += e
    return total, bnd


@numba.njit(cache=True)
def _local_energy(spins, boundary, partner, E, rel, out):
    ly, lx = spins.shape
    for t in range(ly):
        for x in range(lx):
            s = spins[t, x]
            for k in range(2):
                y = x if k == 0 else partner[t, x]
                if t < ly - 1:
                    e = 0.5 * E[t, rel[s, spins[t + 1, y]]]
                    out[t, x] += e
                    out[t + 1, y] += e
                else:
                    out[t, x] += E[t, rel[s, boundary[y]]]


@numba.njit(cache=True)
def _misaligned(spins, boundary, partner, rel, ident, counts):
    ly, lx = spins.shape
    for t in range(ly):
        for x in range(lx):
            s = spins[t, x]
            for k in range(2):
                y = x if k == 0 else partner[t, x]
                u = spins[t + 1, y] if t < ly - 1 else boundary[y]
                if rel[s, u] != ident:
                    counts[t] += 1


@numba.njit(cache=True)
def _wolff(spins, boundary, partner, E, rel, mul, invols, mark, stack, members, stamp):
    ly, lx = spins.shape
    n = ly * lx
    seed = np.random.randint(n)
    tau = invols[np.random.randint(invols.shape[0])]
    mark[seed] = stamp
    stack[0] = seed
    top = 1
    size = 0
    dEb = 0.0
    while top > 0:
        top -= 1
        i = stack[top]
        members[size] = i
        size += 1
        t = i // lx
        x = i % lx
        s = spins[t, x]
        sf = mul[tau, s]
        for k in range(2):
            y = x if k == 0 else partner[t, x]
            if t < ly - 1:
                j = (t + 1) * lx + y
                if mark[j] != stamp:
                    sj = spins[t + 1, y]
                    dE = E[t, rel[sf, sj]] - E[t, rel[s, sj]]
                    if dE > 0.0 and np.random.random() < 1.0 - math.exp(-dE):
                        mark[j] = stamp
                        stack[top] = j
                        top += 1
            else:
                b = boundary[y]
                dEb += E[t, rel[sf, b]] - E[t, rel[s, b]]
        if t > 0:
            for k in range(2):
                y = x if k == 0 else partner[t - 1, x]
                j = (t - 1) * lx + y
                if mark[j] != stamp:
                    sj = spins[t - 1, y]
                    dE = E[t - 1, rel[sj, sf]] - E[t - 1, rel[sj, s]]
                    if dE > 0.0 and np.random.random() < 1.0 - math.exp(-dE):
                        mark[j] = stamp
                        stack[top] = j
                        top += 1
    if dEb <= 0.0 or np.random.random() < math.exp(-dEb):
        for m in range(size):
            i = members[m]
            spins[i // lx, i % lx] = mul[tau, spins[i // lx, i % lx]]
        return size
    return -size


@numba.njit(cache=True)
def _site_energy(spins, boundary, partner, E, rel, t, x, s):
    ly, lx = spins.shape
    e = 0.0
    for k in range(2):
        y = x if k == 0 else partner[t, x]
        if t < ly - 1:
            e += E[t, rel[s, spins[t + 1, y]]]
        else:
            e += E[t, rel[s, boundary[y]]]
    if t > 0:
        for k in range(2):
            y = x if k == 0 else partner[t - 1, x]
            e += E[t - 1, rel[spins[t - 1, y], s]]
    return e


@numba.njit(cache=True)
def _metropolis(spins, boundary, partner, E, rel, nl):
    ly, lx = spins.shape
    i = np.random.randint(ly * lx)
    t = i // lx
    x = i % lx
    old = spins[t, x]
    new = np.random.randint(nl)
    if new == old:
        return True
    dE = (_site_energy(spins, boundary, partner, E, rel, t, x, new)
          - _site_energy(spins, boundary, partner, E, rel, t, x, old))
    if dE <= 0.0 or np.random.random() < math.exp(-dE):
        spins[t, x] = new
        return True
    return False


@numba.njit(cache=True)
def _update(algo, spins, boundary, partner, E, rel, mul, invols, mark, stack, members, stamp):
    if algo == 0:
        _wolff(spins, boundary, partner, E, rel, mul, invols, mark, stack, members, stamp)
    else:
        for _ in range(spins.size):
            _metropolis(spins, boundary, partner, E, rel, mul.shape[0])


@numba.njit(cache=True)
def _chain(algo, spins, boundary, partner, E, rel, mul, invols, n_therm, stride, n_meas,
           total, bnd, local, misaligned, ident):
    n = spins.size
    mark = np.zeros(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    members = np.empty(n, dtype=np.int64)
    stamp = 0
    for _ in range(n_therm):
        stamp += 1
        _update(algo, spins, boundary, partner, E, rel, mul, invols, mark, stack, members, stamp)
    for m in range(n_meas):
        for _ in range(stride):
            stamp += 1
            _update(algo, spins, boundary, partner, E, rel, mul, invols, mark, stack, members, stamp)
        tot, b = _energies(spins, boundary, partner, E, rel)
        total[m] = tot
        bnd[m] = b
        _local_energy(spins, boundary, partner, E, rel, local)
        _misaligned(spins, boundary, partner, rel, ident, misaligned)


@numba.njit(cache=True)
def _state_histogram(algo, spins, boundary, partner, E, rel, mul, invols, n_therm, n_meas, hist):
    n = spins.size
    nl = mul.shape[0]
    mark = np.zeros(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    members = np.empty(n, dtype=np.int64)
    stamp = 0
    for it in range(n_therm + n_meas):
        stamp += 1
        _update(algo, spins, boundary, partner, E, rel, mul, invols, mark, stack, members, stamp)
        if it >= n_therm:
            code = 0
            for t in range(spins.shape[0]):
                for x in range(spins.shape[1]):
                    code = code * nl + spins[t, x]
            hist[code] += 1


# ------------------------------------------------------------------ public API


def _tables(lat):
    mul, rel, _ = replica.tables(lat.q)
    invols = np.array(replica.involutions(lat.q), dtype=np.int64)
    return np.ascontiguousarray(mul), np.ascontiguousarray(rel), invols


def total_energy(lat: ReplicaLattice) -> float:
    _, rel, _ = _tables(lat)
    return _energies(lat.spins, lat.boundary, lat.partner, lat.energies, rel)[0]


def boundary_energy(lat: ReplicaLattice) -> float:
    _, rel, _ = _tables(lat)
    return _energies(lat.spins, lat.boundary, lat.partner, lat.energies, rel)[1]


def local_energy(lat: ReplicaLattice) -> np.ndarray:
    """Per-site energy: half of each bulk bond plus whole boundary bonds."""
    _, rel, _ = _tables(lat)
    out = np.zeros((lat.ly, lat.lx))
    _local_energy(lat.spins, lat.boundary, lat.partner, lat.energies, rel, out)
    return out


def seed_sampler(seed: int) -> None:
    """Seed the compiled samplers' random stream."""
    _seed(int(seed) % (2**32))


def wolff_step(lat: ReplicaLattice) -> int:
    """One cluster update; returns the cluster size, negative if rejected.

    A random bulk seed and a random involution tau are drawn; the cluster
    grows across bonds whose energy would rise if only one end were
    left-multiplied by tau, and the flip is accepted with
    ``min(1, exp(-dE_boundary))``.
    """
    mul, rel, invols = _tables(lat)
    n = lat.n_sites
    return int(_wolff(lat.spins, lat.boundary, lat.partner, lat.energies, rel, mul, invols,
                      np.zeros(n, dtype=np.int64), np.empty(n, dtype=np.int64),
                      np.empty(n, dtype=np.int64), 1))


def metropolis_step(lat: ReplicaLattice) -> bool:
    """Single-site update with a uniformly drawn new label."""
    mul, rel, _ = _tables(lat)
    return bool(_metropolis(lat.spins, lat.boundary, lat.partner, lat.energies, rel, mul.shape[0]))


@dataclass
class McConfig:
    n_therm: int = 25000
    n_sample_stride: int = 50
    n_measurements: int = 200
    seed: int = 0
    algorithm: str = "wolff"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.n_therm < 0 or self.n_sample_stride < 1 or self.n_measurements < 1:
            raise ValueError("MC counts must be positive")


@dataclass
class ChainResult:
    total: np.ndarray
    boundary: np.ndarray
    local: np.ndarray  # mean local-energy map
    misaligned: np.ndarray  # per-layer fraction of misaligned bonds
    tau_int: float = field(default=float("nan"))

    @property
    def mean(self) -> float:
        return float(self.total.mean())

    @property
    def stderr(self) -> float:
        return batch_stderr(self.total)


def autocorrelation_time(x: np.ndarray) -> float:
    """Integrated autocorrelation time with a self-consistent window."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4 or np.var(x) == 0:
        return 0.5
    y = x - x.mean()
    f = np.fft.rfft(y, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 0.5
    for w in range(1, n):
        tau += acf[w]
        if w >= 5 * tau:
            break
    return float(max(tau, 0.5))


def batch_stderr(x: np.ndarray, n_batches: int = 20) -> float:
    """Standard error of the mean from non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    nb = min(n_batches, len(x))
    if nb < 2:
        return float("nan")
    size = len(x) // nb
    means = x[: nb * size].reshape(nb, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(nb))


def run_chain(lat: ReplicaLattice, config: McConfig) -> ChainResult:
    """Thermalize, then record ``n_measurements`` samples every stride steps.

    For Metropolis one step is a sweep of ``n_sites`` single-site attempts.
    The lattice is updated in place.
    """
    mul, rel, invols = _tables(lat)
    seed_sampler(config.seed)
    n = config.n_measurements
    total = np.empty(n)
    bnd = np.empty(n)
    local = np.zeros((lat.ly, lat.lx))
    mis = np.zeros(lat.ly, dtype=np.int64)
    algo = ALGORITHMS.index(config.algorithm)
    _chain(algo, lat.spins, lat.boundary, lat.partner, lat.energies, rel, mul, invols,
           config.n_therm, config.n_sample_stride, n, total, bnd, local, mis,
           replica.label(replica.identity(lat.q)))
    return ChainResult(total, bnd, local / n, mis / (n * 2.0 * lat.lx), autocorrelation_time(total))


def state_histogram(lat: ReplicaLattice, algorithm: str, n_therm: int, n_samples: int, seed: int) -> np.ndarray:
    """Visit counts of every spin configuration (tiny lattices only).

    States are encoded row-major in base Q!.  One sample per update step
    (a sweep for Metropolis).
    """
    mul, rel, invols = _tables(lat)
    nl = mul.shape[0]
    if nl ** lat.n_sites > 10**7:
        raise ValueError("lattice too large for exhaustive histograms")
    hist = np.zeros(nl ** lat.n_sites, dtype=np.int64)
    seed_sampler(seed)
    _state_histogram(ALGORITHMS.index(algorithm), lat.spins, lat.boundary, lat.partner,
                     lat.energies, rel, mul, invols, n_therm, n_samples, hist)
    return hist


def exact_gibbs(lat: ReplicaLattice) -> np.ndarray:
    """Boltzmann distribution over all configurations, same encoding."""
    mul, rel, _ = _tables(lat)
    nl = mul.shape[0]
    n = lat.n_sites
    if nl ** n > 10**7:
        raise ValueError("lattice too large for enumeration")
    codes = np.arange(nl ** n)
    digits = np.empty((len(codes), n), dtype=np.int64)
    c = codes.copy()
    for k in range(n - 1, -1, -1):
        digits[:, k] = c % nl
        c //= nl
    energy = np.zeros(len(codes))
    for bond_layer, (t, x), upper, y in lat.bonds():
        lo = digits[:, t * lat.lx + x]
        if upper is None:
            hi = np.full(len(codes), lat.boundary[y])
        else:
            hi = digits[:, upper[0] * lat.lx + upper[1]]
        energy += lat.energies[bond_layer][rel[lo, hi]]
    w = np.exp(-(energy - energy.min()))
    return w / w.sum()
