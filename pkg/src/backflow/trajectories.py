"""Non-Markovian quantum jumps for small dense systems.

Time runs on the grid of the channels' rate schedules: step k covers
``[k dt, (k+1) dt)`` with weight ``p_k = Delta(k dt) dt``.  Each step first
offers one jump slot per channel, evaluated on the states at ``k dt``, and
then propagates every state deterministically with
``exp(-i (H - i/2 sum_s Delta_s a_s^dag a_s) dt)`` followed by
renormalization.

During a step with ``p_k >= 0`` a member of class alpha normal-jumps through
channel s with probability ``p_k <a_s^dag a_s>_alpha``.  During a step with
``p_k < 0`` a member of class ``(alpha, t')`` whose last jump went through s
reverse-jumps back to alpha with probability

    N_alpha / sum_{t''} N_(alpha, t'') * |p_k| <a_s^dag a_s>_alpha

and takes alpha's current state.  A class is thus labelled by its record of
unrestored normal jumps ``((step, channel), ...)``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .rate import RateSchedule

MAX_DIM = 4096

SIGMA_MINUS = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # |1> = excited -> |0>
SIGMA_PLUS = SIGMA_MINUS.T.copy()
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1j], [1j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[-1.0, 0.0], [0.0, 1.0]], dtype=complex)

GROUND = np.array([1.0, 0.0], dtype=complex)
EXCITED = np.array([0.0, 1.0], dtype=complex)


def embed(op: np.ndarray, site: int, n_sites: int, d: int = 2) -> np.ndarray:
    """Local operator acting on ``site`` of an ``n_sites`` register (site 0 leftmost)."""
    if d ** n_sites > MAX_DIM:
        raise ValueError(f"Hilbert space d^L = {d ** n_sites} exceeds cap {MAX_DIM}")
    op = np.asarray(op, dtype=complex)
    if op.shape != (d, d):
        raise ValueError(f"local operator must be {d}x{d}")
    factors = [op if k == site else np.eye(d) for k in range(n_sites)]
    return reduce(np.kron, factors)


def product_state(*locals_: np.ndarray) -> np.ndarray:
    psi = reduce(np.kron, [np.asarray(v, dtype=complex) for v in locals_])
    return psi / np.linalg.norm(psi)


def check_state(psi: np.ndarray, d: int = 2) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    n = psi.shape[0]
    if n > MAX_DIM:
        raise ValueError(f"state dimension {n} exceeds cap {MAX_DIM}")
    L = round(math.log(n, d))
    if d ** L != n:
        raise ValueError(f"state length {n} is not a power of d={d}")
    return psi / np.linalg.norm(psi)


@dataclass
class JumpChannel:
    """Jump operator ``op`` on ``site`` driven by ``schedule``."""

    op: np.ndarray
    site: int
    n_sites: int
    schedule: RateSchedule
    d: int = 2
    matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.matrix = embed(self.op, self.site, self.n_sites, self.d)

    @property
    def number(self) -> np.ndarray:
        return self.matrix.conj().T @ self.matrix


@dataclass(frozen=True)
class TrajectoryClass:
    """Record of unrestored normal jumps, ``((step, channel), ...)``."""

    jumps: tuple = ()
    weight: float = 0.0
    state: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def times(self) -> tuple:
        return tuple(k for k, _ in self.jumps)

    def parent(self) -> tuple:
        return self.jumps[:-1]


def _check_channels(channels: Sequence[JumpChannel], dim: int):
    if not channels:
        return 0.0, 0
    dts = {c.schedule.dt for c in channels}
    if len(dts) != 1:
        raise ValueError("all channels must share the schedule time step")
    for c in channels:
        if c.matrix.shape != (dim, dim):
            raise ValueError("channel dimension does not match the system")
    return dts.pop(), min(len(c.schedule) for c in channels)


def step_propagator(H: np.ndarray, channels: Sequence[JumpChannel], k: int, dt: float) -> np.ndarray:
    heff = np.asarray(H, dtype=complex).copy()
    for c in channels:
        heff -= 0.5j * (c.schedule.p[k] / dt) * c.number
    return expm(-1j * heff * dt)


def expectation(state: np.ndarray, op: np.ndarray) -> float:
    return float(np.real(np.vdot(state, op @ state)))


def normal_jump(state: np.ndarray, channel: JumpChannel, t: int):
    """Apply a normal jump through ``channel`` at step ``t``.

    Returns ``(new_state, p_plus)`` with ``p_plus = p_t <a^dag a>``.  A state
    annihilated by the operator is ineligible: ``(None, 0.0)``.
    """
    p = channel.schedule.p[t]
    if p < 0:
        raise ValueError("normal jumps only happen on steps with p >= 0")
    out = channel.matrix @ state
    nrm2 = float(np.real(np.vdot(out, out)))
    if nrm2 <= 1e-300:
        return None, 0.0
    return out / math.sqrt(nrm2), p * nrm2


def reverse_jump_probability(ensemble: Sequence[TrajectoryClass], target: TrajectoryClass, t: int,
                             channel: int, channels: Sequence[JumpChannel],
                             memory_kernel: Callable | None = None) -> float:
    """Probability for any source ``(target, (t', channel))`` to reverse into ``target``.

    The value does not depend on which source jumps back (for the default
    infinite memory).  ``target.state`` must hold the target's state at t.
    """
    p = channels[channel].schedule.p[t]
    if p >= 0:
        return 0.0
    n = len(target.jumps)
    last = target.jumps[-1][0] if n else -1
    denom = 0.0
    for c in ensemble:
        if len(c.jumps) == n + 1 and c.jumps[:n] == target.jumps:
            tp, s = c.jumps[-1]
            if s == channel and last < tp < t:
                denom += c.weight * (1.0 if memory_kernel is None else memory_kernel(tp, t))
    if denom <= 0:
        return 0.0
    eligible = expectation(target.state, channels[channel].number)
    return target.weight / denom * abs(p) * eligible


# ------------------------------------------------------------------ ensemble


class _Table:
    """Live trajectory classes plus the jump records of every class ever made."""

    def __init__(self, psi0, n_channels):
        self.parent = [-1]
        self.step = [-1]
        self.channel = [-1]
        self.ids = np.array([0], dtype=np.int64)
        self.states = psi0[None, :].copy()
        self.count = None
        self.n_channels = n_channels

    def record(self, cid: int) -> tuple:
        out = []
        while cid > 0:
            out.append((self.step[cid], self.channel[cid]))
            cid = self.parent[cid]
        return tuple(reversed(out))

    def add(self, parents, steps, chans, counts, states):
        start = len(self.parent)
        self.parent.extend(parents.tolist())
        self.step.extend(steps.tolist())
        self.channel.extend(chans.tolist())
        new_ids = np.arange(start, start + len(parents), dtype=np.int64)
        self.ids = np.concatenate([self.ids, new_ids])
        self.states = np.concatenate([self.states, states])
        self.count = np.concatenate([self.count, counts])

    def prune(self):
        keep = self.count > 0
        if not keep.all():
            self.ids = self.ids[keep]
            self.states = self.states[keep]
            self.count = self.count[keep]


@dataclass
class EnsembleResult:
    classes: list  # TrajectoryClass with final states
    rho: np.ndarray
    times: np.ndarray  # record times
    rhos: np.ndarray  # density-matrix estimates at record times
    n_samples: int
    counts_history: list = field(default_factory=list, repr=False)

    def class_weights(self) -> dict:
        return {c.jumps: c.weight for c in self.classes}

    def frequencies(self) -> dict:
        total = sum(c.weight for c in self.classes)
        return {c.jumps: c.weight / total for c in self.classes}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class_id", "jump_record", "weight", "final_state_norm"])
            for i, c in enumerate(self.classes):
                rec = ";".join(f"{k}:{s}" for k, s in c.jumps)
                w.writerow([i, rec, repr(float(c.weight)), repr(float(np.linalg.norm(c.state)))])


def evolve_ensemble(psi0, H, channels: Sequence[JumpChannel], n_steps: int, n_samples: int = 10000,
                    seed: int | None = 0, record_every: int | None = None, mode: str = "sample",
                    memory_kernel: Callable | None = None, prune_below: float = 0.0) -> EnsembleResult:
    """Propagate an ensemble of ``n_samples`` members through ``n_steps`` steps.

    ``mode="sample"`` draws jump counts per class (binomial / multinomial);
    ``mode="mean"`` moves the expected weight instead, which is exact but
    only tractable when the number of classes stays small.  ``memory_kernel``
    is an optional weight ``K(t_source, t)`` on reverse-jump sources.
    """
    psi0 = check_state(psi0, channels[0].d if channels else 2)
    dim = psi0.shape[0]
    H = np.asarray(H, dtype=complex)
    if H.shape != (dim, dim):
        raise ValueError("Hamiltonian dimension does not match the state")
    dt, avail = _check_channels(channels, dim)
    if n_steps > avail:
        raise ValueError(f"schedules cover {avail} steps, {n_steps} requested")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if mode not in ("sample", "mean"):
        raise ValueError("mode must be 'sample' or 'mean'")
    rng = np.random.default_rng(seed)
    nch = len(channels)
    ops = np.array([c.matrix for c in channels]) if nch else np.zeros((0, dim, dim))
    tab = _Table(psi0, nch)
    tab.count = np.array([float(n_samples)])
    rec_times, rec_rhos = [], []

    def snapshot(k):
        w = tab.count / tab.count.sum()
        rec_times.append(k * dt)
        rec_rhos.append(np.einsum("c,ci,cj->ij", w, tab.states, tab.states.conj()))

    if record_every:
        snapshot(0)
    for k in range(n_steps):
        p = np.array([c.schedule.p[k] for c in channels])
        # a_s |psi> for every class and channel: (n_classes, nch, dim)
        jumped = np.einsum("sij,cj->csi", ops, tab.states)
        nrm2 = np.real(np.einsum("csi,csi->cs", jumped.conj(), jumped))
        count0 = tab.count.copy()
        moved = np.zeros_like(count0)
        row_of = {int(cid): r for r, cid in enumerate(tab.ids)}
        parent_row = np.array([row_of.get(tab.parent[cid], -1) for cid in tab.ids])
        last_ch = np.array([tab.channel[cid] for cid in tab.ids])
        last_step = np.array([tab.step[cid] for cid in tab.ids])
        for s in np.flatnonzero(p < 0):
            src = np.flatnonzero((last_ch == s) & (parent_row >= 0) & (count0 > 0))
            if len(src) == 0:
                continue
            kern = np.ones(len(src)) if memory_kernel is None else np.array(
                [memory_kernel(ts * dt, k * dt) for ts in last_step[src]])
            par = parent_row[src]
            denom = np.zeros(len(count0))
            np.add.at(denom, par, count0[src] * kern)
            pm = count0[par] * kern / denom[par] * abs(p[s]) * nrm2[par, s]
            pm = np.clip(pm, 0.0, 1.0)
            r = rng.binomial(count0[src].astype(np.int64), pm).astype(float) if mode == "sample" \
                else count0[src] * pm
            r = np.minimum(r, count0[src] - moved[src])
            moved[src] += r
            np.add.at(tab.count, par, r)
            tab.count[src] -= r
        pos = np.flatnonzero(p >= 0)
        if len(pos):
            probs = nrm2[:, pos] * p[pos]
            stay_p = 1.0 - probs.sum(axis=1)
            if np.any(stay_p < -1e-12):
                raise ValueError(f"jump probability exceeds one at step {k}; reduce dt")
            avail_n = count0 - moved
            pv = np.concatenate([probs, np.clip(stay_p, 0.0, None)[:, None]], axis=1)
            pv /= pv.sum(axis=1, keepdims=True)
            if mode == "sample":
                draws = rng.multinomial(avail_n.astype(np.int64), pv)[:, :-1].astype(float)
            else:
                draws = avail_n[:, None] * pv[:, :-1]
                if prune_below > 0:
                    draws[draws < prune_below * n_samples] = 0.0
            rows, cols = np.nonzero(draws > 0)
            if len(rows):
                tab.count[rows] -= 0.0  # keep dtype
                np.subtract.at(tab.count, rows, draws[rows, cols])
                new_states = jumped[rows, pos[cols]] / np.sqrt(nrm2[rows, pos[cols]])[:, None]
                tab.add(tab.ids[rows], np.full(len(rows), k), pos[cols], draws[rows, cols], new_states)
        K = step_propagator(H, channels, k, dt)
        st = tab.states @ K.T
        tab.states = st / np.linalg.norm(st, axis=1, keepdims=True)
        if mode == "mean" and prune_below > 0:
            tab.count[tab.count < prune_below * n_samples] = 0.0
        tab.prune()
        if record_every and (k + 1) % record_every == 0:
            snapshot(k + 1)
    classes = [TrajectoryClass(tab.record(int(cid)), float(n), st)
               for cid, n, st in zip(tab.ids, tab.count, tab.states)]
    w = tab.count / tab.count.sum()
    rho = np.einsum("c,ci,cj->ij", w, tab.states, tab.states.conj())
    if not record_every:
        rec_times, rec_rhos = [n_steps * dt], [rho]
    return EnsembleResult(classes, rho, np.array(rec_times), np.array(rec_rhos), n_samples)


def class_states(psi0, H, channels: Sequence[JumpChannel], jumps: tuple, n_steps: int) -> list:
    """States of every prefix class of ``jumps`` at the start of each step.

    Returns a list of ``n + 1`` arrays of shape ``(n_steps, dim)``; entry j is
    the class with the first j jumps (NaN before it exists).
    """
    psi0 = check_state(psi0, channels[0].d)
    dt, _ = _check_channels(channels, psi0.shape[0])
    props = [step_propagator(H, channels, k, dt) for k in range(n_steps)]
    out = []
    psi = psi0
    start = 0
    prefix_states = []
    for j in range(len(jumps) + 1):
        stop = jumps[j][0] if j < len(jumps) else n_steps
        arr = np.full((n_steps, psi0.shape[0]), np.nan, dtype=complex)
        cur = psi
        for k in range(start, n_steps):
            arr[k] = cur
            v = props[k] @ cur
            cur = v / np.linalg.norm(v)
        out.append(arr)
        if j < len(jumps):
            step, ch = jumps[j]
            v = channels[ch].matrix @ arr[step]
            nv = np.linalg.norm(v)
            if nv == 0:
                raise ValueError(f"jump {j} annihilates the state")
            psi = props[step] @ (v / nv)
            psi = psi / np.linalg.norm(psi)
            start = step + 1
        prefix_states.append(stop)
    return out


def class_traces(psi0, H, channels: Sequence[JumpChannel], jumps: tuple, n_steps: int) -> list:
    """``<a_s^dag a_s>`` of every prefix class: list of ``(n_channels, n_steps)`` arrays."""
    out = []
    for arr in class_states(psi0, H, channels, jumps, n_steps):
        tr = np.array([np.real(np.einsum("ki,ij,kj->k", arr.conj(), c.number, arr)) for c in channels])
        out.append(tr)
    return out


# --------------------------------------------------------------- propagators


def _as_multi(schedule, trace):
    """Normalize to a list of schedules and a (n_channels, n_steps) trace."""
    scheds = [schedule] if isinstance(schedule, RateSchedule) else list(schedule)
    tr = np.asarray(trace, dtype=float)
    n = min(len(s) for s in scheds)
    if tr.ndim == 0:
        tr = np.full((len(scheds), n), float(tr))
    elif tr.ndim == 1:
        tr = tr[None, :]
    if tr.shape[0] != len(scheds):
        raise ValueError("trace needs one row per channel schedule")
    P = np.array([s.p[:n] for s in scheds])
    return P, tr[:, :n]


def bare_propagator(trace, t: int, t_prime: int, schedule) -> float:
    """Markovian no-jump probability over steps ``t .. t_prime - 1``.

    ``prod_k (1 - sum_s p+_{s,k} <a_s^dag a_s>_k)``: the negative part of the
    rate is ignored.
    """
    if t > t_prime:
        raise ValueError("need t <= t_prime")
    P, tr = _as_multi(schedule, trace)
    sl = slice(t, t_prime)
    return float(np.prod(1.0 - (np.maximum(P[:, sl], 0.0) * tr[:, sl]).sum(axis=0)))


def dressed_propagator(trace, t: int, t_prime: int, schedule, form: str = "product") -> float:
    """Probability of remaining in a class, all jump/reverse-jump loops resummed.

    ``form="product"`` gives the grid value ``prod_k (1 - sum_s p_{s,k} n_{s,k})``
    with the signed weights; ``form="exp"`` gives ``exp(-sum_k sum_s p n)``,
    the continuum expression on a piecewise-constant rate.
    """
    if t > t_prime:
        raise ValueError("need t <= t_prime")
    P, tr = _as_multi(schedule, trace)
    sl = slice(t, t_prime)
    x = (P[:, sl] * tr[:, sl]).sum(axis=0)
    if form == "exp":
        return float(np.exp(-x.sum()))
    if form != "product":
        raise ValueError("form must be 'product' or 'exp'")
    return float(np.prod(1.0 - x))


def _child_trace(trace, child_trace, tau):
    if child_trace is None:
        return trace
    return child_trace(tau) if callable(child_trace) else child_trace


def loop_probability(trace, t1: int, t2: int, schedule: RateSchedule, t_start: int = 0,
                     child_trace=None) -> float:
    """Weight of one normal jump at step t1 undone by a reverse jump at t2.

    Product of the normal-jump probability, the dressed propagator of the
    child class between the two steps, and the reverse-jump probability whose
    population ratio is expressed through propagators conditioned at
    ``t_start``.  ``child_trace`` gives the child's ``<a^dag a>`` (array, or
    callable of the jump step); by default it equals the parent's.
    """
    p = schedule.p
    trace = np.broadcast_to(np.asarray(trace, dtype=float), p.shape)
    if not (t_start <= t1 < t2) or p[t1] < 0 or p[t2] >= 0:
        return 0.0
    pplus = p[t1] * trace[t1]
    inner = dressed_propagator(_child_trace(trace, child_trace, t1), t1 + 1, t2, schedule)
    denom = 0.0
    for tau in range(t_start, t2):
        if p[tau] > 0:
            denom += (dressed_propagator(trace, t_start, tau, schedule) * p[tau] * trace[tau]
                      * dressed_propagator(_child_trace(trace, child_trace, tau), tau + 1, t2, schedule))
    if denom <= 0:
        return 0.0
    pminus = dressed_propagator(trace, t_start, t2, schedule) / denom * abs(p[t2]) * trace[t2]
    return pplus * inner * pminus


def enumerate_loop_sum(trace, t: int, t_prime: int, schedule: RateSchedule, max_loops: int,
                       child_trace=None, tol: float = 1e-15, max_iter: int = 500) -> float:
    """Dyson series of loop insertions, summed term by term on the grid.

    Order r is ``P0 o (Sigma o P0)^r`` built from explicit sums over loop
    positions ``t <= k1 < k2 < t_prime``.  Inside Sigma the child class's
    stay probability is itself such a series (recursively), and the
    population ratio uses the series' own value, iterated to
    self-consistency.  The closed-form product is never used.
    """
    p = np.asarray(schedule.p, dtype=float)
    if not 0 <= t <= t_prime <= len(p):
        raise ValueError("need 0 <= t <= t_prime <= len(schedule)")
    root = np.broadcast_to(np.asarray(trace, dtype=float), p.shape)
    memo = {}

    def trace_of(src):
        if src is None or child_trace is None:
            return root
        tr = child_trace(src) if callable(child_trace) else child_trace
        return np.broadcast_to(np.asarray(tr, dtype=float), p.shape)

    def stay_from(a, src):
        # stay probability of the class `src` from step a to every b >= a
        key = (a, src)
        if key in memo:
            return memo[key]
        tr = trace_of(src)
        m = t_prime - a
        pp = np.maximum(p[a:t_prime], 0.0)
        pm = np.maximum(-p[a:t_prime], 0.0)
        na = tr[a:t_prime]
        f = 1.0 - pp * na
        P0 = np.zeros((m + 1, m + 1))
        for i in range(m + 1):
            P0[i, i:] = np.concatenate([[1.0], np.cumprod(f[i:])])
        C = np.zeros((m, m + 1))
        for k1 in range(m):
            if pp[k1] > 0 and na[k1] > 0:
                C[k1, k1 + 1:] = stay_from(a + k1 + 1, a + k1)
        stay = P0[0].copy()
        for _ in range(max_iter):
            S = np.zeros((m, m))
            for k2 in range(m):
                if pm[k2] <= 0:
                    continue
                den = float(np.sum(stay[:k2] * pp[:k2] * na[:k2] * C[:k2, k2]))
                if den > 0:
                    S[:k2, k2] = pp[:k2] * na[:k2] * C[:k2, k2] * (stay[k2] * pm[k2] * na[k2] / den)
            term = P0[0].copy()
            total = term.copy()
            for _ in range(max_loops):
                via = term[:m] @ S
                new = np.zeros(m + 1)
                for k2 in np.flatnonzero(via):
                    new[k2 + 1:] += via[k2] * P0[k2 + 1, k2 + 1:]
                term = new
                total += term
                if np.abs(term).max() <= tol * np.abs(total).max():
                    break
            done = np.max(np.abs(total - stay)) <= tol * max(1.0, np.abs(total).max())
            stay = total
            if done:
                break
        memo[key] = stay
        return stay

    return float(stay_from(t, None)[t_prime - t])


def outcome_probability(jumps: Sequence, t: int, t_prime: int, schedule, traces: Sequence) -> float:
    """Probability of realizing exactly the normal jumps ``jumps`` in ``[t, t_prime)``.

    ``jumps`` are step indices (single channel) or ``(step, channel)`` pairs;
    ``traces[j]`` is the ``<a^dag a>`` trace of the class after the first j
    jumps.  Dressed propagators connect the jumps; a jump placed on a step
    with negative weight has probability zero.
    """
    scheds = [schedule] if isinstance(schedule, RateSchedule) else list(schedule)
    jl = [(j, 0) if np.isscalar(j) else (int(j[0]), int(j[1])) for j in jumps]
    if len(traces) != len(jl) + 1:
        raise ValueError("need one trace per prefix class")
    steps = [k for k, _ in jl]
    if any(not t <= k < t_prime for k in steps) or any(a >= b for a, b in zip(steps, steps[1:])):
        raise ValueError("jump steps must be strictly increasing inside [t, t_prime)")
    prob = 1.0
    start = t
    for j, (k, s) in enumerate(jl):
        _, tr = _as_multi(scheds, traces[j])
        prob *= dressed_propagator(tr, start, k, scheds)
        pk = scheds[s].p[k]
        if pk < 0:
            return 0.0
        prob *= pk * tr[s, k]
        start = k + 1
    _, tr = _as_multi(scheds, traces[-1])
    return prob * dressed_propagator(tr, start, t_prime, scheds)


# ----------------------------------------------------------- master equation


def lindblad_rhs(rho, H, ops, rates):
    out = -1j * (H @ rho - rho @ H)
    for a, g in zip(ops, rates):
        if g == 0:
            continue
        ad = a.conj().T
        ada = ad @ a
        out += g * (a @ rho @ ad - 0.5 * (ada @ rho + rho @ ada))
    return out


def master_equation_evolve(rho0, H, channels: Sequence[JumpChannel], n_steps: int, substeps: int = 8,
                           record_every: int | None = None, drift_tol: float = 1e-6):
    """Fourth-order Runge-Kutta solution of the time-local master equation.

    Rates are piecewise constant, ``Delta_s = p_{s,k} / dt`` on step k, and
    each step is split into ``substeps`` RK4 steps.  Returns the final
    density matrix, or ``(times, rhos)`` when ``record_every`` is given.
    """
    rho = np.asarray(rho0, dtype=complex).copy()
    H = np.asarray(H, dtype=complex)
    if rho.shape != H.shape:
        raise ValueError("density matrix and Hamiltonian dimensions differ")
    dt, avail = _check_channels(channels, rho.shape[0])
    if not channels:
        raise ValueError("need at least one channel to define the time grid")
    if n_steps > avail:
        raise ValueError(f"schedules cover {avail} steps, {n_steps} requested")
    ops = [c.matrix for c in channels]
    h = dt / substeps
    tr0 = np.trace(rho).real
    times, rhos = [0.0], [rho.copy()]
    for k in range(n_steps):
        rates = [c.schedule.p[k] / dt for c in channels]
        for _ in range(substeps):
            k1 = lindblad_rhs(rho, H, ops, rates)
            k2 = lindblad_rhs(rho + 0.5 * h * k1, H, ops, rates)
            k3 = lindblad_rhs(rho + 0.5 * h * k2, H, ops, rates)
            k4 = lindblad_rhs(rho + h * k3, H, ops, rates)
            rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if abs(np.trace(rho).real - tr0) > drift_tol:
            raise RuntimeError(f"trace drift above {drift_tol} at step {k}; use more substeps")
        if record_every and (k + 1) % record_every == 0:
            times.append((k + 1) * dt)
            rhos.append(rho.copy())
    if record_every:
        return np.array(times), np.array(rhos)
    return rho


def trace_distance(a, b) -> float:
    return 0.5 * float(np.abs(np.linalg.eigvalsh(np.asarray(a) - np.asarray(b))).sum())


def check_density(rho, tol_trace=1e-10, tol_psd=1e-8) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if not np.allclose(rho, rho.conj().T, atol=1e-12):
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1) > tol_trace:
        raise ValueError("density matrix trace differs from one")
    if np.linalg.eigvalsh(rho).min() < -tol_psd:
        raise ValueError("density matrix is not positive semidefinite")
    return rho


def density_to_json(rho) -> str:
    rho = np.asarray(rho, dtype=complex)
    return json.dumps({"dim": rho.shape[0],
                       "entries": [[float(z.real), float(z.imag)] for z in rho.ravel()]})


def density_from_json(text: str) -> np.ndarray:
    obj = json.loads(text)
    flat = np.array([complex(re, im) for re, im in obj["entries"]])
    return flat.reshape(obj["dim"], obj["dim"])
