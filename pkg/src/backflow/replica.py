"""Permutation-group weights of the replicated random circuit.

Replica spins are elements of the symmetric group S_Q.  Permutations are
stored as tuples of images, ``g[x] = g(x)``, and composed right to left:
``compose(g, h)(x) = g(h(x))``.

For Q = 3 the six elements are labelled in the fixed order

    0: (0)(1)(2)   1: (0)(12)   2: (01)(2)   3: (021)   4: (012)   5: (02)(1)

so label 0 is the identity and label 2 the transposition used for the
entanglement boundary.
"""
from __future__ import annotations

import csv
import itertools
import math
from functools import lru_cache

import numpy as np

MAX_Q = 5
DEFAULT_CLAMP = 50.0

# (0)(1)(2), (0)(12), (01)(2), (021), (012), (02)(1)
S3_ORDER = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (2, 0, 1), (1, 2, 0), (2, 1, 0))
IDENTITY_LABEL = 0
SWAP_LABEL = 2


def _check(g):
    g = tuple(int(x) for x in g)
    if sorted(g) != list(range(len(g))):
        raise ValueError(f"{g} is not a permutation of 0..{len(g) - 1}")
    return g


def identity(q: int) -> tuple:
    return tuple(range(q))


def compose(g, h) -> tuple:
    g, h = _check(g), _check(h)
    if len(g) != len(h):
        raise ValueError("cannot compose permutations of different degree")
    return tuple(g[h[x]] for x in range(len(g)))


def inverse(g) -> tuple:
    g = _check(g)
    out = [0] * len(g)
    for x, y in enumerate(g):
        out[y] = x
    return tuple(out)


def cycles(g) -> list[tuple]:
    g = _check(g)
    seen = [False] * len(g)
    out = []
    for start in range(len(g)):
        if seen[start]:
            continue
        cyc = []
        x = start
        while not seen[x]:
            seen[x] = True
            cyc.append(x)
            x = g[x]
        out.append(tuple(cyc))
    return out


def cycle_count(g) -> int:
    """Number of disjoint cycles, fixed points included."""
    return len(cycles(g))


def cycle_type(g) -> tuple:
    return tuple(sorted((len(c) for c in cycles(g)), reverse=True))


def is_transposition(g) -> bool:
    g = _check(g)
    return sum(1 for x, y in enumerate(g) if x != y) == 2


@lru_cache(maxsize=None)
def elements(q: int) -> tuple:
    """All of S_Q; for Q = 3 in the fixed spin-label order."""
    if not 1 <= q <= MAX_Q:
        raise ValueError(f"Q must be in [1, {MAX_Q}]")
    if q == 3:
        return S3_ORDER
    return tuple(itertools.permutations(range(q)))


@lru_cache(maxsize=None)
def tables(q: int):
    """Integer group tables over the labels of `elements(q)`.

    Returns ``(mul, rel, cyc)`` with ``mul[a, b]`` the label of g_a g_b,
    ``rel[a, b]`` the label of g_a^{-1} g_b and ``cyc[a]`` the cycle count.
    """
    els = elements(q)
    index = {g: i for i, g in enumerate(els)}
    n = len(els)
    mul = np.empty((n, n), dtype=np.int64)
    rel = np.empty((n, n), dtype=np.int64)
    for a, ga in enumerate(els):
        ia = inverse(ga)
        for b, gb in enumerate(els):
            mul[a, b] = index[compose(ga, gb)]
            rel[a, b] = index[compose(ia, gb)]
    cyc = np.array([cycle_count(g) for g in els], dtype=np.int64)
    for arr in (mul, rel, cyc):
        arr.setflags(write=False)
    return mul, rel, cyc


def label(g) -> int:
    g = _check(g)
    return elements(len(g)).index(g)


def involutions(q: int) -> list[int]:
    """Labels of the non-identity involutions (g^2 = e, g != e)."""
    mul, _, _ = tables(q)
    e = label(identity(q))
    return [a for a in range(len(elements(q))) if a != e and mul[a, a] == e]


# ---------------------------------------------------------------- Weingarten


@lru_cache(maxsize=None)
def _weingarten_matrix(q: int, dim: float) -> np.ndarray:
    if dim < q:
        raise ValueError(f"Gram matrix is singular for D={dim} < Q={q}")
    _, rel, cyc = tables(q)
    gram = float(dim) ** cyc[rel].astype(float)
    wg = np.linalg.inv(gram)
    wg.setflags(write=False)
    return wg


def weingarten_table(q: int, dim: float) -> np.ndarray:
    """Wg_D(g) for every label g, from inverting the Gram matrix D^{|s^-1 t|}."""
    wg = _weingarten_matrix(q, float(dim))
    e = label(identity(q))
    # Wg(s^-1 t) is the (s, t) entry; read the row of the identity.
    return np.array(wg[e])


def weingarten(g, dim: float) -> float:
    g = _check(g)
    return float(weingarten_table(len(g), dim)[label(g)])


def gram_matrix(q: int, dim: float) -> np.ndarray:
    _, rel, cyc = tables(q)
    return float(dim) ** cyc[rel].astype(float)


# ----------------------------------------------------------------- weights


def measurement_weight(g, p: float, d: float, q: int | None = None) -> float:
    """Measurement-averaged replica weight W_p(g) for random projectors.

    ``(1 - p) d^|g| + p d^Q`` for p >= 0 and ``(1 - p) d^|g|`` for p < 0.
    """
    g = _check(g)
    q = len(g) if q is None else q
    w = (1.0 - p) * float(d) ** cycle_count(g)
    if p >= 0:
        w += p * float(d) ** q
    return w


def plaquette_weight(gi, gj, gk, pi: float, pj: float, d: float) -> float:
    """J_p(g_i, g_j; g_k) as the exact sum over intermediate permutations."""
    gi, gj, gk = _check(gi), _check(gj), _check(gk)
    q = len(gk)
    if not len(gi) == len(gj) == q:
        raise ValueError("permutations must share Q")
    wg = weingarten_table(q, float(d) ** 2)
    total = 0.0
    for gl in elements(q):
        total += (
            measurement_weight(compose(inverse(gi), gl), pi, d, q)
            * measurement_weight(compose(inverse(gj), gl), pj, d, q)
            * wg[label(compose(inverse(gl), gk))]
        )
    return total


def bond_energy(g, p: float, d: float = math.inf, clamp: float = DEFAULT_CLAMP) -> float:
    """Large-d bond energy E(g) = -ln[(1-p)(delta_g + delta'_g / d) + theta(p) p].

    delta_g marks the identity and delta'_g a transposition.  The 1/d term is
    dropped for ``d = inf``; values above ``clamp`` (including the log of a
    non-positive argument) are replaced by ``clamp``.
    """
    g = _check(g)
    is_id = g == identity(len(g))
    arg = 0.0
    if is_id:
        arg = 1.0 - p
    elif math.isfinite(d) and is_transposition(g):
        arg = (1.0 - p) / d
    if p > 0:
        arg += p
    if arg <= 0:
        return float(clamp)
    return min(-math.log(arg), float(clamp))


def bond_energy_table(p_layers, q: int = 3, d: float = math.inf, clamp: float = DEFAULT_CLAMP) -> np.ndarray:
    """Array ``E[layer, label]`` of bond energies for each layer weight."""
    els = elements(q)
    p_layers = np.atleast_1d(np.asarray(p_layers, dtype=float))
    out = np.empty((len(p_layers), len(els)))
    for i, p in enumerate(p_layers):
        out[i] = [bond_energy(g, p, d, clamp) for g in els]
    return out


def export_weights_csv(path, q: int, d: float, p_values, clamp: float = DEFAULT_CLAMP) -> None:
    """Audit table of W_p, Wg and E keyed by cycle type."""
    reps = {}
    for g in elements(q):
        reps.setdefault(cycle_type(g), g)
    rows = []
    wg = weingarten_table(q, float(d) ** 2) if float(d) ** 2 >= q else None
    for p in p_values:
        for ct, g in sorted(reps.items(), reverse=True):
            rows.append([
                "-".join(map(str, ct)), p,
                measurement_weight(g, p, d, q),
                "" if wg is None else wg[label(g)],
                bond_energy(g, p, d, clamp),
            ])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cycle_type", "p", "W_p", "Wg_d2", "E"])
        w.writerows(rows)


def n_elements(q: int) -> int:
    return math.factorial(q)
