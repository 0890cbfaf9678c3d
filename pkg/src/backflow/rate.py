"""Time-dependent decay rates and their per-layer discretization.

A rate profile is either constant, the time-convolutionless rate of a
Lorentzian bath, or a user table.  `discretize` turns a profile into a
`RateSchedule`: one signed weight ``p_i = Delta(t_i) dt`` per measurement
layer.  Negative entries mark non-Markovian (information back-flow) steps.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

KINDS = ("constant", "lorentzian", "tabulated")


@dataclass(frozen=True)
class RateProfile:
    """Decay rate Delta(t).

    kind : "constant", "lorentzian" (TCL rate of a Lorentzian bath) or
        "tabulated".
    delta0 : amplitude, inverse time.
    gamma, omega : bath bandwidth and detuning, inverse time (lorentzian).
    table : (time, rate) pairs, strictly increasing in time (tabulated).
    """

    kind: str = "constant"
    delta0: float = 1.0
    gamma: float = 0.2
    omega: float = 1.0
    table: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown rate kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "lorentzian" and not (self.gamma > 0 and self.omega > 0):
            raise ValueError("lorentzian profile needs gamma > 0 and omega > 0")
        if self.kind == "tabulated":
            tab = np.asarray(self.table, dtype=float)
            if tab.ndim != 2 or tab.shape[1] != 2 or len(tab) < 2:
                raise ValueError("tabulated profile needs at least two (time, rate) pairs")
            if np.any(np.diff(tab[:, 0]) <= 0):
                raise ValueError("table times must be strictly increasing")
            object.__setattr__(self, "table", tuple(map(tuple, tab)))

    @classmethod
    def lorentzian(cls, ratio: float = 0.2, omega: float = 1.0, delta0: float = 1.0):
        """Lorentzian-bath profile parametrized by ``ratio = gamma / omega``."""
        return cls("lorentzian", delta0=delta0, gamma=ratio * omega, omega=omega)

    @property
    def ratio(self) -> float:
        return self.gamma / self.omega

    def asymptote(self) -> float:
        """Long-time value of the rate."""
        if self.kind == "constant":
            return self.delta0
        if self.kind == "lorentzian":
            return self.delta0 * self.ratio
        return self.table[-1][1]


def evaluate_rate(profile: RateProfile, t):
    """Rate Delta(t); accepts scalars or arrays of non-negative times."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("rate is only defined for t >= 0")
    if profile.kind == "constant":
        out = np.full_like(t_arr, profile.delta0)
    elif profile.kind == "lorentzian":
        r = profile.ratio
        w = profile.omega
        out = profile.delta0 * (
            r + np.exp(-profile.gamma * t_arr) * (np.sin(w * t_arr) - r * np.cos(w * t_arr))
        )
    else:
        tab = np.asarray(profile.table)
        if np.any(t_arr < tab[0, 0]) or np.any(t_arr > tab[-1, 0]):
            raise ValueError(
                f"time outside tabulated range [{tab[0, 0]}, {tab[-1, 0]}]; no extrapolation"
            )
        out = np.interp(t_arr, tab[:, 0], tab[:, 1])
    return float(out) if out.ndim == 0 else out


def _require_lorentzian(profile):
    if profile.kind != "lorentzian":
        raise ValueError("only defined for the lorentzian profile")


def first_minimum(profile: RateProfile) -> tuple[float, float]:
    """Location and value of the first local minimum of the rate.

    The minimum sits near ``omega t = 3 pi / 2``; it is searched on
    ``omega t in [pi, 2 pi]``.
    """
    _require_lorentzian(profile)
    w = profile.omega
    res = minimize_scalar(
        lambda t: evaluate_rate(profile, t),
        bounds=(math.pi / w, 2 * math.pi / w),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return float(res.x), float(res.fun)


def first_minimum_sign(profile: RateProfile) -> str:
    """``"negative"`` if the first minimum dips below zero, else ``"nonnegative"``."""
    _, value = first_minimum(profile)
    return "negative" if value < 0 else "nonnegative"


def negative_windows(profile: RateProfile, t_max: float, rtol: float = 1e-10):
    """Time intervals in [0, t_max] on which the rate is negative.

    Sign changes are bracketed on a fine grid and refined by root finding.
    """
    n = max(2000, int(200 * t_max * max(profile.omega, 1.0)))
    grid = np.linspace(0.0, t_max, n + 1)
    vals = evaluate_rate(profile, grid)
    f = lambda t: evaluate_rate(profile, t)  # noqa: E731
    windows = []
    start = None
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa >= 0 > fb:
            start = brentq(f, a, b, rtol=rtol, xtol=1e-14)
        elif fa < 0 <= fb and start is not None:
            windows.append((start, brentq(f, a, b, rtol=rtol, xtol=1e-14)))
            start = None
    if start is not None:
        windows.append((start, t_max))
    return windows


@dataclass(frozen=True)
class RateSchedule:
    """Signed per-layer weights ``p[i] = Delta(i dt) dt``."""

    dt: float
    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "p", p)
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    def __len__(self):
        return len(self.p)

    @property
    def sign_mask(self) -> np.ndarray:
        """True where the step is Markovian (p >= 0)."""
        return self.p >= 0

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.p)) * self.dt

    @property
    def positive(self) -> np.ndarray:
        return np.maximum(self.p, 0.0)

    @property
    def negative(self) -> np.ndarray:
        """Magnitude of the negative part, |min(p, 0)|."""
        return -np.minimum(self.p, 0.0)

    def rate(self, t: float) -> float:
        """Piecewise-constant rate p_k / dt on [k dt, (k+1) dt)."""
        k = int(math.floor(t / self.dt + 1e-9))
        k = min(max(k, 0), len(self.p) - 1)
        return self.p[k] / self.dt

    def negative_layers(self) -> list[tuple[int, int]]:
        """Half-open index intervals [start, stop) with p < 0."""
        out = []
        neg = ~self.sign_mask
        i = 0
        while i < len(neg):
            if neg[i]:
                j = i
                while j < len(neg) and neg[j]:
                    j += 1
                out.append((i, j))
                i = j
            else:
                i += 1
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer_index", "t", "p_i", "markovian_flag"])
            for i, (t, p) in enumerate(zip(self.times, self.p)):
                w.writerow([i, repr(float(t)), repr(float(p)), int(p >= 0)])


def discretize(profile: RateProfile, dt: float, layers: int, target_p: float | None = None) -> RateSchedule:
    """Per-layer signed weights at ``t_i = i dt``.

    With ``target_p`` the amplitude is chosen so that the weights approach
    ``target_p`` at late times (only the product rate * dt is physical);
    without it, ``p_i = Delta(t_i) dt`` with the profile's own amplitude.
    Weights above one are passed through unchanged.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if layers < 1:
        raise ValueError("need at least one layer")
    if target_p is not None and not 0 <= target_p <= 1:
        raise ValueError("target_p must lie in [0, 1]")
    t = np.arange(layers) * dt
    if target_p is None:
        return RateSchedule(dt, evaluate_rate(profile, t) * dt * np.ones(layers))
    if profile.kind == "constant":
        return RateSchedule(dt, np.full(layers, float(target_p)))
    if profile.kind == "lorentzian":
        r = profile.ratio
        wt = profile.omega * t
        p = target_p * (1.0 + np.exp(-profile.gamma * t) * (np.sin(wt) / r - np.cos(wt)))
        return RateSchedule(dt, p)
    tail = profile.asymptote()
    if tail == 0:
        raise ValueError("tabulated profile ends at zero rate; cannot normalize to target_p")
    return RateSchedule(dt, target_p * evaluate_rate(profile, t) / tail)


def schedule_from_values(values: Sequence[float], dt: float) -> RateSchedule:
    return RateSchedule(dt, np.asarray(values, dtype=float))
