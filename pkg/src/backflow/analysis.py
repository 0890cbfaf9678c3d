"""Entanglement proxies from Potts sweeps: F_A(l_A) slopes and the transition."""
from __future__ import annotations

import csv
import json
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class NoTransition(ValueError):
    """Slope series never falls below the threshold."""


@dataclass
class SweepResult:
    """Grid of mean energies ``F[i, j]`` at ``p[i]``, ``l_a[j]``."""

    p: np.ndarray
    l_a: np.ndarray
    F: np.ndarray
    F_err: np.ndarray
    n_samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.l_a = np.asarray(self.l_a, dtype=int)
        self.F = np.asarray(self.F, dtype=float)
        self.F_err = np.asarray(self.F_err, dtype=float)
        self.n_samples = np.asarray(self.n_samples, dtype=int)
        shape = (len(self.p), len(self.l_a))
        for name in ("F", "F_err", "n_samples"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} must have shape {shape}")
        if np.any(self.F_err < 0):
            raise ValueError("standard errors must be nonnegative")
        if np.any(self.n_samples < 1):
            raise ValueError("every grid cell needs at least one sample")

    def row(self, p) -> int:
        hits = np.flatnonzero(np.isclose(self.p, p, rtol=0, atol=1e-9))
        if len(hits) == 0:
            raise KeyError(f"p={p} not in sweep")
        return int(hits[0])

    def entropy_proxy(self) -> np.ndarray:
        """F_A - F_0 per p; needs l_A = 0 in the grid."""
        j0 = np.flatnonzero(self.l_a == 0)
        if len(j0) == 0:
            raise ValueError("l_A = 0 is not in the sweep")
        return self.F - self.F[:, j0[:1]]


def _line_fit(x, y, err):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(np.unique(x)) < 3:
        raise ValueError("need at least 3 distinct l_A values for a slope fit")
    A = np.column_stack([np.ones_like(x), x])
    err = np.asarray(err, dtype=float)
    if np.all(err > 0):
        w = 1.0 / err ** 2
        cov = np.linalg.inv(A.T @ (A * w[:, None]))
        coef = cov @ (A.T @ (w * y))
        return float(coef[1]), float(math.sqrt(cov[1, 1]))
    # no usable errors: ordinary least squares with residual variance
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = len(x) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(A.T @ A)
    return float(coef[1]), float(math.sqrt(max(cov[1, 1], 0.0)))


def slope_fit(result: SweepResult, p) -> tuple[float, float]:
    """Weighted least-squares slope dF_A/dl_A at fixed p, with its standard error."""
    i = result.row(p)
    return _line_fit(result.l_a, result.F[i], result.F_err[i])


def normalized_slope(result: SweepResult, p) -> tuple[float, float]:
    """Slope of F_A / <F_A>_{l_A}; NaN when the mean vanishes."""
    i = result.row(p)
    mean = result.F[i].mean()
    if mean == 0:
        return math.nan, math.nan
    return _line_fit(result.l_a, result.F[i] / mean, result.F_err[i] / abs(mean))


def slopes(result: SweepResult):
    """Arrays (slope, slope_err, normalized, normalized_err) over the p grid."""
    out = np.array([slope_fit(result, p) + normalized_slope(result, p) for p in result.p])
    return out[:, 0], out[:, 1], out[:, 2], out[:, 3]


def detect_transition(p, slope, threshold: float = 0.2) -> tuple[float, float]:
    """Midpoint of the first grid interval where the slope drops below threshold * max.

    Returns ``(p_c, half_spacing)``.
    """
    p = np.asarray(p, dtype=float)
    s = np.asarray(slope, dtype=float)
    if len(p) != len(s) or len(p) < 2:
        raise ValueError("need matching p and slope arrays of length >= 2")
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    order = np.argsort(p)
    p, s = p[order], s[order]
    cut = threshold * np.nanmax(s)
    below = s < cut
    # first interval going from above to below the cut
    for i in range(len(p) - 1):
        if not below[i] and below[i + 1]:
            tail = s[i + 1:]
            if np.any(tail > 0.5 * np.nanmax(s)):
                warnings.warn("slope series is not monotone past the detected crossing", stacklevel=2)
            return float(0.5 * (p[i] + p[i + 1])), float(0.5 * (p[i + 1] - p[i]))
    raise NoTransition("slope never falls below the threshold in the sampled range")


def detect_drop(p, slope, before: float | None = None) -> tuple[float, float]:
    """Midpoint of the steepest downward step of a slope series.

    Only intervals ending at or below ``before`` are considered; used for the
    early drop of the normalized slope ahead of the main transition.
    """
    p = np.asarray(p, dtype=float)
    s = np.asarray(slope, dtype=float)
    order = np.argsort(p)
    p, s = p[order], s[order]
    ds = np.diff(s)
    ok = np.ones(len(ds), dtype=bool) if before is None else p[1:] <= before + 1e-12
    if not ok.any():
        raise NoTransition("no interval before the cutoff")
    i = int(np.flatnonzero(ok)[np.argmin(ds[ok])])
    if ds[i] >= 0:
        raise NoTransition("slope never decreases before the cutoff")
    return float(0.5 * (p[i] + p[i + 1])), float(0.5 * (p[i + 1] - p[i]))


def local_peak(p, slope):
    """Interior local maxima of a slope series, reported (not gated on)."""
    s = np.asarray(slope, dtype=float)
    idx = [i for i in range(1, len(s) - 1) if s[i] > s[i - 1] and s[i] > s[i + 1]]
    return [float(np.asarray(p)[i]) for i in idx]


# ------------------------------------------------------------------- I/O

_CHAIN_RE = re.compile(r"chain_p(?P<p>[0-9.]+)_l(?P<l>\d+)_s(?P<s>\d+)\.csv$")


def chain_name(p: float, l_a: int, seed: int, kind: str = "chain") -> str:
    return f"{kind}_p{p:.4f}_l{l_a:02d}_s{seed}.csv"


def write_chain_csv(path, total, boundary, stride: int, n_therm: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "total_energy", "boundary_energy"])
        for k, (e, b) in enumerate(zip(total, boundary)):
            w.writerow([n_therm + (k + 1) * stride, repr(float(e)), repr(float(b))])


def read_chain_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0].astype(int), data[:, 1], data[:, 2]


def write_matrix_csv(path, matrix) -> None:
    np.savetxt(path, np.asarray(matrix, dtype=float), delimiter=",", fmt="%.17g")


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def load_sweep(directory, n_batches: int = 20) -> SweepResult:
    """Assemble a SweepResult from the chain CSVs in ``directory``.

    Chains sharing (p, l_A) but differing in seed are pooled; the standard
    error comes from batch means within each chain, combined in quadrature.
    """
    from .potts import batch_stderr

    cells = {}
    for f in sorted(Path(directory).glob("chain_*.csv")):
        m = _CHAIN_RE.search(f.name)
        if not m:
            continue
        _, total, _ = read_chain_csv(f)
        cells.setdefault((float(m["p"]), int(m["l"])), []).append(total)
    if not cells:
        raise FileNotFoundError(f"no chain CSVs in {directory}")
    ps = sorted({k[0] for k in cells})
    ls = sorted({k[1] for k in cells})
    F = np.full((len(ps), len(ls)), np.nan)
    E = np.zeros_like(F)
    N = np.zeros(F.shape, dtype=int)
    for (p, l), series in cells.items():
        i, j = ps.index(p), ls.index(l)
        means = [s.mean() for s in series]
        errs = [batch_stderr(s, min(n_batches, len(s))) if len(s) > 1 else 0.0 for s in series]
        F[i, j] = float(np.mean(means))
        E[i, j] = float(np.sqrt(np.sum(np.square(errs)))) / len(series)
        N[i, j] = sum(len(s) for s in series)
    if np.isnan(F).any():
        raise ValueError("sweep grid is incomplete")
    return SweepResult(np.array(ps), np.array(ls), F, E, N)


def write_summary_csv(path, result: SweepResult) -> None:
    s, se, n, ne = slopes(result)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "slope", "slope_err", "normalized_slope", "normalized_err"])
        for row in zip(result.p, s, se, n, ne):
            w.writerow([f"{row[0]:.4f}"] + [repr(float(v)) for v in row[1:]])


def write_curves_csv(path, result: SweepResult) -> None:
    """Long-format F_A and F_A - F_0 table."""
    proxy = result.entropy_proxy() if 0 in result.l_a else None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "l_A", "F_A", "F_A_err", "F_A_minus_F_0", "n_samples"])
        for i, p in enumerate(result.p):
            for j, la in enumerate(result.l_a):
                w.writerow([f"{p:.4f}", int(la), repr(float(result.F[i, j])), repr(float(result.F_err[i, j])),
                            "" if proxy is None else repr(float(proxy[i, j])), int(result.n_samples[i, j])])


def transition_report(result: SweepResult, threshold: float = 0.2) -> dict:
    s, _, n, _ = slopes(result)
    out = {"threshold": threshold, "method": "first crossing of threshold * max slope", "transitions": {}}
    for name, series in (("raw", s), ("normalized", n)):
        try:
            pc, half = detect_transition(result.p, series, threshold)
            out["transitions"][name] = {"p_c": pc, "half_spacing": half}
        except NoTransition as exc:
            out["transitions"][name] = {"p_c": None, "error": str(exc)}
        out["transitions"][name]["local_peaks"] = local_peak(result.p, series)
    raw_pc = out["transitions"]["raw"].get("p_c")
    if raw_pc is not None:
        try:
            pc1, half = detect_drop(result.p, n, before=raw_pc)
            out["transitions"]["normalized_early_drop"] = {"p_c": pc1, "half_spacing": half}
        except NoTransition as exc:
            out["transitions"]["normalized_early_drop"] = {"p_c": None, "error": str(exc)}
    return out


def write_transition_json(path, result: SweepResult, threshold: float = 0.2) -> dict:
    rep = transition_report(result, threshold)
    Path(path).write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    return rep


# --------------------------------------------------------------- heatmaps


def _color(v: float) -> str:
    # dark blue -> white -> dark red
    stops = np.array([[33, 64, 154], [247, 247, 247], [178, 24, 43]], dtype=float)
    x = min(max(v, 0.0), 1.0) * 2
    i = min(int(x), 1)
    c = stops[i] + (stops[i + 1] - stops[i]) * (x - i)
    return "#%02x%02x%02x" % tuple(int(round(u)) for u in c)


def emit_heatmap(matrix, path, title: str = "", vmin: float | None = None, vmax: float | None = None,
                 cell: int = 8) -> Path:
    """Write a self-contained SVG of ``matrix`` with row 0 at the bottom."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise ValueError("heatmap needs a non-empty rectangular matrix")
    lo = float(np.nanmin(m)) if vmin is None else float(vmin)
    hi = float(np.nanmax(m)) if vmax is None else float(vmax)
    span = hi - lo
    ny, nx = m.shape
    top = 24
    width, height = nx * cell, ny * cell
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width + 20}" height="{height + top + 24}">',
        f'<text x="10" y="16" font-family="monospace" font-size="12">{title}</text>',
    ]
    for r in range(ny):
        y = top + (ny - 1 - r) * cell
        for c in range(nx):
            v = 0.5 if span == 0 else (m[r, c] - lo) / span
            parts.append(f'<rect x="{10 + c * cell}" y="{y}" width="{cell}" height="{cell}" fill="{_color(v)}"/>')
    parts.append(f'<text x="10" y="{top + height + 16}" font-family="monospace" font-size="11">'
                 f"min={lo:.6g} max={hi:.6g}</text>")
    parts.append("</svg>\n")
    path = Path(path)
    path.write_text("\n".join(parts))
    return path
