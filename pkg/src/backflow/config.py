"""Run configuration: INI-style ``key = value`` files with a fixed schema.

Every key has a type and a default; defaults reproduce the circuit setting
(L_x = 40, L_y = 50, Q = 3, omega dt = 1/2, Gamma/omega = 0.2).  Lists are
comma separated, or ``start:stop:step`` with an inclusive stop.
"""
from __future__ import annotations

import configparser
import io
import math
import re

import numpy as np


class ConfigError(ValueError):
    """Schema violation, reported with the offending line when known."""

    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line else msg)


def _float(s):
    return float(s)


def _pos_int(s):
    v = int(s)
    if v < 1:
        raise ValueError("must be a positive integer")
    return v


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise ValueError("must be a nonnegative integer")
    return v


def _pos_float(s):
    v = float(s)
    if not v > 0:
        raise ValueError("must be positive")
    return v


def _expand(s, conv):
    s = s.strip()
    if not s:
        return []
    if ":" in s:
        parts = s.split(":")
        if len(parts) != 3:
            raise ValueError("range must be start:stop:step")
        a, b, h = (float(x) for x in parts)
        if h <= 0:
            raise ValueError("range step must be positive")
        n = int(math.floor((b - a) / h + 1e-9)) + 1
        return [conv(round(a + k * h, 10)) for k in range(max(n, 0))]
    return [conv(x) for x in s.split(",") if x.strip()]


def _float_list(s):
    return _expand(s, float)


def _int_list(s):
    return _expand(s, lambda x: int(round(float(x))))


def _choice(*opts):
    def conv(s):
        s = s.strip().lower()
        if s not in opts:
            raise ValueError(f"must be one of {', '.join(opts)}")
        return s
    return conv


def _opt_float(s):
    return None if s.strip().lower() in ("", "none") else float(s)


SCHEMA = {
    "rate": {
        "kind": (_choice("constant", "lorentzian", "tabulated"), "lorentzian"),
        "ratio": (_pos_float, "0.2"),
        "omega": (_pos_float, "1.0"),
        "delta0": (_float, "1.0"),
        "dt": (_pos_float, "0.5"),
        "layers": (_pos_int, "50"),
        "target_p": (_opt_float, "0.15"),
        "table": (str, ""),
    },
    "lattice": {
        "lx": (_pos_int, "40"),
        "ly": (_pos_int, "50"),
        "q": (_pos_int, "3"),
        "d": (_pos_float, "inf"),
        "clamp": (_pos_float, "50"),
        "init": (_choice("identity", "random"), "identity"),
    },
    "mc": {
        "n_therm": (_nonneg_int, "25000"),
        "stride": (_pos_int, "50"),
        "n_measurements": (_pos_int, "200"),
        "algorithm": (_choice("wolff", "metropolis"), "wolff"),
        "p": (_float_list, "0.05:0.40:0.025"),
        "l_a": (_int_list, ""),
        "replicas": (_pos_int, "1"),
    },
    "trajectory": {
        "n_sites": (_pos_int, "1"),
        "hamiltonian": (_choice("none", "xx", "zz"), "none"),
        "coupling": (_float, "1.0"),
        "initial": (_choice("excited", "bell", "plus"), "excited"),
        "dt": (_pos_float, "0.02"),
        "t_final": (_pos_float, "8.0"),
        "n_samples": (_pos_int, "100000"),
        "record_every": (_pos_int, "25"),
        "tolerance": (_pos_float, "0.02"),
        "mode": (_choice("sample", "mean"), "sample"),
    },
    "analysis": {
        "input": (str, ""),
        "threshold": (_pos_float, "0.2"),
    },
    "heatmap": {
        "input": (str, ""),
        "title": (str, ""),
    },
    "run": {
        "seed": (_nonneg_int, "0"),
        "threads": (_nonneg_int, "0"),
    },
}


def _line_numbers(text):
    """Map (section, key) -> 1-based line number."""
    out = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            out[(section, None)] = n
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section:
            out[(section, m.group(1).strip().lower())] = n
    return out


def parse_config(text: str) -> dict:
    """Parse and validate; returns ``{section: {key: value}}`` with defaults filled in."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    try:
        cp.read_file(io.StringIO(text))
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ConfigError("cannot parse line", lineno) from None
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None)) from None
    lines = _line_numbers(text)
    out = {}
    for sec in cp.sections():
        if sec.lower() not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", lines.get((sec.lower(), None)))
    for sec, keys in SCHEMA.items():
        given = cp[sec] if cp.has_section(sec) else {}
        for k in given:
            if k not in keys:
                raise ConfigError(f"unknown key {k!r} in [{sec}]", lines.get((sec, k)))
        vals = {}
        for k, (conv, default) in keys.items():
            raw = given.get(k, default)
            try:
                vals[k] = conv(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"[{sec}] {k} = {raw!r}: {exc}", lines.get((sec, k))) from None
        out[sec] = vals
    _cross_check(out, lines)
    return out


def _cross_check(cfg, lines):
    lat, mc, rate = cfg["lattice"], cfg["mc"], cfg["rate"]
    if lat["lx"] % 2:
        raise ConfigError("lattice lx must be even", lines.get(("lattice", "lx")))
    if not mc["l_a"]:
        mc["l_a"] = list(range(0, lat["lx"] // 2 + 1, 2))
    if any(not 0 <= la <= lat["lx"] for la in mc["l_a"]):
        raise ConfigError("every l_a must lie in [0, lx]", lines.get(("mc", "l_a")))
    if any(not 0 <= p <= 1 for p in mc["p"]):
        raise ConfigError("every p must lie in [0, 1]", lines.get(("mc", "p")))
    if rate["layers"] < lat["ly"]:
        raise ConfigError("rate layers must cover lattice ly", lines.get(("rate", "layers")))
    if rate["kind"] == "tabulated" and not rate["table"]:
        raise ConfigError("tabulated rate needs a table file", lines.get(("rate", "kind")))
    if cfg["trajectory"]["n_sites"] > 12:
        raise ConfigError("trajectory n_sites above the dense-state cap", lines.get(("trajectory", "n_sites")))


def render_config(cfg: dict) -> str:
    """Resolved configuration as text that parses back to the same values."""
    buf = []
    for sec, keys in cfg.items():
        buf.append(f"[{sec}]")
        for k, v in keys.items():
            if isinstance(v, list):
                v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            elif v is None:
                v = "none"
            buf.append(f"{k} = {v}")
        buf.append("")
    return "\n".join(buf)


def load_table(path) -> tuple:
    tab = np.loadtxt(path, delimiter=",", ndmin=2)
    return tuple(map(tuple, tab[:, :2]))
