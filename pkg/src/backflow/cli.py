"""Command line entry point: ``backflow <subcommand> --config FILE --out DIR``."""
from __future__ import annotations

import argparse
import glob
import json
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, analysis, rate
from .config import ConfigError, load_table, parse_config, render_config

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
ENV_OUT = "BACKFLOW_OUT"
ENV_THREADS = "BACKFLOW_THREADS"


def build_profile(cfg) -> rate.RateProfile:
    r = cfg["rate"]
    if r["kind"] == "constant":
        return rate.RateProfile("constant", delta0=r["delta0"])
    if r["kind"] == "lorentzian":
        return rate.RateProfile.lorentzian(r["ratio"], r["omega"], r["delta0"])
    return rate.RateProfile("tabulated", table=load_table(r["table"]))


def layer_schedule(cfg, p: float | None) -> rate.RateSchedule:
    r = cfg["rate"]
    return rate.discretize(build_profile(cfg), r["dt"], r["layers"], p)


def chain_seed(base: int, i_p: int, l_a: int, rep: int) -> int:
    return int(np.random.SeedSequence([base, i_p, l_a, rep]).generate_state(1, np.uint64)[0] >> np.uint64(1))


class Manifest:
    def __init__(self, out: Path, command: str, cfg: dict):
        self.out = out
        self.data = {"command": command, "version": __version__, "config": render_config(cfg),
                     "files": [], "chains": [], "failures": []}
        self.t0 = time.time()

    def add(self, path) -> Path:
        path = Path(path)
        self.data["files"].append(str(path.relative_to(self.out)))
        return path

    def write(self):
        self.data["wall_time_s"] = round(time.time() - self.t0, 3)
        self.data["files"].sort()
        (self.out / "config_echo.ini").write_text(self.data["config"])
        (self.out / "manifest.json").write_text(json.dumps(self.data, indent=2) + "\n")


# ------------------------------------------------------------ subcommands


def cmd_rate_report(cfg, out: Path, man: Manifest, args):
    prof = build_profile(cfg)
    sched = layer_schedule(cfg, cfg["rate"]["target_p"])
    sched.to_csv(man.add(out / "schedule.csv"))
    rep = {
        "kind": prof.kind,
        "dt": sched.dt,
        "layers": len(sched),
        "target_p": cfg["rate"]["target_p"],
        "negative_layers": [list(w) for w in sched.negative_layers()],
        "max_p": float(sched.p.max()),
        "argmax_p": int(sched.p.argmax()),
        "min_p": float(sched.p.min()),
    }
    if prof.kind == "lorentzian":
        tmin, vmin = rate.first_minimum(prof)
        rep.update(ratio=prof.ratio, first_minimum_t=tmin, first_minimum_value=vmin,
                   first_minimum_sign=rate.first_minimum_sign(prof),
                   negative_windows=[list(w) for w in rate.negative_windows(prof, len(sched) * sched.dt)])
    (man.add(out / "rate_report.json")).write_text(json.dumps(rep, indent=2) + "\n")


def _trajectory_system(cfg):
    from . import trajectories as tj

    t = cfg["trajectory"]
    n = t["n_sites"]
    dt = t["dt"]
    steps = int(round(t["t_final"] / dt))
    sched = rate.discretize(build_profile(cfg), dt, steps)
    channels = [tj.JumpChannel(tj.SIGMA_MINUS, s, n, sched) for s in range(n)]
    dim = 2 ** n
    H = np.zeros((dim, dim), dtype=complex)
    if t["hamiltonian"] != "none":
        if n < 2:
            raise ConfigError("xx/zz Hamiltonians need n_sites >= 2")
        op = tj.SIGMA_X if t["hamiltonian"] == "xx" else tj.SIGMA_Z
        for s in range(n - 1):
            H += t["coupling"] * tj.embed(op, s, n) @ tj.embed(op, s + 1, n)
    if t["initial"] == "excited":
        psi = tj.product_state(*[tj.EXCITED] * n)
    elif t["initial"] == "plus":
        psi = tj.product_state(*[(tj.EXCITED + tj.GROUND) / np.sqrt(2)] * n)
    else:
        if n != 2:
            raise ConfigError("bell initial state needs n_sites = 2")
        psi = (tj.product_state(tj.EXCITED, tj.GROUND) + tj.product_state(tj.GROUND, tj.EXCITED)) / np.sqrt(2)
    return psi, H, channels, steps


def cmd_trajectory_validate(cfg, out: Path, man: Manifest, args):
    from . import trajectories as tj

    t = cfg["trajectory"]
    psi, H, channels, steps = _trajectory_system(cfg)
    res = tj.evolve_ensemble(psi, H, channels, steps, t["n_samples"], seed=args.seed,
                             record_every=t["record_every"], mode=t["mode"])
    times, me = tj.master_equation_evolve(np.outer(psi, psi.conj()), H, channels, steps,
                                          record_every=t["record_every"])
    dist = [tj.trace_distance(a, b) for a, b in zip(res.rhos, me)]
    res.to_csv(man.add(out / "classes.csv"))
    man.add(out / "rho_ensemble.json").write_text(tj.density_to_json(res.rho) + "\n")
    man.add(out / "rho_master.json").write_text(tj.density_to_json(me[-1]) + "\n")
    rep = {"times": [float(x) for x in times], "trace_distance": dist, "max_trace_distance": max(dist),
           "tolerance": t["tolerance"], "pass": bool(max(dist) < t["tolerance"]),
           "n_classes": len(res.classes), "n_samples": t["n_samples"]}
    man.add(out / "trajectory_report.json").write_text(json.dumps(rep, indent=2) + "\n")


def _run_one(job):
    """Worker: one Markov chain.  Returns (key, arrays) or (key, error text)."""
    from . import potts

    key, lat_kw, mc_kw = job
    try:
        lat = potts.build_lattice(**lat_kw)
        r = potts.run_chain(lat, potts.McConfig(**mc_kw))
        return key, {"total": r.total, "boundary": r.boundary, "local": r.local,
                     "misaligned": r.misaligned, "tau": r.tau_int}
    except Exception as exc:  # isolate failures per chain
        return key, f"{type(exc).__name__}: {exc}"


def sweep_jobs(cfg, base_seed):
    lat, mc = cfg["lattice"], cfg["mc"]
    jobs = []
    for i_p, p in enumerate(mc["p"]):
        sched = layer_schedule(cfg, p)
        for la in mc["l_a"]:
            for rep in range(mc["replicas"]):
                seed = chain_seed(base_seed, i_p, la, rep)
                lat_kw = dict(lx=lat["lx"], ly=lat["ly"], q=lat["q"], schedule=sched.p, l_a=la,
                              d=lat["d"], clamp=lat["clamp"], init=lat["init"], seed=seed)
                mc_kw = dict(n_therm=mc["n_therm"], n_sample_stride=mc["stride"],
                             n_measurements=mc["n_measurements"], seed=seed, algorithm=mc["algorithm"])
                jobs.append(((p, la, seed), lat_kw, mc_kw))
    return jobs


def cmd_mc_sweep(cfg, out: Path, man: Manifest, args):
    if not cfg["mc"]["p"]:
        raise ConfigError("empty p grid")
    if not cfg["mc"]["l_a"]:
        raise ConfigError("empty l_a grid")
    jobs = sweep_jobs(cfg, args.seed)
    chains = out / "chains"
    chains.mkdir(exist_ok=True)
    threads = args.threads
    if threads <= 1:
        results = map(_run_one, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=threads)
        results = pool.map(_run_one, jobs)
    mc = cfg["mc"]
    for key, res in results:
        p, la, seed = key
        entry = {"p": p, "l_a": la, "seed": seed}
        if isinstance(res, str):
            entry["error"] = res
            man.data["failures"].append(entry)
            continue
        analysis.write_chain_csv(man.add(chains / analysis.chain_name(p, la, seed)), res["total"],
                                 res["boundary"], mc["stride"], mc["n_therm"])
        analysis.write_matrix_csv(man.add(chains / analysis.chain_name(p, la, seed, "localmap")), res["local"])
        analysis.write_matrix_csv(man.add(chains / analysis.chain_name(p, la, seed, "misaligned")),
                                  res["misaligned"][None, :])
        entry["tau_int"] = float(res["tau"])
        man.data["chains"].append(entry)
    if threads > 1:
        pool.shutdown()
    if man.data["failures"]:
        raise RuntimeError(f"{len(man.data['failures'])} chain(s) failed; see manifest")
    _write_analysis(cfg, chains, out, man)


def _write_analysis(cfg, chains_dir, out, man):
    res = analysis.load_sweep(chains_dir)
    analysis.write_summary_csv(man.add(out / "summary.csv"), res)
    analysis.write_curves_csv(man.add(out / "curves.csv"), res)
    analysis.write_transition_json(man.add(out / "transition.json"), res, cfg["analysis"]["threshold"])


def cmd_analyze(cfg, out: Path, man: Manifest, args):
    src = Path(cfg["analysis"]["input"] or out / "chains")
    if not src.is_dir():
        raise ConfigError(f"analysis input {src} is not a directory")
    _write_analysis(cfg, src, out, man)


def cmd_heatmap(cfg, out: Path, man: Manifest, args):
    spec = cfg["heatmap"]["input"]
    if not spec:
        raise ConfigError("[heatmap] input is required")
    paths = [Path(x) for x in sorted(glob.glob(spec))]
    if not paths or not all(p.is_file() for p in paths):
        raise ConfigError(f"no heatmap input matches {spec}")
    for p in paths:
        title = cfg["heatmap"]["title"] or p.stem
        analysis.emit_heatmap(analysis.read_matrix_csv(p), man.add(out / (p.stem + ".svg")), title)


COMMANDS = {
    "rate-report": cmd_rate_report,
    "trajectory-validate": cmd_trajectory_validate,
    "mc-sweep": cmd_mc_sweep,
    "analyze": cmd_analyze,
    "heatmap": cmd_heatmap,
}


def make_parser():
    ap = argparse.ArgumentParser(prog="backflow", description=__doc__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="key = value configuration file")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int, help="base seed (overrides [run] seed)")
    ap.add_argument("--threads", type=int, help="worker processes (0 = all cores)")
    return ap


def main(argv=None) -> int:
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        text = Path(args.config).read_text() if args.config else ""
        cfg = parse_config(text)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            cfg["run"]["seed"] = args.seed
        args.seed = cfg["run"]["seed"]
        threads = args.threads if args.threads is not None else cfg["run"]["threads"]
        threads = threads or os.cpu_count() or 1
        if os.environ.get(ENV_THREADS):
            threads = min(threads, int(os.environ[ENV_THREADS]))
        args.threads = cfg["run"]["threads"] = max(threads, 1)
        out = Path(args.out or os.environ.get(ENV_OUT) or "backflow_out")
        # validation that needs no output happens before anything is written
        if args.command == "mc-sweep" and not cfg["mc"]["p"]:
            raise ConfigError("empty p grid")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        out.mkdir(parents=True, exist_ok=True)
        man = Manifest(out, args.command, cfg)
        COMMANDS[args.command](cfg, out, man, args)
        man.write()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        traceback.print_exc()
        print(f"runtime failure: {exc}", file=sys.stderr)
        try:
            man.write()
        except Exception:
            pass
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
