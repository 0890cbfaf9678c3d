import json
from pathlib import Path

import pytest

from backflow import cli
from backflow.config import ConfigError, parse_config, render_config

SMALL = """
[rate]
kind = constant
[lattice]
lx = 8
ly = 6
[mc]
n_therm = 200
stride = 3
n_measurements = 30
p = 0.1, 0.3
l_a = 0:4:2
"""


def write(tmp_path, text, name="run.ini"):
    f = tmp_path / name
    f.write_text(text)
    return str(f)


def data_files(out):
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in Path(out).rglob("*")
            if p.is_file() and p.name not in ("manifest.json", "config_echo.ini")}


def test_defaults_match_circuit_setting():
    cfg = parse_config("")
    assert (cfg["lattice"]["lx"], cfg["lattice"]["ly"], cfg["lattice"]["q"]) == (40, 50, 3)
    assert cfg["mc"]["n_therm"] == 25000 and cfg["mc"]["stride"] == 50
    assert cfg["rate"]["ratio"] == 0.2 and cfg["rate"]["dt"] * cfg["rate"]["omega"] == 0.5
    assert cfg["mc"]["l_a"] == list(range(0, 21, 2))
    assert cfg["mc"]["p"][0] == 0.05 and cfg["mc"]["p"][-1] == 0.4 and len(cfg["mc"]["p"]) == 15


def test_line_numbered_diagnostics():
    with pytest.raises(ConfigError) as e:
        parse_config("[mc]\nstride = 1\nn_measurements = zero\n")
    assert e.value.line == 3
    with pytest.raises(ConfigError) as e:
        parse_config("[lattice]\n\nbogus = 1\n")
    assert e.value.line == 3
    with pytest.raises(ConfigError) as e:
        parse_config("[nope]\nx = 1\n")
    assert e.value.line == 1
    with pytest.raises(ConfigError):
        parse_config("not an ini line\n")


def test_render_round_trip():
    cfg = parse_config(SMALL)
    assert parse_config(render_config(cfg)) == cfg


def test_empty_p_grid_writes_nothing(tmp_path):
    out = tmp_path / "o"
    rc = cli.main(["mc-sweep", "--config", write(tmp_path, "[mc]\np =\n"), "--out", str(out)])
    assert rc == cli.EXIT_INVALID
    assert not out.exists()


def test_bad_flag_and_missing_config(tmp_path):
    assert cli.main(["no-such-command"]) == cli.EXIT_INVALID
    assert cli.main(["rate-report", "--config", str(tmp_path / "missing.ini")]) == cli.EXIT_INVALID


def test_runtime_failure_exit_code(tmp_path):
    cfg = write(tmp_path, "[analysis]\ninput = %s\n" % (tmp_path / "empty"))
    (tmp_path / "empty").mkdir()
    assert cli.main(["analyze", "--config", cfg, "--out", str(tmp_path / "a")]) == cli.EXIT_RUNTIME


def test_rate_report(tmp_path):
    out = tmp_path / "r"
    assert cli.main(["rate-report", "--out", str(out)]) == 0
    rep = json.loads((out / "rate_report.json").read_text())
    assert rep["negative_layers"] == [[8, 12]]
    assert rep["first_minimum_sign"] == "negative"
    man = json.loads((out / "manifest.json").read_text())
    assert sorted(man["files"]) == ["rate_report.json", "schedule.csv"]


def test_mc_sweep_manifest_and_reproducibility(tmp_path):
    cfg = write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["mc-sweep", "--config", cfg, "--out", str(a), "--seed", "5", "--threads", "1"]) == 0
    assert cli.main(["mc-sweep", "--config", cfg, "--out", str(b), "--seed", "5", "--threads", "2"]) == 0
    assert data_files(a) == data_files(b)
    man = json.loads((a / "manifest.json").read_text())
    assert set(man["files"]) == set(data_files(a))
    assert len(man["chains"]) == 2 * 3 and not man["failures"]
    assert all("seed" in c for c in man["chains"])
    # the echoed configuration reruns to identical data
    c = tmp_path / "c"
    assert cli.main(["mc-sweep", "--config", str(a / "config_echo.ini"), "--out", str(c)]) == 0
    assert data_files(c) == data_files(a)
    # a different seed gives different chains
    d = tmp_path / "d"
    assert cli.main(["mc-sweep", "--config", cfg, "--out", str(d), "--seed", "6", "--threads", "1"]) == 0
    assert data_files(d) != data_files(a)


def test_analyze_and_heatmap(tmp_path):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "s"
    assert cli.main(["mc-sweep", "--config", cfg, "--out", str(out), "--threads", "1"]) == 0
    acfg = write(tmp_path, SMALL + f"[analysis]\ninput = {out / 'chains'}\n", "an.ini")
    assert cli.main(["analyze", "--config", acfg, "--out", str(tmp_path / "an")]) == 0
    assert (tmp_path / "an" / "summary.csv").read_bytes() == (out / "summary.csv").read_bytes()
    hcfg = write(tmp_path, f"[heatmap]\ninput = {out / 'chains'}/localmap_*.csv\n", "hm.ini")
    assert cli.main(["heatmap", "--config", hcfg, "--out", str(tmp_path / "hm")]) == 0
    svgs = list((tmp_path / "hm").glob("*.svg"))
    assert len(svgs) == 6
    assert cli.main(["heatmap", "--out", str(tmp_path / "hm2")]) == cli.EXIT_INVALID


def test_trajectory_validate_one_qubit(tmp_path):
    cfg = write(tmp_path, "[trajectory]\nn_samples = 20000\nt_final = 6\n")
    out = tmp_path / "t"
    assert cli.main(["trajectory-validate", "--config", cfg, "--out", str(out), "--seed", "3"]) == 0
    rep = json.loads((out / "trajectory_report.json").read_text())
    assert rep["max_trace_distance"] < 2e-2 and rep["pass"]
    assert (out / "classes.csv").exists()
