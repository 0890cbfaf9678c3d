"""A small Markovian Potts sweep through the CLI, then the slope analysis and heatmaps.

The full-size protocol is the default configuration; this one runs in about a minute.
"""
import json
import sys
import tempfile
from pathlib import Path

from backflow import cli

CONFIG = """
[rate]
kind = constant
[lattice]
lx = 16
ly = 20
[mc]
n_therm = 3000
stride = 10
n_measurements = 200
p = 0.05:0.45:0.05
l_a = 0:8:2
"""

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
cfg = out / "small.ini"
out.mkdir(parents=True, exist_ok=True)
cfg.write_text(CONFIG)
rc = cli.main(["mc-sweep", "--config", str(cfg), "--out", str(out / "sweep"), "--seed", "1"])
print("mc-sweep exit code", rc)
print((out / "sweep" / "summary.csv").read_text())
print(json.dumps(json.loads((out / "sweep" / "transition.json").read_text())["transitions"], indent=1))

hm = out / "heatmap.ini"
hm.write_text(f"[heatmap]\ninput = {out / 'sweep' / 'chains'}/localmap_p0.4500_*.csv\n")
cli.main(["heatmap", "--config", str(hm), "--out", str(out / "svg")])
print("heatmaps in", out / "svg")
