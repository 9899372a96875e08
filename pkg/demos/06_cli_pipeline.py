"""Driving an experiment end to end through the command line.

Writes a config, validates it, runs the trials into a CSV with a
manifest, and refits the scaling report from the stored rows. Re-running
with the same seed reproduces the CSV byte for byte; --jobs only changes
wall time.
"""

import json
import pathlib
import subprocess
import sys
import tempfile

workdir = pathlib.Path(tempfile.mkdtemp(prefix="userdp_demo_"))
config = {
    "experiment": "scaling",
    "seed": 7,
    "params": {
        "metric": "mse",
        "expected_slopes": {"n": [-2.3, -0.8]},
        "inner": {
            "experiment": "mean",
            "n": [50, 100, 200], "m": [4], "eps": [1.0],
            "delta": 1e-5, "gamma": 0.1, "trials": 3,
            "dist": {
                "family": "bounded_ball", "dim": 2, "bound": 1.0,
                "bound_kind": "l2", "mean": [0.2, 0.0], "radius": 0.3,
            },
        },
    },
}
config_path = workdir / "config.json"
config_path.write_text(json.dumps(config, indent=2))
out_dir = workdir / "out"


def cli(*args):
    cmd = [sys.executable, "-m", "userdp.cli", *args]
    print(f"$ userdp {' '.join(args)}")
    proc = subprocess.run(cmd, capture_output=True, text=True)
    for line in (proc.stdout + proc.stderr).strip().splitlines():
        print(f"  {line}")
    return proc.returncode


cli("validate", "--config", str(config_path))
cli("run", "--config", str(config_path), "--output", str(out_dir))
print("\nresults.csv head:")
for line in (out_dir / "results.csv").read_text().splitlines()[:4]:
    print(f"  {line}")
manifest = json.loads((out_dir / "manifest.json").read_text())
print(f"manifest: experiment={manifest['experiment']} seed={manifest['seed']} "
      f"rows={manifest['n_rows']}")
scaling = json.loads((out_dir / "scaling.json").read_text())
print(f"fitted n-slope {scaling['slopes']['n']['slope']:+.2f}, pass={scaling['pass']}")

cli("report", "--output", str(out_dir), "--metric", "mse")
