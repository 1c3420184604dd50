"""
Parameter sweeps through the command line
=========================================

Each grid point runs the full two-stage pipeline and adds one row to
sweep.csv. The settings here are tiny so the sweep finishes quickly; drop
the --set overrides for the default desk-scale setup.
"""

import csv
import tempfile
from pathlib import Path

from condseg.cli import main

out = Path(tempfile.mkdtemp(prefix="condseg_sweep_"))
tiny = ["--set", "image_size=32", "--set", "channel_widths=[4,8,8,8]",
        "--set", "epochs_stage1=2", "--set", "epochs_stage2=2",
        "--set", "synth.n_images=24", "--set", "synth.size=32"]

code = main(["sweep", "--kind", "window", "--grid", "1,3,5,7", "--data", "synth",
             "--out", str(out), *tiny])
print("exit code", code)
for row in csv.DictReader(open(out / "sweep.csv")):
    print(f"K={row['value']}: mIoU {float(row['iou']):.3f}, status {row['status']}")
