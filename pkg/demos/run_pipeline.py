"""Run a figure template through the harness and inspect its manifest.

Uses the reduced (desk) dimer template so it finishes in seconds; the same
call with ``desk=False`` reproduces the full 6x6 run.
"""

import sys
import tempfile
from pathlib import Path

from qrelax.harness import pipeline_fig, run_experiment

cfg = pipeline_fig("fig5", desk=True)
cfg.workers = 2
out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="qrelax_"))
manifest = run_experiment(cfg, out)

print(cfg.notes)
print(f"\n{out}: {len(manifest.tasks)} tasks, all ok: {manifest.ok}")
print("config hash", manifest.config_hash[:16])
for line in (out / "4x4f0_0_V10" / "tau_average.txt").read_text().splitlines():
    print("  ", line)
