"""Serve the multi-turn chat preset under every policy and build a report.

Writes run artifacts and plots under ``runs/demo`` and prints the summary.
Run with ``python demos/03_policy_comparison.py``.
"""

from __future__ import annotations

from pathlib import Path

from safekv.config import load_config
from safekv.report import build_report, format_table
from safekv.serving_sim import run_scenario

out = Path("runs/demo")
scenario = load_config("multiturn", output_dir=out)
outcomes = run_scenario(scenario, out)

# %% Paired comparison on one shared workload.
rows = [o.summary() for o in outcomes]
print(format_table(rows, ["label", "hit_rate", "ttft_mean", "ttft_p99", "leak_events", "defense_rate"]))

# %% Sharing only what the detectors clear keeps most of the global cache's benefit.
gs, cp = rows[0]["ttft_mean"], rows[-1]["ttft_mean"]
for r in rows[1:-1]:
    kept = (cp - r["ttft_mean"]) / (cp - gs) if cp > gs else 1.0
    print(f"{r['label']}: keeps {kept:.0%} of the TTFT saving of full sharing")

# %% Tables and figures for the whole run.
report = build_report([out], out / "report")
print("\nwrote", ", ".join(sorted(Path(f).name for f in report["files"])))
