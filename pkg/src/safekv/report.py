"""Aggregate run artifacts into CSV tables and static plots."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .serving_sim import FORMAT_VERSION


class ArtifactError(ValueError):
    pass


SUMMARY_FIELDS = ("run", "policy", "n_requests", "hit_rate", "intra_reuse", "inter_reuse", "ttft_mean", "ttft_p50",
                  "ttft_p95", "ttft_p99", "leak_events", "evictions", "downgrades", "n_dropped",
                  "throughput_tokens_per_s", "defense_success_rate")
TIER_FIELDS = ("run", "tier1", "tier2", "tier3", "tier12_fraction")


def find_runs(paths: list[str | Path]) -> list[Path]:
    """Run directories (holding metrics.json) under each given path."""
    runs: list[Path] = []
    for p in map(Path, paths):
        if (p / "metrics.json").is_file():
            runs.append(p)
        elif p.is_dir():
            found = sorted(d.parent for d in p.glob("*/metrics.json"))
            if not found:
                raise ArtifactError(f"{p}: no metrics.json found")
            runs.extend(found)
        else:
            raise ArtifactError(f"{p}: no such artifact directory")
    return runs


def load_run(run: Path) -> dict:
    try:
        metrics = json.loads((run / "metrics.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"{run / 'metrics.json'}: {exc}") from None
    if not isinstance(metrics, dict) or metrics.get("format_version") != FORMAT_VERSION:
        raise ArtifactError(f"{run}: incompatible or missing format_version (want {FORMAT_VERSION})")
    for key in ("policy", "ttft_ms", "hit_rate"):
        if key not in metrics:
            raise ArtifactError(f"{run / 'metrics.json'}: missing field {key!r}")
    attack = None
    if (run / "attack.json").is_file():
        try:
            attack = json.loads((run / "attack.json").read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"{run / 'attack.json'}: {exc}") from None
    ttfts = []
    if (run / "requests.csv").is_file():
        with open(run / "requests.csv", newline="", encoding="utf-8") as fh:
            ttfts = [float(r["ttft_ms"]) for r in csv.DictReader(fh) if r.get("dropped") == "0"]
    name = metrics.get("label") or run.name
    return {"name": name, "dir": run, "metrics": metrics, "attack": attack, "ttfts": ttfts}


def summary_rows(runs: list[dict]) -> list[dict]:
    rows = []
    for r in runs:
        m = r["metrics"]
        t = m["ttft_ms"]
        rows.append({
            "run": r["name"], "policy": m["policy"], "n_requests": m.get("n_requests"), "hit_rate": m["hit_rate"],
            "intra_reuse": m.get("intra_reuse"), "inter_reuse": m.get("inter_reuse"), "ttft_mean": t["mean"],
            "ttft_p50": t["p50"], "ttft_p95": t["p95"], "ttft_p99": t["p99"], "leak_events": m.get("leak_events"),
            "evictions": m.get("evictions"), "downgrades": m.get("downgrades"), "n_dropped": m.get("n_dropped"),
            "throughput_tokens_per_s": m.get("throughput_tokens_per_s"),
            "defense_success_rate": r["attack"]["defense_success_rate"] if r["attack"] else "",
        })
    return rows


def tier_rows(runs: list[dict]) -> list[dict]:
    rows = []
    for r in runs:
        det = r["metrics"].get("detection")
        if not det:
            continue
        res = det["resolved_at"]
        rows.append({"run": r["name"], "tier1": res["1"], "tier2": res["2"], "tier3": res["3"],
                     "tier12_fraction": det["tier12_fraction"]})
    return rows


def _write_csv(path: Path, fields, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _plots(runs: list[dict], out: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    made = []
    names = [r["name"] for r in runs]

    fig, ax = plt.subplots(figsize=(7, 4))
    data = [r["ttfts"] or [0.0] for r in runs]
    ax.boxplot(data, showfliers=False)
    ax.set_xticks(range(1, len(names) + 1), names, rotation=20)
    ax.set_ylabel("TTFT (ms)")
    ax.set_title("TTFT distribution by run")
    fig.tight_layout()
    made.append(out / "ttft_distribution.png")
    fig.savefig(made[-1])
    plt.close(fig)

    attacked = [r for r in runs if r["attack"]]
    if attacked:
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.bar([r["name"] for r in attacked], [100 * r["attack"]["defense_success_rate"] for r in attacked])
        ax.set_ylabel("defense success rate (%)")
        ax.set_ylim(0, 105)
        ax.set_title("Defense rate by policy")
        fig.tight_layout()
        made.append(out / "defense_rate.png")
        fig.savefig(made[-1])
        plt.close(fig)

    tiers = tier_rows(runs)
    if tiers:
        fig, ax = plt.subplots(figsize=(7, 4))
        bottom = [0.0] * len(tiers)
        for k in ("tier1", "tier2", "tier3"):
            vals = []
            for row in tiers:
                total = row["tier1"] + row["tier2"] + row["tier3"]
                vals.append(100 * row[k] / total if total else 0.0)
            ax.bar([t["run"] for t in tiers], vals, bottom=bottom, label=k)
            bottom = [b + v for b, v in zip(bottom, vals)]
        ax.set_ylabel("blocks resolved (%)")
        ax.set_title("Detection workload by tier")
        ax.legend()
        fig.tight_layout()
        made.append(out / "tier_split.png")
        fig.savefig(made[-1])
        plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(names, [r["metrics"].get("throughput_tokens_per_s", 0.0) for r in runs])
    ax.set_ylabel("input tokens / simulated second")
    ax.set_title("Throughput proxy")
    plt.setp(ax.get_xticklabels(), rotation=20)
    fig.tight_layout()
    made.append(out / "throughput.png")
    fig.savefig(made[-1])
    plt.close(fig)
    return made


def build_report(paths: list[str | Path], out_dir: str | Path, plots: bool = True) -> dict:
    """Write summary.csv, tier_split.csv and plots; returns what was written."""
    runs = [load_run(p) for p in find_runs(paths)]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summary_rows(runs)
    _write_csv(out / "summary.csv", SUMMARY_FIELDS, summary)
    tiers = tier_rows(runs)
    _write_csv(out / "tier_split.csv", TIER_FIELDS, tiers)
    files = [out / "summary.csv", out / "tier_split.csv"]
    if plots:
        files.extend(_plots(runs, out))
    return {"runs": [r["name"] for r in runs], "summary": summary, "tiers": tiers, "files": files}


def format_table(rows: list[dict], cols: tuple[str, ...]) -> str:
    """Plain fixed-width table."""
    cells = [[str(c) for c in cols]] + [["" if r.get(c) is None else str(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells)
