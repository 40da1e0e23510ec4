"""Declarative scenario configuration with field-level validation.

A scenario file is JSON::

    {
      "name": "multiturn",
      "seed": 0,
      "workload": {... WorkloadSpec fields ...},
      "policies": ["GlobalShare", {"policy": "SafeKV", "label": "SafeKV-oracle", "detectors": "oracle"}],
      "cost": {"t_base": 10, "c_prefill": 1, "tier_penalty": {"DRAM": 0.2, "SSD": 0.5}, "noise_sigma": 0},
      "detectors": "rules+mock" | "oracle" | "mock" | [three tier objects],
      "pipeline": {"escalation": "confidence", "base_threshold": 0.5, ...},
      "monitor": {"entropy_jump": 0.3, "u_pre_max": 1, "epoch_interval": 30000, ...},
      "capacities": {"hbm_tokens": 200000} | {"m_kv_bytes": ..., "bytes_per_token": ...},
      "attack": null | {... CampaignConfig fields ...},
      "output_dir": "runs/multiturn"
    }

Every field is optional; :data:`DEFAULTS` documents the defaults. The
top-level ``seed`` drives the workload, detector, noise and attack streams.
"""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .adversary import CampaignConfig
from .cache_index import TierBudget
from .core import PolicyId
from .detection import DetectorMode, DetectorSpec, LatencyModel
from .monitor import MonitorConfig
from .serving_sim import CostModel, SimConfig, default_detectors, mock_detectors
from .workload import PRESET_NAMES, InfeasibleSpec, Scenario, WorkloadSpec, preset_path

DETECTOR_PRESETS = ("rules+mock", "rules+oracle", "mock", "oracle")
PAPER_ALPHAS = (0.63, 0.04, 0.29)

DEFAULTS: dict = {
    "name": "scenario",
    "seed": 0,
    "workload": {},
    "policies": ["GlobalShare", "CachePartition", "SafeKV"],
    "cost": {},
    "detectors": "rules+mock",
    "pipeline": {"escalation": "confidence", "base_threshold": 0.5, "adaptive_threshold": True,
                 "queue_size": 1_000_000, "batch_size": 64, "drain_interval_ms": 1.0},
    "monitor": {},
    "capacities": None,
    "tiered": False,
    "block_size": 16,
    "scheduling": "fcfs",
    "system_prompt_tokens": None,
    "compress_private": False,
    "attack": None,
    "output_dir": "runs",
}
_TOP = set(DEFAULTS)


class ConfigError(ValueError):
    def __init__(self, diagnostics: list[str] | str):
        self.diagnostics = [diagnostics] if isinstance(diagnostics, str) else list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


@dataclass(frozen=True)
class PolicyRun:
    policy: PolicyId
    label: str
    detectors: tuple[DetectorSpec, ...] | None = None


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    policies: list[PolicyRun] = field(default_factory=list)
    sim: SimConfig = field(default_factory=SimConfig)
    attack: CampaignConfig | None = None
    output_dir: Path = Path("runs")
    raw: dict = field(default_factory=dict)

    def sim_config(self, run: PolicyRun) -> SimConfig:
        return dataclasses.replace(self.sim, policy=run.policy, detectors=run.detectors or self.sim.detectors)


def _detectors(obj, seed: int, where: str, errs: list[str]) -> tuple[DetectorSpec, ...] | None:
    if obj is None:
        return None
    if isinstance(obj, str):
        if obj == "rules+mock":
            return default_detectors(seed)
        if obj == "rules+oracle" or obj == "oracle":
            return default_detectors(seed, oracle=True) if obj == "rules+oracle" else tuple(
                DetectorSpec(t, DetectorMode.ORACLE, seed=seed) for t in (1, 2, 3))
        if obj == "mock":
            return mock_detectors(PAPER_ALPHAS, seed)
        errs.append(f"{where}: unknown detector preset {obj!r}; choose from {list(DETECTOR_PRESETS)}")
        return None
    if not isinstance(obj, list) or len(obj) != 3:
        errs.append(f"{where}: expected a preset name or a list of three tier objects")
        return None
    out = []
    for i, d in enumerate(obj):
        path = f"{where}[{i}]"
        if not isinstance(d, dict):
            errs.append(f"{path}: expected an object")
            continue
        unknown = set(d) - {"tier", "mode", "false_negative_rate", "false_positive_rate", "latency", "tn_beta",
                            "command", "timeout_s"}
        if unknown:
            errs.append(f"{path}: unknown field(s) {sorted(unknown)}")
            continue
        try:
            out.append(DetectorSpec(
                int(d.get("tier", i + 1)), DetectorMode(d.get("mode", "Oracle")),
                float(d.get("false_negative_rate", 0.0)), float(d.get("false_positive_rate", 0.0)),
                LatencyModel.from_obj(d["latency"]) if "latency" in d else None, seed,
                tuple(d.get("tn_beta", (4.0, 1.0))), tuple(d.get("command", ())), float(d.get("timeout_s", 2.0))))
        except (ValueError, TypeError) as exc:
            errs.append(f"{path}: {exc}")
    if [s.tier for s in out] != [1, 2, 3] and len(out) == 3:
        errs.append(f"{where}: tiers must be listed as 1, 2, 3")
    return tuple(out) if len(out) == 3 else None


def _section(doc: dict, key: str, errs: list[str]) -> dict:
    val = doc.get(key, DEFAULTS[key])
    if val is None:
        return {}
    if not isinstance(val, dict):
        errs.append(f"{key}: expected an object")
        return {}
    return val


def _known(d: dict, allowed, where: str, errs: list[str]) -> bool:
    unknown = set(d) - set(allowed)
    if unknown:
        errs.append(f"{where}: unknown field(s) {sorted(unknown)}")
        return False
    return True


def parse_config(doc: object, *, seed: int | None = None, output_dir: str | Path | None = None) -> ScenarioConfig:
    """Validate a scenario document; collects every problem before raising."""
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    errs: list[str] = []
    _known(doc, _TOP, "config", errs)
    if seed is None:
        seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        errs.append("seed: expected an unsigned 64-bit integer")
        seed = 0
    name = doc.get("name", DEFAULTS["name"])
    if not isinstance(name, str) or not name:
        errs.append("name: expected a non-empty string")

    wl = _section(doc, "workload", errs)
    spec = WorkloadSpec()
    try:
        spec = WorkloadSpec.from_dict({**wl, "seed": seed})
        spec.validate()
    except (InfeasibleSpec, ValueError, TypeError) as exc:
        errs.append(f"workload: {exc}")

    cost_d = _section(doc, "cost", errs)
    cost = CostModel(seed=seed)
    if _known(cost_d, {"t_base", "c_prefill", "tier_penalty", "noise_sigma"}, "cost", errs):
        try:
            cost = CostModel.from_dict({**cost_d, "seed": seed})
        except (ValueError, TypeError) as exc:
            errs.append(f"cost: {exc}")

    mon_d = _section(doc, "monitor", errs)
    monitor = MonitorConfig()
    if _known(mon_d, {f.name for f in dataclasses.fields(MonitorConfig)}, "monitor", errs):
        monitor = MonitorConfig(**mon_d)
        if monitor.epoch_interval <= 0:
            errs.append("monitor.epoch_interval: must be positive")
        if monitor.entropy_jump < 0 or monitor.u_pre_max < 0:
            errs.append("monitor: entropy_jump and u_pre_max must be non-negative")

    pipe_d = {**DEFAULTS["pipeline"], **_section(doc, "pipeline", errs)}
    _known(pipe_d, DEFAULTS["pipeline"], "pipeline", errs)
    if pipe_d.get("escalation") not in ("confidence", "always"):
        errs.append("pipeline.escalation: expected 'confidence' or 'always'")
    if not 0 < float(pipe_d.get("base_threshold", 0.5)) < 1:
        errs.append("pipeline.base_threshold: must lie in (0, 1)")
    for k in ("queue_size", "batch_size"):
        if not isinstance(pipe_d.get(k), int) or pipe_d[k] <= 0:
            errs.append(f"pipeline.{k}: expected a positive integer")
    if not float(pipe_d.get("drain_interval_ms", 1.0)) > 0:
        errs.append("pipeline.drain_interval_ms: must be positive")

    budget = None
    cap = doc.get("capacities")
    if cap is not None:
        if not isinstance(cap, dict):
            errs.append("capacities: expected an object")
        elif _known(cap, {"hbm_tokens", "dram_tokens", "ssd_tokens", "m_kv_bytes", "bytes_per_token"},
                    "capacities", errs):
            try:
                budget = TierBudget.from_config(cap)
            except (ValueError, KeyError, TypeError) as exc:
                errs.append(f"capacities: {exc}")

    block = doc.get("block_size", 16)
    if block is not None and (not isinstance(block, int) or block <= 0):
        errs.append("block_size: expected a positive integer or null")
    sched = doc.get("scheduling", "fcfs")
    if sched not in ("fcfs", "lpm"):
        errs.append("scheduling: expected 'fcfs' or 'lpm'")
    sp = doc.get("system_prompt_tokens")
    if sp is None:
        sp = spec.system_prompt_tokens if spec.scenario is Scenario.SYSTEM_PROMPT else 0
    if not isinstance(sp, int) or sp < 0:
        errs.append("system_prompt_tokens: expected a non-negative integer")
        sp = 0

    detectors = _detectors(doc.get("detectors", DEFAULTS["detectors"]), seed, "detectors", errs)

    runs: list[PolicyRun] = []
    pols = doc.get("policies", DEFAULTS["policies"])
    if isinstance(pols, str):
        pols = [pols]
    if not isinstance(pols, list) or not pols:
        errs.append("policies: expected a non-empty list")
        pols = []
    for i, p in enumerate(pols):
        where = f"policies[{i}]"
        entry = {"policy": p} if isinstance(p, str) else p
        if not isinstance(entry, dict) or not _known(entry, {"policy", "label", "detectors"}, where, errs):
            if not isinstance(entry, dict):
                errs.append(f"{where}: expected a policy name or object")
            continue
        try:
            pid = PolicyId(entry.get("policy"))
        except ValueError:
            errs.append(f"{where}: unknown policy {entry.get('policy')!r}; choose from "
                        f"{[x.value for x in PolicyId]}")
            continue
        det = _detectors(entry.get("detectors"), seed, f"{where}.detectors", errs)
        runs.append(PolicyRun(pid, str(entry.get("label", pid.value)), det))
    labels = [r.label for r in runs]
    if len(set(labels)) != len(labels):
        errs.append(f"policies: duplicate labels {sorted({x for x in labels if labels.count(x) > 1})}")

    attack = None
    att = doc.get("attack")
    if att is not None:
        if not isinstance(att, dict):
            errs.append("attack: expected an object or null")
        elif _known(att, set(CampaignConfig.__dataclass_fields__) - {"seed"}, "attack", errs):
            try:
                attack = CampaignConfig.from_dict({**att, "seed": seed})
            except (ValueError, TypeError) as exc:
                errs.append(f"attack: {exc}")

    out = output_dir if output_dir is not None else doc.get("output_dir", DEFAULTS["output_dir"])
    if not isinstance(out, (str, Path)):
        errs.append("output_dir: expected a path string")
        out = "runs"
    out = Path(out)

    if errs:
        raise ConfigError(errs)
    sim = SimConfig(cost=cost, budget=budget, tiered=bool(doc.get("tiered", False)), block_size=block,
                    detectors=detectors, escalation=pipe_d["escalation"],
                    base_threshold=float(pipe_d["base_threshold"]),
                    adaptive_threshold=bool(pipe_d["adaptive_threshold"]), queue_size=pipe_d["queue_size"],
                    batch_size=pipe_d["batch_size"], drain_interval_ms=float(pipe_d["drain_interval_ms"]),
                    monitor=monitor, scheduling=sched, system_prompt_tokens=sp,
                    compress_private=bool(doc.get("compress_private", False)), seed=seed)
    raw = copy.deepcopy(doc)
    raw["seed"] = seed
    return ScenarioConfig(name, seed, spec, runs, sim, attack, out, raw)


def resolve_config_path(ref: str | Path) -> Path:
    """A file path, or the name of a shipped preset."""
    p = Path(ref)
    if p.exists():
        return p
    name = p.stem if p.suffix == ".json" else str(ref)
    if name in PRESET_NAMES and preset_path(name).exists():
        return preset_path(name)
    raise ConfigError(f"config file not found: {ref}")


def load_config(ref: str | Path, *, seed: int | None = None, output_dir: str | Path | None = None) -> ScenarioConfig:
    path = resolve_config_path(ref)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(doc, seed=seed, output_dir=output_dir)
