"""Discrete-event simulator of a multi-tenant prefix-caching server.

Virtual time is in milliseconds. Requests arrive as events, look up the
cache under the active policy's visibility rule, pay a TTFT computed from
the cost model, and insert their uncached suffix. Under SafeKV new blocks
enter the detection queue and their labels change when the simulated
detector latency has elapsed.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import heapq
import io
import itertools
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cache_index import CacheNode, CapacityExhausted, RadixIndex, TierBudget
from .core import (DEFAULT_VOCAB, OwnerClass, PolicyId, SensitivityLabel, Tier, TokenSeq, UserId,
                   seq_digest)
from .detection import (ClassificationJob, DetectionInput, DetectionPipeline, DetectorMode,
                        DetectorSpec, RuleEngine, ThresholdState, make_detector)
from .monitor import AlertLog, EntropyMonitor, MonitorConfig
from .workload import Request, SecretSpan, block_truth

FORMAT_VERSION = 1
SCHEDULING_MODES = ("fcfs", "lpm")

# event priorities at equal timestamps
_UNPIN, _LABEL, _EPOCH, _DRAIN, _ARRIVAL = range(5)


@dataclass(frozen=True)
class CostModel:
    """TTFT = t_base + c_prefill * uncached + per-tier reload cost of cached tokens + noise."""

    t_base: float = 10.0
    c_prefill: float = 1.0
    tier_penalty: tuple[float, float, float] = (0.0, 0.2, 0.5)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        hbm, dram, ssd = self.tier_penalty
        if self.t_base < 0 or self.noise_sigma < 0:
            raise ValueError("t_base and noise_sigma must be non-negative")
        if hbm != 0:
            raise ValueError("HBM reload penalty must be 0")
        if not (self.c_prefill > ssd >= dram >= 0):
            raise ValueError("need c_prefill > SSD penalty >= DRAM penalty >= 0")

    def ttft(self, input_len: int, matched: int, tier_tokens: dict[Tier, int] | None = None,
             rng: random.Random | None = None) -> float:
        t = self.t_base + self.c_prefill * (input_len - matched)
        for tier, n in (tier_tokens or {}).items():
            t += self.tier_penalty[tier] * n
        if self.noise_sigma > 0 and rng is not None:
            t += rng.gauss(0.0, self.noise_sigma)
        return max(t, self.t_base)

    @classmethod
    def from_dict(cls, d: dict) -> CostModel:
        kw = dict(d)
        if isinstance(kw.get("tier_penalty"), dict):
            tp = kw["tier_penalty"]
            kw["tier_penalty"] = (float(tp.get("HBM", 0.0)), float(tp.get("DRAM", 0.2)), float(tp.get("SSD", 0.5)))
        elif "tier_penalty" in kw:
            kw["tier_penalty"] = tuple(float(x) for x in kw["tier_penalty"])
        return cls(**kw)

    def to_dict(self) -> dict:
        return {"t_base": self.t_base, "c_prefill": self.c_prefill,
                "tier_penalty": {"HBM": self.tier_penalty[0], "DRAM": self.tier_penalty[1],
                                 "SSD": self.tier_penalty[2]},
                "noise_sigma": self.noise_sigma, "seed": self.seed}


@dataclass
class RequestRecord:
    request_id: int
    user: UserId
    input: TokenSeq
    arrival_time: float
    matched_tokens: int
    ttft: float
    policy: PolicyId
    epoch: int
    intra_tokens: int = 0
    inter_tokens: int = 0
    inserted_tokens: int = 0
    dropped: bool = False
    session_id: int = -1

    CSV_FIELDS = ("request_id", "user", "kind", "session_id", "arrival_ms", "input_len", "input_digest",
                  "matched_tokens", "intra_tokens", "inter_tokens", "inserted_tokens", "ttft_ms", "policy",
                  "epoch", "dropped")

    def csv_row(self) -> list:
        return [self.request_id, self.user.value, self.user.kind.value, self.session_id, _num(self.arrival_time),
                len(self.input), seq_digest(self.input)[:16], self.matched_tokens, self.intra_tokens,
                self.inter_tokens, self.inserted_tokens, _num(self.ttft), self.policy.value, self.epoch,
                int(self.dropped)]


def _num(x: float) -> float:
    return round(float(x), 6)


@dataclass
class SimConfig:
    policy: PolicyId = PolicyId.SAFEKV
    cost: CostModel = field(default_factory=CostModel)
    budget: TierBudget | None = None
    tiered: bool = False
    block_size: int | None = 16
    detectors: tuple[DetectorSpec, ...] | None = None
    escalation: str = "confidence"
    base_threshold: float = 0.5
    adaptive_threshold: bool = True
    queue_size: int = 1_000_000
    batch_size: int = 64
    drain_interval_ms: float = 1.0
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    scheduling: str = "fcfs"
    system_prompt_tokens: int = 0
    compress_private: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.scheduling not in SCHEDULING_MODES:
            raise ValueError(f"scheduling must be one of {SCHEDULING_MODES}")
        if self.drain_interval_ms <= 0:
            raise ValueError("drain_interval_ms must be positive")
        if self.monitor.epoch_interval <= 0:
            raise ValueError("epoch_interval must be positive")


def default_detectors(seed: int = 0, *, oracle: bool = False,
                      alphas: tuple[float, float] = (0.04, 0.29)) -> tuple[DetectorSpec, ...]:
    """Rule engine at Tier-1, then oracle or mock Tier-2/3 detectors."""
    mode = DetectorMode.ORACLE if oracle else DetectorMode.MOCK
    a2, a3 = (0.0, 0.0) if oracle else alphas
    return (DetectorSpec(1, DetectorMode.RULES, seed=seed),
            DetectorSpec(2, mode, false_negative_rate=a2, seed=seed),
            DetectorSpec(3, mode, false_negative_rate=a3, seed=seed))


def mock_detectors(alphas: tuple[float, float, float] = (0.63, 0.04, 0.29), seed: int = 0,
                   fpr: float = 0.0) -> tuple[DetectorSpec, ...]:
    """Three independent mock tiers with the given false-negative rates."""
    return tuple(DetectorSpec(t, DetectorMode.MOCK, false_negative_rate=a, false_positive_rate=fpr, seed=seed)
                 for t, a in zip((1, 2, 3), alphas))


def batch_step(pending: Sequence[Request], mode: str = "fcfs", index: RadixIndex | None = None) -> list[Request]:
    """Order a batch: FCFS by (arrival, id) or longest current prefix match first."""
    if mode == "fcfs" or index is None:
        return sorted(pending, key=lambda r: (r.arrival_ms, r.request_id))
    if mode != "lpm":
        raise ValueError(f"unknown scheduling mode {mode!r}")
    matched = {r.request_id: index.match_prefix(r.tokens, r.user, touch=False).matched_tokens for r in pending}
    return sorted(pending, key=lambda r: (-matched[r.request_id], r.arrival_ms, r.request_id))


class Simulator:
    """Single-threaded event loop over virtual time."""

    def __init__(self, config: SimConfig | None = None, *, engine: RuleEngine | None = None,
                 alert_path: str | Path | None = None):
        self.config = cfg = config or SimConfig()
        budget = copy.deepcopy(cfg.budget)  # budgets carry usage counters; never share them
        self.index = RadixIndex(budget, tiered=cfg.tiered, block_size=cfg.block_size)
        self._own = RadixIndex(None, block_size=None)  # per-user history, for the intra/inter split
        self.rng = random.Random(cfg.cost.seed)
        self.now = 0.0
        self.records: list[RequestRecord] = []
        self.events: list[dict] = []
        self._heap: list = []
        self._seq = itertools.count()
        self._pending = 0  # non-epoch events still queued
        self._next_id = itertools.count(1_000_000_000)
        self._drain_scheduled = False
        self._epoch_at = cfg.monitor.epoch_interval
        self.leaks = 0
        self.evictions = 0
        self.dropped = 0
        self.pipeline: DetectionPipeline | None = None
        self.monitor: EntropyMonitor | None = None
        if cfg.policy is PolicyId.SAFEKV:
            specs = cfg.detectors or default_detectors(cfg.seed)
            tiers = [make_detector(s, engine) for s in specs]
            self.pipeline = DetectionPipeline(tiers, threshold=ThresholdState(cfg.base_threshold, cfg.base_threshold),
                                              escalation=cfg.escalation, queue_size=cfg.queue_size,
                                              batch_size=cfg.batch_size, index=self.index)
            self.monitor = EntropyMonitor(cfg.monitor, AlertLog(alert_path))
        self.index.on_free = self._on_free

    # ------------------------------------------------------------ event queue
    def _push(self, time: float, prio: int, payload) -> None:
        heapq.heappush(self._heap, (time, prio, next(self._seq), payload))
        if prio != _EPOCH:
            self._pending += 1

    def schedule(self, requests: Iterable[Request]) -> None:
        for r in requests:
            self._push(r.arrival_ms, _ARRIVAL, r)

    def _log(self, kind: str, **fields) -> None:
        self.events.append({"type": kind, "time_ms": _num(self.now), **fields})

    def _tick_epochs(self, until: float) -> None:
        while self._epoch_at <= until:
            self.now = max(self.now, self._epoch_at)
            self._epoch()
            self._epoch_at += self.config.monitor.epoch_interval

    def _step(self) -> None:
        time, prio, _, payload = heapq.heappop(self._heap)
        self._pending -= 1
        self.now = max(self.now, time)
        if prio == _ARRIVAL:
            batch = [payload]
            while self._heap and self._heap[0][0] == time and self._heap[0][1] == _ARRIVAL:
                batch.append(heapq.heappop(self._heap)[3])
                self._pending -= 1
            for req in batch_step(batch, self.config.scheduling, self.index):
                self._process(req)
        elif prio == _UNPIN:
            if payload.alive:
                self.index.unpin(payload)
        elif prio == _LABEL:
            node = payload.job.node
            if self.pipeline.apply(payload) and node.label is SensitivityLabel.PUBLIC and node.sensitive_truth:
                self._leak(node, f"detector:t{payload.resolved_tier}")
        elif prio == _DRAIN:
            self._drain()

    def advance_to(self, t: float) -> None:
        """Process every event due at or before ``t`` and move the clock to ``t``."""
        while self._heap and self._heap[0][0] <= t:
            self._tick_epochs(self._heap[0][0])
            self._step()
        self._tick_epochs(t)
        self.now = max(self.now, t)

    def run(self) -> None:
        """Process events until only epoch ticks would remain."""
        while self._pending:
            self._tick_epochs(self._heap[0][0])
            self._step()

    # --------------------------------------------------------------- epochs
    def _epoch(self) -> None:
        fired = []
        if self.monitor is not None:
            fired = self.monitor.on_epoch(self.index, self.index.epoch)
            for ev in fired:
                self._log("anomaly", **{k: v for k, v in ev.to_record().items() if k != "type"})
        if self.pipeline is not None and self.config.adaptive_threshold:
            load = len(self.pipeline) / self.config.batch_size
            self.pipeline.update_threshold(load, len(fired))
        if self.config.compress_private:
            self.index.compress_all()
        self.index.advance_epoch()

    # ------------------------------------------------------------- detection
    def _ensure_drain(self) -> None:
        if self.pipeline is not None and len(self.pipeline) and not self._drain_scheduled:
            self._drain_scheduled = True
            self._push(self.now + self.config.drain_interval_ms, _DRAIN, None)

    def _drain(self) -> None:
        self._drain_scheduled = False
        for done in self.pipeline.drain(apply=False):
            self._push(self.now + done.latency_ms, _LABEL, done)
        self._ensure_drain()

    def _leak(self, node: CacheNode, cause: str) -> None:
        self.leaks += 1
        self._log("leak", node_id=node.node_id, creator=node.creator_id, tokens=len(node.edge), cause=cause)

    def _on_free(self, node: CacheNode) -> None:
        self.evictions += 1
        self._log("evict", node_id=node.node_id, creator=node.creator_id, tokens=len(node.edge))

    # -------------------------------------------------------------- requests
    def request(self, tokens: Sequence[int], user: UserId, *, at: float | None = None,
                spans: Sequence[SecretSpan] = (), owner: OwnerClass = OwnerClass.CUSTOMER,
                session_id: int = -1) -> RequestRecord:
        """Issue one request immediately (after advancing the clock to ``at``)."""
        if at is not None:
            self.advance_to(at)
        req = Request(next(self._next_id), user, tuple(tokens), self.now, session_id, 1, owner, tuple(spans))
        return self._process(req)

    def _process(self, req: Request) -> RequestRecord:
        if not req.tokens:
            raise ValueError("request input must be non-empty")
        cfg = self.config
        uid = req.user
        seq = req.tokens
        match = self.index.match_prefix(seq, uid)
        own = self._own.match_prefix(seq, uid, touch=False).matched_tokens
        intra = min(own, match.matched_tokens)
        tier_tokens = match.tier_counts() if cfg.tiered else None
        ttft = cfg.cost.ttft(len(seq), match.matched_tokens, tier_tokens, self.rng)
        if self.monitor is not None:
            for node in match.path:
                self.monitor.record(node, uid)
        if match.path:
            term = match.path[-1]
            self.index.pin(term)
            self._push(self.now + ttft, _UNPIN, term)
        rec = RequestRecord(req.request_id, uid, seq, self.now, match.matched_tokens, ttft, cfg.policy,
                            self.index.epoch, intra, match.matched_tokens - intra, session_id=req.session_id)
        try:
            rec.inserted_tokens = self._insert(req)
        except CapacityExhausted as exc:
            rec.dropped = True
            self.dropped += 1
            self._log("drop", request_id=req.request_id, user=uid.value, reason=str(exc))
        self._own.insert(seq, uid)
        self.records.append(rec)
        self._ensure_drain()
        return rec

    def _insert(self, req: Request) -> int:
        policy = self.config.policy
        seq, uid = req.tokens, req.user
        sp = self.config.system_prompt_tokens
        inserted = 0
        if policy is PolicyId.PUBLIC_SYSTEM_PROMPT and 0 < sp < len(seq):
            res = self.index.insert_detailed(seq[:sp], uid, req.owner)
            inserted += sum(len(n.edge) for n in res.created)
            self._label_created(req, res.created, SensitivityLabel.PUBLIC)
        res = self.index.insert_detailed(seq, uid, req.owner)
        inserted += sum(len(n.edge) for n in res.created)
        if policy is PolicyId.GLOBAL_SHARE:
            self._label_created(req, res.created, SensitivityLabel.PUBLIC)
        elif policy is PolicyId.SAFEKV:
            self._classify_created(req, res.created)
        else:
            public_all = policy is PolicyId.PUBLIC_SYSTEM_PROMPT and sp >= len(seq)
            self._label_created(req, res.created, SensitivityLabel.PUBLIC if public_all else SensitivityLabel.PRIVATE)
        return inserted

    def _label_created(self, req: Request, nodes: list[CacheNode], label: SensitivityLabel) -> None:
        for node in nodes:
            a = node.depth - len(node.edge)
            node.sensitive_truth = block_truth(req.spans, a, node.depth)[1]
            self.index.set_label(node, label, audit=f"policy:{self.config.policy.value}")
            if label is SensitivityLabel.PUBLIC and node.sensitive_truth:
                self._leak(node, "policy")

    def _classify_created(self, req: Request, nodes: list[CacheNode]) -> None:
        if not nodes:
            return
        text = DEFAULT_VOCAB.decode(req.tokens)
        offs = DEFAULT_VOCAB.char_offsets(req.tokens)
        for node in nodes:
            a, b = node.depth - len(node.edge), node.depth
            alone, ctx = block_truth(req.spans, a, b)
            node.sensitive_truth = ctx
            item = DetectionInput(text[offs[a]:offs[b]], (), alone, ctx, text, (offs[a], offs[b]), node.node_id)
            self.pipeline.submit(ClassificationJob(node, item, self.now))

    # --------------------------------------------------------------- metrics
    def metrics(self) -> dict:
        recs = self.records
        served = [r for r in recs if not r.dropped]
        total_in = sum(len(r.input) for r in recs)
        matched = sum(r.matched_tokens for r in recs)
        ttfts = np.array([r.ttft for r in served], dtype=float)
        span = max((r.arrival_time + r.ttft for r in served), default=0.0) - min((r.arrival_time for r in recs),
                                                                              default=0.0)
        out = {
            "format_version": FORMAT_VERSION,
            "policy": self.config.policy.value,
            "n_requests": len(recs),
            "n_dropped": self.dropped,
            "input_tokens": total_in,
            "matched_tokens": matched,
            "hit_rate": _num(matched / total_in) if total_in else 0.0,
            "intra_reuse": _num(sum(r.intra_tokens for r in recs) / total_in) if total_in else 0.0,
            "inter_reuse": _num(sum(r.inter_tokens for r in recs) / total_in) if total_in else 0.0,
            "ttft_ms": _ttft_summary(ttfts),
            "leak_events": self.leaks,
            "evictions": self.evictions,
            "demotions": self.index.demotions,
            "anomalies": sum(1 for e in self.events if e["type"] == "anomaly"),
            "downgrades": sum(1 for e in self.events if e["type"] == "anomaly"
                              and e["action"] == "DowngradeToPrivate"),
            "restricts": sum(1 for e in self.events if e["type"] == "anomaly" and e["action"] == "Restrict"),
            "epochs": self.index.epoch,
            "sim_time_ms": _num(span),
            "throughput_tokens_per_s": _num(total_in / (span / 1000.0)) if span > 0 else 0.0,
            "cache_digest": self.index.digest(),
        }
        if self.pipeline is not None:
            st = self.pipeline.stats
            out["detection"] = {**st.as_dict(), "tier12_fraction": _num(st.resolved_fraction((1, 2))),
                                "final_threshold": _num(self.pipeline.threshold.current_threshold)}
        return out

    def requests_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RequestRecord.CSV_FIELDS)
        for r in self.records:
            w.writerow(r.csv_row())
        return buf.getvalue()

    def events_log(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)


def _ttft_summary(ttfts: np.ndarray) -> dict:
    if ttfts.size == 0:
        return {"mean": 0.0, "p50": 0.0, "p95": 0.0, "p99": 0.0, "max": 0.0}
    p50, p95, p99 = np.percentile(ttfts, [50, 95, 99])
    return {"mean": _num(ttfts.mean()), "p50": _num(p50), "p95": _num(p95), "p99": _num(p99),
            "max": _num(ttfts.max())}


def simulate_request(req: Request, sim: Simulator) -> RequestRecord:
    """Serve one request at the simulator's current time."""
    return sim.request(req.tokens, req.user, at=max(sim.now, req.arrival_ms), spans=req.spans, owner=req.owner,
                       session_id=req.session_id)


# ------------------------------------------------------------- artifacts
ARTIFACT_FILES = ("metrics.json", "requests.csv", "events.log")


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_artifacts(sim: Simulator, out_dir: str | Path, extra: dict | None = None,
                    attack: dict | None = None) -> dict[str, str]:
    """Write the run artifact directory; returns sha256 per file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = sim.metrics()
    if extra:
        metrics.update(extra)
    files = {"metrics.json": dump_json(metrics), "requests.csv": sim.requests_csv(), "events.log": sim.events_log()}
    if attack is not None:
        files["attack.json"] = dump_json(attack)
    hashes = {}
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
        hashes[name] = hashlib.sha256(text.encode()).hexdigest()
    return hashes


def artifact_hashes(out_dir: str | Path) -> dict[str, str]:
    out = Path(out_dir)
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out.iterdir()) if p.name in ARTIFACT_FILES + ("attack.json",)}


def sim_config_for(policy: PolicyId, base: SimConfig) -> SimConfig:
    return dataclasses.replace(base, policy=policy)


__all__ = [
    "ARTIFACT_FILES", "CostModel", "FORMAT_VERSION", "RequestRecord", "SCHEDULING_MODES", "SimConfig",
    "PolicyOutcome", "Simulator", "artifact_hashes", "batch_step", "default_detectors", "dump_json",
    "mock_detectors", "run_policy", "run_scenario", "sim_config_for", "simulate_request",
    "write_artifacts",
]


# ------------------------------------------------------------- scenarios
@dataclass
class PolicyOutcome:
    label: str
    sim: Simulator
    attack: dict | None
    hashes: dict[str, str] = field(default_factory=dict)

    def summary(self) -> dict:
        m = self.sim.metrics()
        row = {"label": self.label, "policy": m["policy"], "hit_rate": m["hit_rate"],
               "ttft_mean": m["ttft_ms"]["mean"], "ttft_p95": m["ttft_ms"]["p95"], "ttft_p99": m["ttft_ms"]["p99"],
               "leak_events": m["leak_events"], "dropped": m["n_dropped"]}
        row["defense_rate"] = self.attack["defense_success_rate"] if self.attack else None
        return row


def run_policy(scenario, run, workload=None, out_dir: str | Path | None = None, engine: RuleEngine | None = None
               ) -> PolicyOutcome:
    """One policy over the scenario's workload, plus the attack campaign if configured."""
    from .adversary import run_attack_campaign
    from .workload import generate

    wl = workload if workload is not None else generate(scenario.workload)
    alert_path = Path(out_dir) / "alerts.log" if out_dir is not None else None
    if alert_path is not None:
        alert_path.parent.mkdir(parents=True, exist_ok=True)
        alert_path.write_text("")
    sim = Simulator(scenario.sim_config(run), engine=engine, alert_path=alert_path)
    sim.schedule(wl.requests)
    attack = None
    if scenario.attack is not None:
        attack = run_attack_campaign(scenario.attack.n_secrets, scenario.attack, sim)
    sim.run()
    outcome = PolicyOutcome(run.label, sim, attack)
    if out_dir is not None:
        extra = {"label": run.label, "scenario": scenario.name, "seed": scenario.seed,
                 "workload": scenario.workload.to_dict(), "workload_digest": wl.digest()}
        outcome.hashes = write_artifacts(sim, out_dir, extra, attack)
    return outcome


def run_scenario(scenario, out_dir: str | Path | None = None, engine: RuleEngine | None = None
                 ) -> list[PolicyOutcome]:
    """Every listed policy on one shared workload (paired comparison)."""
    from .workload import generate

    wl = generate(scenario.workload)
    base = Path(out_dir) if out_dir is not None else None
    return [run_policy(scenario, run, wl, base / run.label if base is not None else None, engine)
            for run in scenario.policies]
