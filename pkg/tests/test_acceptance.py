"""End-to-end acceptance checks, one test per criterion.

The conftest prints a PASS/FAIL line for each test in this module.
"""

from __future__ import annotations

import itertools
import json
import os
import random
import threading
import time
from pathlib import Path

import pytest

from oracles import chance_ci, flat_match, flat_records, random_ops_index
from safekv.adversary import CampaignConfig, run_attack_campaign
from safekv.cache_index import CapacityExhausted, RadixIndex, TierBudget
from safekv.config import load_config
from safekv.core import PolicyId, SensitivityLabel as L, Tier, UserId
from safekv.detection import DetectionInput, DetectionPipeline, DetectorMode, DetectorSpec, RuleEngine, make_detector
from safekv.monitor import entropy_of
from safekv.serving_sim import SimConfig, Simulator, artifact_hashes, mock_detectors, run_scenario
from safekv.workload import PRESET_NAMES, plant_secrets, tier1_corpus

PAPER_ALPHAS = (0.63, 0.04, 0.29)
ORACLE = tuple(DetectorSpec(t, DetectorMode.ORACLE) for t in (1, 2, 3))
GOLDENS = Path(__file__).parent / "goldens"


def campaign(policy, n, seed, detectors=None):
    sim = Simulator(SimConfig(policy=policy, detectors=detectors))
    return run_attack_campaign(n, CampaignConfig(n_secrets=n, seed=seed), sim)


# 1 ------------------------------------------------------------------------
def test_criterion_01_leak_bound():
    pipe = DetectionPipeline([make_detector(s) for s in mock_detectors(PAPER_ALPHAS, seed=1)])
    n = 100_000
    t0 = time.perf_counter()
    leaked = sum(pipe.classify(DetectionInput("s", truth_alone=True)).label is L.PUBLIC for _ in range(n))
    rate = leaked / n
    lo, hi = chance_ci(n, 0.63 * 0.04 * 0.29)
    assert lo <= rate <= hi and rate <= 0.03
    assert time.perf_counter() - t0 < 30


# 2 ------------------------------------------------------------------------
def test_criterion_02_defense_rate():
    for seed in range(5):
        safe = campaign(PolicyId.SAFEKV, 200, seed, mock_detectors(PAPER_ALPHAS, seed=seed))
        gs = campaign(PolicyId.GLOBAL_SHARE, 200, seed)
        assert safe["defense_success_rate"] >= 0.94 - 0.03, (seed, safe["defense_success_rate"])
        assert gs["defense_success_rate"] <= 0.03, (seed, gs["defense_success_rate"])


# 3 ------------------------------------------------------------------------
def test_criterion_03_oracle_chance_bound():
    oracle = campaign(PolicyId.SAFEKV, 2000, 9, ORACLE)
    cp = campaign(PolicyId.CACHE_PARTITION, 2000, 9)
    assert oracle["positions"] == 10_000
    lo, hi = chance_ci(oracle["positions"], 1 / 10)
    assert lo <= oracle["per_token_recovery_rate"] <= hi
    strip = [{k: v for k, v in m.items() if k != "calibration"} for m in (oracle, cp)]
    assert strip[0] == strip[1]


# 4 ------------------------------------------------------------------------
def _all_queries(alphabet, depth):
    return [q for n in range(1, depth + 1) for q in itertools.product(range(alphabet), repeat=n)]


def test_criterion_04_prefix_match_oracle():
    bad = []

    def check(index, q, user):
        got = index.match_prefix(q, user, touch=False).matched_tokens
        want = flat_match(flat_records(index), q, user)
        if got != want:
            bad.append((q, user, got, want))

    for seed in range(10_000):
        random_ops_index(random.Random(seed), 8, alphabet=3, max_len=5, on_query=check, queries_per_op=1,
                         block_size=(None, 1, 2)[seed % 3], capacity=(None, 16)[seed % 2])
    assert bad == []

    # every query of length 1..5 over a 3-letter alphabet, for every user, on small trees
    queries = _all_queries(3, 5)
    assert len(queries) == 3 + 9 + 27 + 81 + 243
    for seed in range(300):
        rng = random.Random(10**6 + seed)
        idx = random_ops_index(rng, rng.randint(1, 10), alphabet=3, max_len=5, block_size=(None, 1)[seed % 2])
        if idx.node_count > 20:
            continue
        records = flat_records(idx)
        for q in queries:
            for user in range(3):
                assert idx.match_prefix(q, user, touch=False).matched_tokens == flat_match(records, q, user)


# 5 ------------------------------------------------------------------------
def test_criterion_05_compression_transparency():
    for seed in range(1000):
        rng = random.Random(seed)
        idx = random_ops_index(rng, 20, block_size=(1, 2)[seed % 2], compress=False)
        queries = [[rng.randrange(4) for _ in range(rng.randint(1, 9))] for _ in range(20)]

        def snap():
            return [(r.matched_tokens, [h.token_count for h in r.handles])
                    for q in queries for r in (idx.match_prefix(q, u, touch=False) for u in range(3))]

        before = snap()
        idx.compress_all()
        idx.check_invariants()
        assert snap() == before, seed


# 6 ------------------------------------------------------------------------
def test_criterion_06_eviction_order_and_safety():
    for seed in range(300):
        rng = random.Random(seed)
        idx = random_ops_index(rng, 25, block_size=2)
        for node in rng.sample(list(idx.iter_nodes()), k=min(2, idx.node_count)):
            idx.pin(node)
        for _ in range(6):
            leaves = [n for n in idx.iter_nodes() if n.is_leaf and n.held == 0]
            want = min(leaves, key=lambda n: (n.access_epoch, n.label is not L.PUBLIC, n.node_id), default=None)
            heads = [n for n in idx.iter_nodes() if n.is_compressed and len(n.chain) > 1]
            if want is None:
                with pytest.raises(CapacityExhausted):
                    idx.evict(1)
                break
            # leaf-only, oldest epoch (largest delta), public first on ties
            oldest = min(n.access_epoch for n in leaves)
            assert want.is_leaf and want.access_epoch == oldest
            if any(n.access_epoch == oldest and n.label is L.PUBLIC for n in leaves):
                assert want.label is L.PUBLIC
            handle = want.own_handle
            assert idx.evict(1)[0].value == handle.value and not want.alive
            # a pri_root with a non-empty aggregated list is never the one freed
            assert all(h.alive for h in heads)
            idx.check_invariants()

    rng = random.Random(1)
    idx = RadixIndex(TierBudget.from_tokens(16, 16, 16), tiered=True, block_size=4)
    for _ in range(2000):
        try:
            idx.insert([rng.randrange(6) for _ in range(rng.randint(1, 12))], rng.randrange(3))
        except CapacityExhausted:
            pass
        assert all(idx.budget.used[t] <= idx.budget.capacity[t] for t in Tier)

    for _ in range(100):
        m_kv, m_t = rng.randrange(1, 10**12), rng.randrange(1, 10**6)
        assert TierBudget.from_memory(m_kv, m_t).capacity[Tier.HBM] == m_kv // m_t


# 7 ------------------------------------------------------------------------
def test_criterion_07_entropy_monitor_bounded_exposure():
    assert entropy_of(10, 1) == 0.1
    interval = 30_000
    # every tier misses, so the victim's sensitive blocks are finalized Public
    leaky = mock_detectors((1.0, 1.0, 1.0))
    sim = Simulator(SimConfig(policy=PolicyId.SAFEKV, detectors=leaky))
    (s,) = plant_secrets(1, seed=3)
    sim.request(s.tokens, s.victim, at=0.0, spans=(s.span,))
    for i in range(9):  # the victim's own window, after the slowest tier has answered
        sim.request(s.tokens, s.victim, at=20_000.0 + i)
    assert sim.leaks > 0
    attackers = [UserId(9_000 + k) for k in range(3)]
    first_cross = interval + 1_000.0
    for k, a in enumerate(attackers):
        assert sim.request(s.tokens, a, at=first_cross + k).matched_tokens == len(s.tokens)
    sim.advance_to(first_cross + 2 * interval)
    downs = [e for e in sim.events if e["type"] == "anomaly" and e["action"] == "DowngradeToPrivate"]
    assert downs and downs[0]["time_ms"] <= first_cross + 2 * interval
    cold = Simulator(SimConfig(policy=PolicyId.SAFEKV, detectors=leaky)).request(s.tokens, attackers[0]).ttft
    for a in attackers + [UserId(9_999)]:
        assert sim.request(s.tokens, a).ttft == cold
    assert sim.request(s.tokens, s.victim).matched_tokens == len(s.tokens)


# 8 ------------------------------------------------------------------------
def test_criterion_08_policy_ordering():
    for seed in range(3):
        sc = load_config("multiturn", seed=seed)
        sc.attack = None
        runs = {o.label: o.sim for o in run_scenario(sc)}
        mean = {k: s.metrics()["ttft_ms"]["mean"] for k, s in runs.items()}
        gs, orc, mock, cp = (mean[k] for k in ("GlobalShare", "SafeKV-oracle", "SafeKV-mock", "CachePartition"))
        assert gs <= orc <= mock <= cp, mean
        assert orc <= 1.15 * gs
        ref = runs["GlobalShare"]
        predicted = ref.config.cost.c_prefill * sum(r.inter_tokens for r in ref.records) / len(ref.records)
        assert abs((cp - gs) - predicted) <= 0.10 * predicted


# 9 ------------------------------------------------------------------------
def test_criterion_09_tier_split():
    for seed in range(3):
        sc = load_config("multiturn", seed=seed)
        sc.attack = None
        sc.policies = [r for r in sc.policies if r.label == "SafeKV-mock"]
        (out,) = run_scenario(sc)
        det = out.sim.metrics()["detection"]
        assert det["tier12_fraction"] >= 0.92, det


# 10 -----------------------------------------------------------------------
@pytest.mark.parametrize("preset", PRESET_NAMES)
def test_criterion_10_golden_hashes(preset, tmp_path):
    run_scenario(load_config(preset), tmp_path)
    got = {p.name: artifact_hashes(p) for p in sorted(tmp_path.iterdir()) if p.is_dir()}
    golden = GOLDENS / f"{preset}.json"
    if os.environ.get("SAFEKV_UPDATE_GOLDENS") == "1":
        golden.parent.mkdir(exist_ok=True)
        golden.write_text(json.dumps(got, indent=2, sort_keys=True) + "\n")
    assert got == json.loads(golden.read_text())


# 11 -----------------------------------------------------------------------
def test_criterion_11_rule_engine(tmp_path):
    engine = RuleEngine()
    corpus = tier1_corpus(5000, seed=0)
    t0 = time.perf_counter()
    missed = [(text, cat) for text, cat, (a, b) in corpus if not engine.scan_span(text, a, b).sensitive]
    per_prompt = (time.perf_counter() - t0) / len(corpus)
    assert missed == []
    assert per_prompt < 1e-3

    paths = []
    for k in range(2):
        p = tmp_path / f"v{k}.json"
        rules = [{"rule_id": f"r{i}", "category": f"C{k}", "kind": "regex", "pattern": f"v{k}x"} for i in range(30)]
        p.write_text(json.dumps({"version": k + 1, "rules": rules}))
        paths.append(p)
    engine = RuleEngine.from_path(paths[0])
    mixed, stop = [], threading.Event()

    def scanner():
        n = 0
        while not stop.is_set() or n < 500:
            cats = set(engine.scan("v0x v1x").categories)
            if len(cats) != 1:
                mixed.append(cats)
            n += 1

    threads = [threading.Thread(target=scanner) for _ in range(4)]
    for t in threads:
        t.start()
    for i in range(100):
        engine.reload(paths[i % 2])
    stop.set()
    for t in threads:
        t.join()
    assert mixed == []
