from __future__ import annotations

import json
import random

from hypothesis import given, strategies as st

from safekv.cache_index import RadixIndex
from safekv.core import OwnerClass, SensitivityLabel as L
from safekv.monitor import (USER_SET_CAP, AccessStats, AlertLog, AnomalyAction, EntropyMonitor, MonitorConfig,
                            check_anomaly, entropy, entropy_of, is_suspicious, record_access, roll_window)


def public_node(owner=OwnerClass.CUSTOMER):
    idx = RadixIndex()
    node = idx.insert([1, 2, 3], 1, owner)
    idx.set_label(node, L.PUBLIC)
    return idx, node


def stats(hit_cur, users, hit_pre=0, u_pre=0):
    s = AccessStats(hit_pre=hit_pre, u_pre=u_pre)
    for i in range(hit_cur):
        s.record(100 + i % users)
    return s


def test_record_access_counts():
    _, node = public_node()
    record_access(node, 7)
    assert (node.stats.hit_cur, node.stats.u_cnt) == (1, 1)
    for _ in range(9):
        record_access(node, 7)
    assert (node.stats.hit_cur, node.stats.u_cnt) == (10, 1)


def test_entropy_values():
    assert entropy(stats(10, 1)) == 0.1
    assert entropy(stats(8, 8)) == 1.0
    assert entropy(AccessStats()) == 0.0
    assert entropy_of(20, 1) == 0.05


def test_roll_window():
    s = stats(5, 2)
    s.roll()
    assert (s.hit_pre, s.u_pre, s.hit_cur, s.u_cnt) == (5, 2, 0, 0)
    s.roll()
    assert (s.hit_pre, s.u_pre) == (0, 0)


def test_roll_window_node():
    _, node = public_node()
    record_access(node, 1)
    roll_window(node)
    assert node.stats.hit_pre == 1


def test_oracle_below_saturation():
    rng = random.Random(0)
    idx = RadixIndex(block_size=1)
    nodes = idx.insert_detailed(list(range(20)), 1).created
    hits = {n.node_id: 0 for n in nodes}
    users = {n.node_id: set() for n in nodes}
    total = rolled = 0
    for i in range(10_000):
        node = rng.choice(nodes)
        u = rng.randrange(USER_SET_CAP - 1)
        record_access(node, u)
        hits[node.node_id] += 1
        users[node.node_id].add(u)
        total += 1
        if i % 2500 == 2499:
            for n in nodes:
                assert n.stats.hit_cur == hits[n.node_id] and n.stats.u_cnt == len(users[n.node_id])
                rolled += n.stats.hit_cur
                roll_window(n)
                hits[n.node_id], users[n.node_id] = 0, set()
    assert rolled + sum(n.stats.hit_cur for n in nodes) == total


def test_saturation_overestimates():
    s = AccessStats()
    for u in range(USER_SET_CAP + 10):
        s.record(u)
    s.record(0)
    assert s.saturated and s.u_cnt == USER_SET_CAP + 10


@given(st.lists(st.integers(0, 200), max_size=300))
def test_entropy_range(users):
    s = AccessStats()
    for u in users:
        s.record(u)
    assert 0.0 <= entropy(s) <= 1.0


def test_burst_on_private_history_downgrades():
    idx, node = public_node()
    node.stats = AccessStats(hit_pre=20, u_pre=1)
    for i in range(8):
        node.stats.record(100 + i % 6)
    ev = check_anomaly(node, MonitorConfig(), idx)
    assert ev.action is AnomalyAction.DOWNGRADE_TO_PRIVATE
    assert abs(ev.entropy_now - 0.75) < 1e-12 and abs(ev.entropy_prev - 0.05) < 1e-12
    assert node.label is L.PRIVATE


def test_broad_history_is_not_suspicious():
    idx, node = public_node()
    node.stats = AccessStats(hit_pre=20, u_pre=12)
    for i in range(8):
        node.stats.record(100 + i % 6)
    assert check_anomaly(node, MonitorConfig(), idx).action is AnomalyAction.NONE
    assert node.label is L.PUBLIC


def test_business_block_restricted_and_alerted(tmp_path):
    idx, node = public_node(OwnerClass.BUSINESS)
    for u in (1, 1, 1):
        node.stats.record(u)
    mon = EntropyMonitor(alerts=AlertLog(tmp_path / "alerts.log"))
    mon.on_epoch(idx)
    for u in (5, 6, 7):
        node.stats.record(u)
    (ev,) = mon.on_epoch(idx)
    assert ev.action is AnomalyAction.RESTRICT and node.label is L.RESTRICTED
    assert idx.match_prefix([1, 2, 3], 5).matched_tokens == 0
    rec = json.loads((tmp_path / "alerts.log").read_text().splitlines()[0])
    assert rec["action"] == "Restrict" and rec["node_id"] == node.node_id


def test_first_reuse_without_baseline_not_suspicious():
    s = stats(2, 2)
    assert not is_suspicious(s, MonitorConfig())


def test_single_user_window_not_suspicious():
    s = stats(1, 1, hit_pre=10, u_pre=1)
    assert not is_suspicious(s, MonitorConfig())


def test_check_never_promotes():
    for lab in (L.PRIVATE, L.RESTRICTED, L.PENDING_PRIVATE):
        idx = RadixIndex()
        node = idx.insert([1], 1)
        if lab is not L.PENDING_PRIVATE:
            idx.set_label(node, lab)
        node.stats = AccessStats(hit_pre=20, u_pre=1)
        for u in range(8):
            node.stats.record(u)
        check_anomaly(node, MonitorConfig(), idx)
        assert node.label is lab


def test_disabled_monitor_only_rolls():
    idx, node = public_node()
    mon = EntropyMonitor(MonitorConfig(enabled=False))
    node.stats = AccessStats(hit_pre=20, u_pre=1)
    for u in range(8):
        node.stats.record(u)
    assert mon.on_epoch(idx) == [] and node.label is L.PUBLIC and node.stats.hit_pre == 8
