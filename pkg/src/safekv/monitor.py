"""Entropy-based runtime fallback for blocks that were shared by mistake.

Each cache node carries an :class:`AccessStats` rolling window. At every
monitor epoch the :class:`EntropyMonitor` compares the current window's
access entropy (distinct users / hits) with the previous window's, and a
sudden jump on a block that historically served at most ``u_pre_max`` users
is treated as probing. Customer blocks are downgraded to private, business
blocks are restricted and an alert is emitted.
"""

from __future__ import annotations

import enum
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, TextIO

from .core import OwnerClass, SensitivityLabel, UserId, user_key

if TYPE_CHECKING:
    from .cache_index import CacheNode, RadixIndex

USER_SET_CAP = 64


@dataclass
class AccessStats:
    """Rolling access window for one block.

    The distinct-user tracker is exact up to :data:`USER_SET_CAP` users. Past
    that it stops storing ids and counts every further hit as a new user, so
    ``u_cnt`` can only over-estimate and entropy errs toward suspicion.
    """

    hit_cur: int = 0
    hit_pre: int = 0
    u_pre: int = 0
    users: set[int] = field(default_factory=set)
    overflow: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def u_cnt(self) -> int:
        return len(self.users) + self.overflow

    @property
    def saturated(self) -> bool:
        return len(self.users) >= USER_SET_CAP

    def record(self, user: UserId | int) -> None:
        uid = user_key(user)
        with self._lock:
            self.hit_cur += 1
            if uid in self.users:
                return
            if len(self.users) < USER_SET_CAP:
                self.users.add(uid)
            else:
                self.overflow += 1

    def roll(self) -> None:
        with self._lock:
            self.hit_pre = self.hit_cur
            self.u_pre = self.u_cnt
            self.hit_cur = 0
            self.users = set()
            self.overflow = 0

    def copy(self) -> AccessStats:
        return AccessStats(self.hit_cur, self.hit_pre, self.u_pre, set(self.users), self.overflow)


def entropy_of(hits: int, users: int) -> float:
    if hits <= 0:
        return 0.0
    return users / hits


def entropy(stats: AccessStats) -> float:
    return entropy_of(stats.hit_cur, stats.u_cnt)


def record_access(node: CacheNode, user: UserId | int) -> None:
    node.stats.record(user)


def roll_window(node: CacheNode) -> None:
    node.stats.roll()


class AnomalyAction(enum.Enum):
    DOWNGRADE_TO_PRIVATE = "DowngradeToPrivate"
    RESTRICT = "Restrict"
    NONE = "None"


@dataclass(frozen=True)
class MonitorConfig:
    entropy_jump: float = 0.3
    u_pre_max: int = 1
    epoch_interval: float = 30_000.0  # ms of simulated time
    min_users: int = 2
    enabled: bool = True


@dataclass
class AnomalyEvent:
    node: CacheNode
    entropy_now: float
    entropy_prev: float
    u_pre: int
    action: AnomalyAction
    epoch: int

    def to_record(self) -> dict:
        return {
            "type": "anomaly",
            "node_id": self.node.node_id,
            "creator": self.node.creator_id,
            "owner_class": self.node.owner_class.value,
            "entropy_now": round(self.entropy_now, 6),
            "entropy_prev": round(self.entropy_prev, 6),
            "u_pre": self.u_pre,
            "action": self.action.value,
            "epoch": self.epoch,
        }


def is_suspicious(stats: AccessStats, config: MonitorConfig) -> bool:
    """Entropy rose by ``entropy_jump`` on a block that one user had to itself.

    A block with no previous-window traffic has no baseline, and a window
    with a single user is not cross-user, so neither can be suspicious.
    """
    if stats.hit_pre == 0 or stats.u_cnt < config.min_users:
        return False
    jump = entropy(stats) - entropy_of(stats.hit_pre, stats.u_pre)
    return jump >= config.entropy_jump and stats.u_pre <= config.u_pre_max


def check_anomaly(node: CacheNode, config: MonitorConfig, index: RadixIndex | None = None,
                  epoch: int = 0) -> AnomalyEvent:
    """Evaluate one public block and apply the mitigation when suspicious.

    With ``index`` given, a customer block is relabelled private (propagated to
    its subtree) and a business block becomes restricted. Without it the
    decision is only reported.
    """
    stats = node.stats
    now, prev = entropy(stats), entropy_of(stats.hit_pre, stats.u_pre)
    action = AnomalyAction.NONE
    if node.label is SensitivityLabel.PUBLIC and is_suspicious(stats, config):
        if node.owner_class is OwnerClass.CUSTOMER:
            action = AnomalyAction.DOWNGRADE_TO_PRIVATE
            if index is not None:
                index.set_label(node, SensitivityLabel.PRIVATE, propagate=True, audit="monitor:downgrade")
        else:
            action = AnomalyAction.RESTRICT
            if index is not None:
                index.set_label(node, SensitivityLabel.RESTRICTED, propagate=True, audit="monitor:restrict")
    return AnomalyEvent(node, now, prev, stats.u_pre, action, epoch)


class AlertLog:
    """Append-only JSON-lines sink for anomaly records."""

    def __init__(self, path: str | Path | None = None, stream: TextIO | None = None):
        self.path = Path(path) if path is not None else None
        self.stream = stream
        self.records: list[dict] = []

    def emit(self, record: dict) -> None:
        self.records.append(record)
        line = json.dumps(record, sort_keys=True)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        if self.stream is not None:
            self.stream.write(line + "\n")


class EntropyMonitor:
    """Periodic task: check public blocks that saw traffic, then roll windows.

    Accesses recorded through :meth:`record` are tracked so an epoch only
    visits blocks with traffic in the current or previous window. Without
    tracking, :meth:`on_epoch` scans the whole index.
    """

    def __init__(self, config: MonitorConfig | None = None, alerts: AlertLog | None = None):
        self.config = config or MonitorConfig()
        self.alerts = alerts if alerts is not None else AlertLog()
        self.events: list[AnomalyEvent] = []
        self._cur: dict[int, CacheNode] = {}
        self._prev: dict[int, CacheNode] = {}
        self._tracking = False

    def record(self, node: CacheNode, user: UserId | int) -> None:
        self._tracking = True
        node.stats.record(user)
        self._cur[node.node_id] = node

    def on_epoch(self, index: RadixIndex, epoch: int | None = None) -> list[AnomalyEvent]:
        epoch = index.epoch if epoch is None else epoch
        fired: list[AnomalyEvent] = []
        if self._tracking:
            nodes: Iterable[CacheNode] = [n for n in {**self._prev, **self._cur}.values() if n.alive]
        else:
            nodes = list(index.iter_nodes())
        nodes = sorted(nodes, key=lambda n: n.node_id)
        if self.config.enabled:
            for node in nodes:
                if node.label is not SensitivityLabel.PUBLIC or node.stats.hit_cur == 0:
                    continue
                event = check_anomaly(node, self.config, index, epoch)
                if event.action is not AnomalyAction.NONE:
                    fired.append(event)
                    if event.action is AnomalyAction.RESTRICT:
                        self.alerts.emit(event.to_record())
        for node in nodes:
            if node.stats.hit_cur or node.stats.hit_pre:
                node.stats.roll()
        self._prev, self._cur = self._cur, {}
        self.events.extend(fired)
        return fired
