"""Asynchronous block classification feeding labels back into the cache index.

New blocks wait in a bounded queue as ``PendingPrivate``. A drain pulls up
to ``batch_size`` jobs and runs Tier-1, then Tier-2, then Tier-3 as needed.
Any sensitive verdict ends the cascade with a private label; a block is only
published once no tier has flagged it.
"""

from __future__ import annotations

import collections
import threading
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Sequence

from ..core import SensitivityLabel
from .detectors import (Detector, DetectionInput, DetectorMode, DetectorSpec, DetectorUnavailable,
                        ThresholdState, adjust_threshold, make_detector)
from .rules import DetectionVerdict, RuleEngine

if TYPE_CHECKING:
    from ..cache_index import CacheNode, RadixIndex

ESCALATION_MODES = ("confidence", "always")


@dataclass
class ClassificationJob:
    node: CacheNode | None
    item: DetectionInput
    enqueued_at: float = 0.0


@dataclass
class Completion:
    job: ClassificationJob
    label: SensitivityLabel
    resolved_tier: int
    latency_ms: float
    verdicts: tuple[DetectionVerdict, ...] = ()
    unavailable: bool = False

    @property
    def categories(self) -> tuple[str, ...]:
        out: dict[str, None] = {}
        for v in self.verdicts:
            if v.sensitive:
                out.update(dict.fromkeys(v.categories))
        return tuple(out)


@dataclass
class PipelineStats:
    invocations: dict[int, int] = field(default_factory=lambda: {1: 0, 2: 0, 3: 0})
    resolved_at: dict[int, int] = field(default_factory=lambda: {1: 0, 2: 0, 3: 0})
    public: int = 0
    private: int = 0
    saturated: int = 0
    unavailable: int = 0
    skipped: int = 0
    submitted: int = 0

    def resolved_fraction(self, tiers: Sequence[int] = (1, 2)) -> float:
        total = sum(self.resolved_at.values())
        return sum(self.resolved_at[t] for t in tiers) / total if total else 1.0

    def as_dict(self) -> dict:
        return {
            "invocations": {str(k): v for k, v in self.invocations.items()},
            "resolved_at": {str(k): v for k, v in self.resolved_at.items()},
            "public": self.public,
            "private": self.private,
            "saturated": self.saturated,
            "unavailable": self.unavailable,
            "skipped": self.skipped,
            "submitted": self.submitted,
        }


def default_tiers(seed: int = 0, *, oracle: bool = False, engine: RuleEngine | None = None,
                  alphas: tuple[float, float] = (0.04, 0.29)) -> list[Detector]:
    """Rule engine at Tier-1 with oracle or mock detectors behind it."""
    mode = DetectorMode.ORACLE if oracle else DetectorMode.MOCK
    return [
        make_detector(DetectorSpec(1, DetectorMode.RULES, seed=seed), engine),
        make_detector(DetectorSpec(2, mode, false_negative_rate=0.0 if oracle else alphas[0], seed=seed)),
        make_detector(DetectorSpec(3, mode, false_negative_rate=0.0 if oracle else alphas[1], seed=seed)),
    ]


class DetectionPipeline:
    def __init__(self, tiers: Sequence[Detector], *, threshold: ThresholdState | None = None,
                 escalation: str = "confidence", queue_size: int = 1_000_000, batch_size: int = 64,
                 index: RadixIndex | None = None):
        if len(tiers) != 3:
            raise ValueError("exactly three tiers are required")
        if escalation not in ESCALATION_MODES:
            raise ValueError(f"escalation must be one of {ESCALATION_MODES}")
        if queue_size <= 0 or batch_size <= 0:
            raise ValueError("queue_size and batch_size must be positive")
        self.tiers = list(tiers)
        self.threshold = threshold or ThresholdState()
        self.escalation = escalation
        self.queue_size = queue_size
        self.batch_size = batch_size
        self.stats = PipelineStats()
        self._queue: collections.deque[ClassificationJob] = collections.deque()
        self._lock = threading.Lock()
        self._items: dict[int, DetectionInput] = {}
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.on_complete: Callable[[Completion], None] | None = None
        self.index: RadixIndex | None = None
        if index is not None:
            self.attach(index)

    # ------------------------------------------------------------ plumbing
    def attach(self, index: RadixIndex) -> None:
        self.index = index
        index.on_split = self._on_split

    def _on_split(self, upper: CacheNode, lower: CacheNode) -> None:
        # The upper half inherits the pending block's verdict.
        item = self._items.get(lower.node_id)
        if item is not None and upper.label is SensitivityLabel.PENDING_PRIVATE:
            self.submit(ClassificationJob(upper, item))

    def __len__(self) -> int:
        return len(self._queue)

    def submit(self, job: ClassificationJob) -> bool:
        with self._lock:
            if len(self._queue) >= self.queue_size:
                self.stats.saturated += 1
                return False
            self._queue.append(job)
            self.stats.submitted += 1
            if job.node is not None:
                self._items[job.node.node_id] = job.item
            return True

    def update_threshold(self, load: float, recent_alerts: int) -> ThresholdState:
        self.threshold = adjust_threshold(self.threshold, load, recent_alerts)
        return self.threshold

    # ------------------------------------------------------------ cascade
    def classify(self, item: DetectionInput) -> Completion:
        """Run the tier cascade for one block without touching the index."""
        verdicts: list[DetectionVerdict] = []
        latency = 0.0
        thr = self.threshold.current_threshold
        for tier, det in enumerate(self.tiers, start=1):
            self.stats.invocations[tier] += 1
            latency += det.latency_ms()
            if tier == 3 and not item.history and item.context is not None and item.span is not None:
                item = DetectionInput(item.text, (item.context[: item.span[0]],), item.truth_alone,
                                      item.truth_with_context, item.context, item.span, item.block_id)
            try:
                v = det.classify(item, thr)
            except DetectorUnavailable:
                self.stats.unavailable += 1
                return self._finish(ClassificationJob(None, item), SensitivityLabel.PRIVATE, tier, latency,
                                    verdicts, unavailable=True)
            verdicts.append(v)
            if v.sensitive:
                return self._finish(ClassificationJob(None, item), SensitivityLabel.PRIVATE, tier, latency, verdicts)
            last = tier == 3
            if not last and (tier == 1 or self.escalation == "always" or v.escalate):
                continue
            return self._finish(ClassificationJob(None, item), SensitivityLabel.PUBLIC, tier, latency, verdicts)
        raise AssertionError("unreachable")

    def _finish(self, job, label, tier, latency, verdicts, unavailable=False) -> Completion:
        self.stats.resolved_at[tier] += 1
        if label is SensitivityLabel.PUBLIC:
            self.stats.public += 1
        else:
            self.stats.private += 1
        return Completion(job, label, tier, latency, tuple(verdicts), unavailable)

    def drain(self, max_items: int | None = None, apply: bool = True) -> list[Completion]:
        """Classify up to ``max_items`` (default ``batch_size``) queued blocks."""
        limit = self.batch_size if max_items is None else max_items
        out = []
        while len(out) < limit:
            with self._lock:
                if not self._queue:
                    break
                job = self._queue.popleft()
            node = job.node
            if node is not None and (not node.alive or node.label is not SensitivityLabel.PENDING_PRIVATE):
                self.stats.skipped += 1
                self._items.pop(node.node_id, None)
                continue
            done = self.classify(job.item)
            done.job = job
            if apply:
                self.apply(done)
            out.append(done)
        return out

    def drain_all(self, apply: bool = True) -> list[Completion]:
        out = []
        while self._queue:
            out.extend(self.drain(apply=apply))
        return out

    def apply(self, done: Completion) -> int:
        """Write a verdict back to the index; no-op if the block moved on meanwhile."""
        node = done.job.node
        changed = 0
        if node is not None:
            self._items.pop(node.node_id, None)
        if node is not None and self.index is not None and node.alive \
                and node.label is SensitivityLabel.PENDING_PRIVATE:
            if done.label is SensitivityLabel.PUBLIC:
                tiers = ",".join(f"t{v.tier}" for v in done.verdicts)
                changed = self.index.set_label(node, SensitivityLabel.PUBLIC, False, audit=f"passed:{tiers}")
            else:
                changed = self.index.set_label(node, SensitivityLabel.PRIVATE, True,
                                               audit=f"flagged:t{done.resolved_tier}")
        if self.on_complete is not None:
            self.on_complete(done)
        return changed

    # ------------------------------------------------------- background mode
    def start(self, interval_s: float = 0.01) -> None:
        if self._thread is not None:
            return
        self._stop.clear()

        def loop():
            while not self._stop.is_set():
                if not self.drain():
                    self._stop.wait(interval_s)

        self._thread = threading.Thread(target=loop, name="safekv-detect", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        if self._thread is None:
            return
        self._stop.set()
        self._thread.join()
        self._thread = None


def classify_block(pipeline: DetectionPipeline, node: CacheNode, item: DetectionInput) -> bool:
    """Queue ``node`` for classification; returns False if the queue is full."""
    if node.label is not SensitivityLabel.PENDING_PRIVATE:
        raise ValueError("only PendingPrivate blocks can be queued")
    return pipeline.submit(ClassificationJob(node, item))
