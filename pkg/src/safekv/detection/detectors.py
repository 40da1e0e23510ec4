"""Tier detectors: oracle, seeded mock with configured error rates, and external.

Every detector consumes a :class:`DetectionInput` and returns a
:class:`DetectionVerdict`. Mock confidence scores follow a simple model:

* true positive: ``score = 1 - fnr`` (final, never escalates)
* false negative: ``score ~ U(0, t_min)``, so a missed secret is always
  below any reachable threshold and escalates to the next tier
* true negative: ``score ~ Beta(a, b)``; escalates when below the threshold
* false positive: ``score = 1 - fpr``

Blocks whose sensitivity depends on history they cannot see are uncertain
by construction and escalate as well.
"""

from __future__ import annotations

import enum
import json
import math
import random
import selectors
import subprocess
import threading
from dataclasses import dataclass
from typing import Protocol, Sequence

from .rules import DetectionVerdict, RuleEngine

T_MIN = 0.1
K_LOAD = 0.05
K_ALERT = 0.02


class DetectorUnavailable(RuntimeError):
    pass


class DetectorMode(enum.Enum):
    ORACLE = "Oracle"
    MOCK = "MockWithFNR"
    EXTERNAL = "External"
    RULES = "Rules"  # tier 1 only


@dataclass(frozen=True)
class LatencyModel:
    """Per-call latency in milliseconds: ``constant`` or ``lognormal`` (median, sigma)."""

    kind: str = "constant"
    value_ms: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "lognormal"):
            raise ValueError(f"unknown latency kind {self.kind!r}")
        if self.value_ms < 0 or self.sigma < 0:
            raise ValueError("latency parameters must be non-negative")

    def sample(self, rng: random.Random) -> float:
        if self.kind == "constant" or self.sigma == 0:
            return self.value_ms
        return rng.lognormvariate(math.log(max(self.value_ms, 1e-9)), self.sigma)

    @classmethod
    def from_obj(cls, obj) -> LatencyModel:
        if isinstance(obj, LatencyModel):
            return obj
        if isinstance(obj, (int, float)):
            return cls("constant", float(obj))
        return cls(obj.get("kind", "constant"), float(obj.get("value_ms", 0.0)), float(obj.get("sigma", 0.0)))


DEFAULT_LATENCY = {
    1: LatencyModel("constant", 0.1),
    2: LatencyModel("lognormal", 120.0, 0.25),
    3: LatencyModel("lognormal", 2500.0, 0.35),
}


@dataclass(frozen=True)
class DetectorSpec:
    tier: int
    mode: DetectorMode = DetectorMode.ORACLE
    false_negative_rate: float = 0.0
    false_positive_rate: float = 0.0
    latency: LatencyModel | None = None
    seed: int = 0
    tn_beta: tuple[float, float] = (4.0, 1.0)
    command: tuple[str, ...] = ()
    timeout_s: float = 2.0

    def __post_init__(self):
        if self.tier not in (1, 2, 3):
            raise ValueError("tier must be 1, 2 or 3")
        for rate in (self.false_negative_rate, self.false_positive_rate):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("rates must lie in [0, 1]")
        if self.mode is DetectorMode.RULES and self.tier != 1:
            raise ValueError("the rule engine only serves tier 1")

    @property
    def latency_model(self) -> LatencyModel:
        return self.latency or DEFAULT_LATENCY[self.tier]


@dataclass
class DetectionInput:
    """One block to classify.

    ``text`` is the block itself; ``context`` is the full request text and
    ``span`` the block's character range inside it (for rule scanning).
    ``history`` holds the same user's earlier text. ``truth_alone`` and
    ``truth_with_context`` are ground truth used by oracle and mock modes.
    """

    text: str
    history: Sequence[str] = ()
    truth_alone: bool = False
    truth_with_context: bool | None = None
    context: str | None = None
    span: tuple[int, int] | None = None
    block_id: int = 0

    @property
    def truth(self) -> bool:
        return self.truth_alone if self.truth_with_context is None else self.truth_with_context

    @property
    def context_dependent(self) -> bool:
        return self.truth_with_context is not None and self.truth_with_context != self.truth_alone


class Detector(Protocol):
    spec: DetectorSpec

    def classify(self, item: DetectionInput, threshold: float) -> DetectionVerdict: ...

    def latency_ms(self) -> float: ...


class _Base:
    def __init__(self, spec: DetectorSpec):
        self.spec = spec
        self._lat_rng = random.Random((spec.seed << 2) ^ 0x5AFE ^ spec.tier)
        self._lock = threading.Lock()
        self.calls = 0

    def latency_ms(self) -> float:
        with self._lock:
            return self.spec.latency_model.sample(self._lat_rng)

    def _sees_history(self, item: DetectionInput) -> bool:
        return self.spec.tier == 3 and bool(item.history)

    def _truth(self, item: DetectionInput) -> bool:
        return item.truth if self._sees_history(item) else item.truth_alone

    def _uncertain(self, item: DetectionInput) -> bool:
        return item.context_dependent and not self._sees_history(item) and self.spec.tier < 3


class OracleDetector(_Base):
    """Never errs; a block whose meaning depends on unseen history is deferred."""

    def classify(self, item: DetectionInput, threshold: float = 0.5) -> DetectionVerdict:
        self.calls += 1
        truth = self._truth(item)
        if truth:
            return DetectionVerdict(True, self.spec.tier, 1.0, ("ground-truth",), False)
        if self._uncertain(item):
            return DetectionVerdict(False, self.spec.tier, 0.0, (), True)
        return DetectionVerdict(False, self.spec.tier, 1.0, (), self.spec.tier == 1)


class MockDetector(_Base):
    """Flips ground truth with the configured error rates from a seeded stream."""

    def __init__(self, spec: DetectorSpec):
        super().__init__(spec)
        self._rng = random.Random(spec.seed * 1_000_003 + spec.tier)

    def classify(self, item: DetectionInput, threshold: float = 0.5) -> DetectionVerdict:
        spec = self.spec
        with self._lock:
            self.calls += 1
            u = self._rng.random()
            aux = self._rng.random()
            beta = self._rng.betavariate(*spec.tn_beta)
        final = spec.tier == 3
        if self._uncertain(item):
            return DetectionVerdict(False, spec.tier, aux * T_MIN, (), True)
        if self._truth(item):
            if u < spec.false_negative_rate:
                return DetectionVerdict(False, spec.tier, aux * T_MIN, (), not final)
            return DetectionVerdict(True, spec.tier, 1.0 - spec.false_negative_rate, ("mock",), False)
        if u < spec.false_positive_rate:
            return DetectionVerdict(True, spec.tier, 1.0 - spec.false_positive_rate, ("mock",), False)
        if spec.tier == 1:
            return DetectionVerdict(False, 1, beta, (), True)
        return DetectionVerdict(False, spec.tier, beta, (), (not final) and beta < threshold)


class RuleDetector(_Base):
    """Tier-1 adapter over :class:`RuleEngine`."""

    def __init__(self, spec: DetectorSpec, engine: RuleEngine | None = None):
        super().__init__(spec)
        self.engine = engine or RuleEngine()

    def classify(self, item: DetectionInput, threshold: float = 0.5) -> DetectionVerdict:
        self.calls += 1
        if item.context is not None and item.span is not None:
            return self.engine.scan_span(item.context, *item.span)
        return self.engine.scan(item.text)


class ExternalDetector(_Base):
    """Line-delimited JSON over a subprocess pipe.

    Request ``{"block_id", "text", "history"}``; response
    ``{"sensitive", "score", "categories"}``. Any timeout, crash or malformed
    reply raises :class:`DetectorUnavailable`.
    """

    def __init__(self, spec: DetectorSpec):
        super().__init__(spec)
        if not spec.command:
            raise ValueError("External mode needs a command")
        self._proc: subprocess.Popen | None = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(list(self.spec.command), stdin=subprocess.PIPE,
                                              stdout=subprocess.PIPE, stderr=subprocess.DEVNULL,
                                              text=True, bufsize=1)
            except OSError as exc:
                raise DetectorUnavailable(str(exc)) from None
        return self._proc

    def close(self) -> None:
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None

    def classify(self, item: DetectionInput, threshold: float = 0.5) -> DetectionVerdict:
        with self._lock:
            self.calls += 1
            proc = self._ensure()
            req = {"block_id": item.block_id, "text": item.text,
                   "history": list(item.history) if self.spec.tier == 3 else []}
            try:
                proc.stdin.write(json.dumps(req) + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                self.close()
                raise DetectorUnavailable(str(exc)) from None
            sel = selectors.DefaultSelector()
            sel.register(proc.stdout, selectors.EVENT_READ)
            ready = sel.select(self.spec.timeout_s)
            sel.close()
            if not ready:
                self.close()
                raise DetectorUnavailable(f"no reply within {self.spec.timeout_s}s")
            line = proc.stdout.readline()
        try:
            resp = json.loads(line)
            sensitive = bool(resp["sensitive"])
            score = float(resp.get("score", 1.0))
            cats = tuple(str(c) for c in resp.get("categories", ()))
        except (ValueError, KeyError, TypeError) as exc:
            self.close()
            raise DetectorUnavailable(f"bad reply: {exc}") from None
        escalate = (not sensitive) and self.spec.tier < 3 and (self.spec.tier == 1 or score < threshold)
        return DetectionVerdict(sensitive, self.spec.tier, min(max(score, 0.0), 1.0), cats, escalate)


def make_detector(spec: DetectorSpec, engine: RuleEngine | None = None) -> Detector:
    if spec.mode is DetectorMode.ORACLE:
        return OracleDetector(spec)
    if spec.mode is DetectorMode.MOCK:
        return MockDetector(spec)
    if spec.mode is DetectorMode.EXTERNAL:
        return ExternalDetector(spec)
    return RuleDetector(spec, engine)


def tier2_classify(item: DetectionInput, detector: Detector, threshold: float = 0.5) -> DetectionVerdict:
    if detector.spec.tier != 2:
        raise ValueError("tier2_classify needs a tier-2 detector")
    return detector.classify(item, threshold)


def tier3_validate(item: DetectionInput, history: Sequence[str], detector: Detector,
                   threshold: float = 0.5) -> DetectionVerdict:
    if detector.spec.tier != 3:
        raise ValueError("tier3_validate needs a tier-3 detector")
    item = DetectionInput(item.text, tuple(history), item.truth_alone, item.truth_with_context,
                          item.context, item.span, item.block_id)
    return detector.classify(item, threshold)


class AlertLevel(enum.Enum):
    NORMAL = "Normal"
    ELEVATED = "Elevated"


@dataclass(frozen=True)
class ThresholdState:
    base_threshold: float = 0.5
    current_threshold: float = 0.5
    load_factor: float = 0.0
    alert_level: AlertLevel = AlertLevel.NORMAL

    def __post_init__(self):
        if not 0.0 < self.base_threshold < 1.0:
            raise ValueError("base_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class ThresholdTuning:
    k_load: float = K_LOAD
    k_alert: float = K_ALERT
    t_min: float = T_MIN


def adjust_threshold(state: ThresholdState, load: float, recent_alerts: int,
                     tuning: ThresholdTuning | None = None) -> ThresholdState:
    if load < 0:
        raise ValueError("load must be non-negative")
    tuning = tuning or ThresholdTuning()
    base = state.base_threshold
    raw = base - tuning.k_load * max(0.0, load - 1.0) - tuning.k_alert * recent_alerts
    current = min(max(raw, min(tuning.t_min, base)), base)
    level = AlertLevel.ELEVATED if recent_alerts > 0 else AlertLevel.NORMAL
    return ThresholdState(base, current, load, level)
