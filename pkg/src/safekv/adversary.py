"""Black-box timing attacker.

The attacker is a generator: it yields ``(tokens, identity)`` probes and is
sent back the observed TTFT, nothing else. Drivers (:func:`reconstruct`,
:func:`run_attack_campaign`) feed it from a simulator, so adversary logic
never touches cache internals.

Two ways to cope with self-pollution (every probe inserts its own blocks):

* ``fresh_identity``: each probe comes from a never-seen identity, so the
  attacker's own earlier probes are invisible to it;
* ``differencing``: one identity per round first re-sends the known prefix
  plus recovered tokens ("priming"), so the only uncached token in a
  candidate probe is the candidate itself; a hit saves exactly one token.
"""

from __future__ import annotations

import enum
import itertools
import random
from dataclasses import dataclass, field
from typing import Callable, Generator, Sequence

from .core import TokenSeq, UserId, UserKind
from .workload import FILLER_BASE, NONCE_BASE, PlantedSecret, SecretSpan, Sensitivity

Probe = tuple[TokenSeq, UserId]
ProbeFn = Callable[[TokenSeq, UserId], float]
Controller = Generator[Probe, float, "AttackResult"]

STRATEGIES = ("differencing", "fresh_identity")
ATTACKER_BASE = 1 << 40


class ProbeSchedule(enum.Enum):
    UNIFORM = "Uniform"
    JITTERED = "Jittered"


class BudgetExhausted(RuntimeError):
    def __init__(self, result: AttackResult):
        super().__init__(f"probe budget exhausted after {result.probes_used} probes")
        self.result = result


@dataclass(frozen=True)
class Calibration:
    t_hit: float
    t_miss: float
    length: int

    @property
    def threshold(self) -> float:
        return (self.t_hit + self.t_miss) / 2.0

    @property
    def per_token(self) -> float:
        return (self.t_miss - self.t_hit) / self.length if self.length else 0.0

    @property
    def token_threshold(self) -> float:
        """Hit/miss cut for a probe whose only possibly-uncached token is the last one."""
        return self.t_hit + self.per_token / 2.0


@dataclass
class AttackConfig:
    known_prefix: TokenSeq
    candidate_sets: Sequence[Sequence[int]]
    hit_threshold: float | None = None  # None: calibrate adaptively
    identities: Sequence[UserId] = ()
    probe_schedule: ProbeSchedule = ProbeSchedule.UNIFORM
    max_probes: int = 10_000
    strategy: str = "differencing"
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.max_probes < 0:
            raise ValueError("max_probes must be non-negative")
        if any(len(c) == 0 for c in self.candidate_sets):
            raise ValueError("candidate sets must be non-empty")


@dataclass
class AttackResult:
    recovered: TokenSeq
    per_position_correct: list[bool]
    probes_used: int
    success: bool
    downgraded_mid_attack: bool = False
    low_confidence: list[bool] = field(default_factory=list)
    budget_exhausted: bool = False

    def score(self, secret: Sequence[int]) -> AttackResult:
        """Fill correctness fields against the true secret."""
        self.per_position_correct = [a == b for a, b in zip(self.recovered, secret)]
        self.success = len(self.recovered) == len(secret) and all(self.per_position_correct)
        return self


class IdentityPool:
    """Hands out attacker identities that no benign user shares."""

    def __init__(self, start: int = ATTACKER_BASE):
        self._ids = itertools.count(start)

    def fresh(self) -> UserId:
        return UserId(next(self._ids), UserKind.ATTACKER)


def _nonce_content(rng: random.Random, n: int) -> TokenSeq:
    return (NONCE_BASE + rng.randrange(1 << 30),) + tuple(FILLER_BASE + rng.randrange(26 ** 4) for _ in range(n - 1))


def calibration_controller(length: int, identity: UserId, rng: random.Random) -> Generator[Probe, float, Calibration]:
    """Self-insert fresh content, then re-probe it: T_miss then T_hit."""
    if length <= 0:
        return Calibration(0.0, 0.0, 0)
    content = _nonce_content(rng, length)
    t_miss = yield (content, identity)
    t_hit = yield (content, identity)
    return Calibration(t_hit, t_miss, length)


def calibrate_threshold(probe: ProbeFn, prefix_len: int, identity: UserId | None = None,
                        seed: int = 0) -> float:
    """Midpoint between measured hit and miss TTFT at ``prefix_len`` tokens."""
    return run_controller(calibration_controller(prefix_len, identity or IdentityPool().fresh(),
                                                 random.Random(seed)), probe).threshold


def attack_controller(config: AttackConfig, calibration: Calibration | None = None,
                      pool: IdentityPool | None = None) -> Controller:
    """Token-by-token reconstruction; yields probes, receives TTFTs."""
    rng = random.Random(config.seed)
    pool = pool or IdentityPool()
    identities = list(config.identities) or [pool.fresh()]
    probes = 0
    recovered: list[int] = []
    low: list[bool] = []

    def partial(exhausted: bool) -> AttackResult:
        return AttackResult(tuple(recovered), [], probes, False, low_confidence=low, budget_exhausted=exhausted)

    if calibration is None:
        cal_len = 16
        if config.max_probes < 2:
            return partial(True)
        calibration = yield from calibration_controller(cal_len, identities[0], rng)
        probes += 2
    threshold = config.hit_threshold if config.hit_threshold is not None else calibration.token_threshold
    rot = itertools.cycle(identities)
    for cands in config.candidate_sets:
        base = tuple(config.known_prefix) + tuple(recovered)
        if config.strategy == "differencing":
            ident = next(rot)
            if probes >= config.max_probes:
                return partial(True)
            yield (base, ident)
            probes += 1
        observed: list[tuple[float, int]] = []
        for cand in cands:
            if probes >= config.max_probes:
                return partial(True)
            if config.strategy == "fresh_identity":
                ident = pool.fresh()
            elif len(identities) > 1 and config.probe_schedule is ProbeSchedule.JITTERED:
                ident = rng.choice(identities)
            t = yield (base + (cand,), ident)
            probes += 1
            observed.append((t, cand))
        hits = [(t, c) for t, c in observed if t < threshold]
        pool_ = hits or observed
        best = min(t for t, _ in pool_)
        choice = rng.choice(sorted(c for t, c in pool_ if t == best))
        recovered.append(choice)
        low.append(not hits)
    return AttackResult(tuple(recovered), [], probes, False, low_confidence=low)


def run_controller(gen: Generator, probe: ProbeFn):
    """Drive a controller with a probe function until it returns."""
    try:
        req = next(gen)
        while True:
            req = gen.send(probe(*req))
    except StopIteration as stop:
        return stop.value


def reconstruct(config: AttackConfig, probe: ProbeFn, secret: Sequence[int] | None = None,
                calibration: Calibration | None = None) -> AttackResult:
    """Run one reconstruction through ``probe``; raises BudgetExhausted with the partial result."""
    result = run_controller(attack_controller(config, calibration), probe)
    if secret is not None:
        result.score(secret)
    if result.budget_exhausted:
        raise BudgetExhausted(result)
    return result


# ---------------------------------------------------------------- campaigns
@dataclass
class CampaignConfig:
    n_secrets: int = 200
    digits: int = 5
    strategy: str = "differencing"
    identities: int = 1
    probe_schedule: ProbeSchedule = ProbeSchedule.UNIFORM
    hit_threshold: float | None = None
    max_probes: int = 10_000
    start_ms: float = 0.0
    victim_gap_ms: float = 1.0
    delay_ms: float = 30_000.0  # victim request to first probe; longer than the detection lag
    probe_gap_ms: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.n_secrets < 0 or self.digits < 0 or self.identities < 1:
            raise ValueError("n_secrets, digits must be >= 0 and identities >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> CampaignConfig:
        kw = dict(d)
        if "probe_schedule" in kw:
            kw["probe_schedule"] = ProbeSchedule(kw["probe_schedule"])
        return cls(**kw)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["probe_schedule"] = self.probe_schedule.value
        return out


def run_attack_campaign(n_secrets: int, config: CampaignConfig, sim) -> dict:
    """Plant secrets, attack each one, and summarise the outcome.

    ``sim`` is a :class:`~safekv.serving_sim.Simulator`. The harness (not the
    attacker) tags probe tokens past the known prefix as sensitive ground
    truth and reads the event log to fill ``downgraded_mid_attack`` and
    ``stale_probes`` (probes sent after one of the victim's blocks was evicted).
    """
    from .workload import plant_secrets

    secrets = plant_secrets(n_secrets, config.seed, digits=config.digits)
    rng = random.Random(config.seed ^ 0xC0FFEE)
    pool = IdentityPool()
    t = max(sim.now, config.start_ms)
    for i, s in enumerate(secrets):
        sim.request(s.tokens, s.victim, at=t + i * config.victim_gap_ms, spans=(s.span,))
    t = sim.now + config.delay_ms
    evicted: set[int] = set()  # creators that have lost a cached block
    seen = stale = 0

    def probe_at(prefix_len: int, victim: UserId | None = None):
        def probe(tokens: TokenSeq, ident: UserId) -> float:
            nonlocal t, seen, stale
            evicted.update(e["creator"] for e in sim.events[seen:] if e["type"] == "evict")
            seen = len(sim.events)
            stale += victim is not None and victim.value in evicted
            spans = ()
            if len(tokens) > prefix_len >= 0:
                spans = (SecretSpan(prefix_len, len(tokens), Sensitivity.ALWAYS, "probe", False),)
            rec = sim.request(tokens, ident, at=t, spans=spans)
            t += config.probe_gap_ms
            return rec.ttft
        return probe

    calibration = run_controller(calibration_controller(16, pool.fresh(), rng), probe_at(-1))
    results: list[AttackResult] = []
    for k, s in enumerate(secrets):
        idents = [pool.fresh() for _ in range(config.identities)]
        acfg = AttackConfig(s.known_prefix, s.candidate_sets, config.hit_threshold, idents, config.probe_schedule,
                            config.max_probes, config.strategy, seed=rng.randrange(1 << 30))
        n_events = len(sim.events)
        res = run_controller(attack_controller(acfg, calibration, pool), probe_at(len(s.known_prefix), s.victim))
        res.score(s.secret)
        res.downgraded_mid_attack = any(e["type"] == "anomaly" and e["creator"] == s.victim.value
                                        and e["action"] == "DowngradeToPrivate" for e in sim.events[n_events:])
        results.append(res)
    return campaign_metrics(results, secrets, calibration, config, stale)


def campaign_metrics(results: Sequence[AttackResult], secrets: Sequence[PlantedSecret],
                     calibration: Calibration, config: CampaignConfig, stale_probes: int = 0) -> dict:
    n = len(results)
    positions = sum(len(r.per_position_correct) for r in results)
    correct = sum(sum(r.per_position_correct) for r in results)
    full = sum(r.success for r in results)
    hist = [0] * (config.digits + 1)
    for r in results:
        hist[sum(r.per_position_correct)] += 1
    per_pos = [sum(r.per_position_correct[i] for r in results if len(r.per_position_correct) > i)
               for i in range(config.digits)]
    return {
        "n_secrets": n,
        "strategy": config.strategy,
        "identities": config.identities,
        "attack_success_rate": round(full / n, 6) if n else 0.0,
        "defense_success_rate": round(1 - full / n, 6) if n else 1.0,
        "per_token_recovery_rate": round(correct / positions, 6) if positions else 0.0,
        "positions": positions,
        "correct_positions": correct,
        "correct_by_position": per_pos,
        "correct_count_histogram": hist,
        "low_confidence_positions": sum(sum(r.low_confidence) for r in results),
        "probes_total": sum(r.probes_used for r in results),
        "probes_max": max((r.probes_used for r in results), default=0),
        "budget_exhausted": sum(r.budget_exhausted for r in results),
        "downgraded_mid_attack": sum(r.downgraded_mid_attack for r in results),
        "stale_probes": stale_probes,
        "calibration": {"t_hit": round(calibration.t_hit, 6), "t_miss": round(calibration.t_miss, 6),
                        "length": calibration.length, "threshold": round(calibration.threshold, 6)},
        "config": config.to_dict(),
    }
