"""Deterministic synthetic traffic with controllable prefix reuse and planted secrets.

Requests are built from *sessions*. A session optionally starts from a shared
template ``S`` of ``s`` tokens and runs ``k`` turns; turn ``t`` sends
``S + m1 + ... + mt`` where each ``mi`` is ``m`` fresh tokens. Every template
is first posted by a designated creator in a one-turn session of its own, so
later sessions find it cached. With token-weighted accounting:

* a k-turn session reuses ``(k-1)*s + m*k*(k-1)/2`` tokens from its own
  history (intra-user) and ``s`` tokens of someone else's template on its
  first turn (inter-user),
* every request contributes ``m`` fresh tokens, creator posts ``s + m``.

:func:`plan_sessions` picks the turn-count mix and ``s`` that hit the target
shares. Fresh messages start with a never-repeated nonce token, so no
accidental cross-session prefix matches occur and :func:`measure_reuse`
recovers the targets exactly up to integer rounding.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import json
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .core import DEFAULT_VOCAB, FILLER_BASE, OwnerClass, TokenSeq, UserId

NONCE_BASE = FILLER_BASE + 26 ** 4
NONCE_SPAN = (1 << 31) - NONCE_BASE
BODY_WORDS = 26 ** 4
PRESET_NAMES = ("single_request_pii", "multiturn", "system_prompt", "prompt_multitasks")


class Scenario(enum.Enum):
    SINGLE_REQUEST_PII = "SingleRequestPII"
    MULTI_TURN_CHAT = "MultiTurnChat"
    SYSTEM_PROMPT = "SystemPrompt"


class Sensitivity(enum.Enum):
    ALWAYS = "Always"
    CONTEXT_ONLY = "ContextOnly"


class InfeasibleSpec(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadSpec:
    n_users: int = 64
    n_requests: int = 400
    scenario: Scenario = Scenario.MULTI_TURN_CHAT
    inter_user_overlap: float = 0.2549
    intra_user_overlap: float = 0.0706
    secret_density: float = 0.1
    context_dependent_fraction: float = 0.2
    system_prompt_tokens: int = 8192
    seed: int = 0
    fresh_tokens: int = 64
    sessions_per_template: int = 8
    mean_interarrival_ms: float = 250.0
    think_time_ms: float = 4000.0
    template_lead_ms: float = 20_000.0

    def validate(self) -> None:
        errs = []
        if self.n_users < 1:
            errs.append("n_users must be >= 1")
        if self.n_requests < 1:
            errs.append("n_requests must be >= 1")
        for name in ("inter_user_overlap", "intra_user_overlap", "secret_density", "context_dependent_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                errs.append(f"{name} must lie in [0, 1]")
        if self.inter_user_overlap + self.intra_user_overlap >= 1.0:
            errs.append("intra + inter overlap must be < 1")
        if self.fresh_tokens < 8:
            errs.append("fresh_tokens must be >= 8")
        if self.sessions_per_template < 1:
            errs.append("sessions_per_template must be >= 1")
        if self.system_prompt_tokens < 0:
            errs.append("system_prompt_tokens must be >= 0")
        if self.mean_interarrival_ms <= 0 or self.think_time_ms < 0 or self.template_lead_ms < 0:
            errs.append("timing parameters must be positive")
        if errs:
            raise InfeasibleSpec("; ".join(errs))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scenario"] = self.scenario.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> WorkloadSpec:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InfeasibleSpec(f"unknown workload field(s): {sorted(unknown)}")
        kw = dict(d)
        if "scenario" in kw:
            kw["scenario"] = Scenario(kw["scenario"])
        return cls(**kw)


@dataclass(frozen=True)
class SecretSpan:
    start: int
    end: int
    sensitivity: Sensitivity
    category: str
    tier1: bool = True

    def shifted(self, offset: int) -> SecretSpan:
        return dataclasses.replace(self, start=self.start + offset, end=self.end + offset)


@dataclass
class Request:
    request_id: int
    user: UserId
    tokens: TokenSeq
    arrival_ms: float
    session_id: int = -1
    turn: int = 1
    owner: OwnerClass = OwnerClass.CUSTOMER
    spans: tuple[SecretSpan, ...] = ()

    @property
    def text(self) -> str:
        return DEFAULT_VOCAB.decode(self.tokens)

    def to_record(self) -> dict:
        return {
            "request_id": self.request_id,
            "user": self.user.value,
            "arrival_ms": self.arrival_ms,
            "session_id": self.session_id,
            "turn": self.turn,
            "owner": self.owner.value,
            "tokens": list(self.tokens),
            "spans": [[s.start, s.end, s.sensitivity.value, s.category, s.tier1] for s in self.spans],
        }


GroundTruth = dict[int, tuple[SecretSpan, ...]]


def block_truth(spans: Iterable[SecretSpan], start: int, end: int) -> tuple[bool, bool]:
    """(sensitive on its own, sensitive given history) for tokens ``[start, end)``."""
    alone = ctx = False
    for s in spans:
        if s.start < end and s.end > start:
            ctx = True
            if s.sensitivity is Sensitivity.ALWAYS:
                alone = True
    return alone, ctx


@dataclass
class SessionPlan:
    s: int
    m: int
    turns: list[int]  # turn count per regular session
    templated: list[bool]
    n_templates: int
    group: int
    repeats: int = 0  # templated first turns whose user already sent the same template

    def predicted(self) -> tuple[float, float]:
        intra = inter = total = 0
        for k, tmpl in zip(self.turns, self.templated):
            s = self.s if tmpl else 0
            total += k * s + self.m * k * (k + 1) // 2
            intra += (k - 1) * s + self.m * k * (k - 1) // 2
            inter += s
        total += self.n_templates * (self.s + self.m)
        intra += self.repeats * self.s
        inter -= self.repeats * self.s
        return intra / total, inter / total


@dataclass
class Workload:
    spec: WorkloadSpec
    requests: list[Request]
    plan: SessionPlan
    candidate_sets: list[list[int]] = field(default_factory=list)

    @property
    def truth(self) -> GroundTruth:
        return {r.request_id: r.spans for r in self.requests if r.spans}

    def stream_bytes(self) -> bytes:
        return json.dumps([r.to_record() for r in self.requests], sort_keys=True).encode()

    def digest(self) -> str:
        return hashlib.sha256(self.stream_bytes()).hexdigest()


# ----------------------------------------------------------------- secrets
def _luhn_complete(digits: list[int]) -> int:
    total = 0
    for i, d in enumerate(reversed(digits)):
        if i % 2 == 0:
            d *= 2
            if d > 9:
                d -= 9
        total += d
    return (10 - total % 10) % 10


def luhn_valid(number: str) -> bool:
    ds = [int(c) for c in number if c.isdigit()]
    return _luhn_complete(ds[:-1]) == ds[-1]


def _rand_letters(rng: random.Random, n: int) -> str:
    return "".join(rng.choice("abcdefghijklmnopqrstuvwxyz") for _ in range(n))


def _ssn(rng):
    return "my ssn is ", f"{rng.randint(100, 899):03d}-{rng.randint(10, 99):02d}-{rng.randint(1000, 9999):04d}", \
        "Identity Information", True


def _passport(rng):
    return "my passport number is ", f"{rng.choice('EKLPX')}{rng.randint(1000000, 9999999)}", \
        "Identity Information", True


def _phone(rng):
    a, b, c = rng.randint(201, 989), rng.randint(200, 999), rng.randint(0, 9999)
    value = f"({a}) {b}-{c:04d}" if rng.random() < 0.5 else f"{a}-{b}-{c:04d}"
    return "call me at ", value, "Basic Information", True


def _email(rng):
    return "email me at ", f"{_rand_letters(rng, 6)}.{_rand_letters(rng, 4)}@{_rand_letters(rng, 5)}.com", \
        "Basic Information", True


def _ipv4(rng):
    return "my server ip is ", ".".join(str(rng.randint(1, 254)) for _ in range(4)), \
        "System/Network Identification", True


def _password(rng):
    return "my password is ", _rand_letters(rng, 5) + str(rng.randint(10, 99)) + "!", \
        "System/Network Identification", True


def _card(rng):
    ds = [4] + [rng.randint(0, 9) for _ in range(14)]
    ds.append(_luhn_complete(ds))
    s = "".join(map(str, ds))
    return "my card number is ", " ".join(s[i:i + 4] for i in range(0, 16, 4)), "Financial Info", True


def _bank(rng):
    return "my bank account number is ", "".join(str(rng.randint(0, 9)) for _ in range(10)), "Financial Info", True


def _mac(rng):
    return "the device mac is ", ":".join(f"{rng.randint(0, 255):02X}" for _ in range(6)), \
        "Hardware Device Information", True


def _imei(rng):
    return "my phone imei is ", "".join(str(rng.randint(0, 9)) for _ in range(15)), \
        "Hardware Device Information", True


def _blacklisted(rng):
    return "the launch plan for ", "project-orion", "Service Content Info", True


def _address(rng):
    street = _rand_letters(rng, 5)
    return "i live at ", f"{rng.randint(10, 999)} {street} street", "Location Information", False


TIER1_FAMILIES = (_ssn, _passport, _phone, _email, _ipv4, _password, _card, _bank, _mac, _imei, _blacklisted)
ALL_FAMILIES = TIER1_FAMILIES + (_address,)


def secret_phrase(rng: random.Random, tier1_only: bool = False) -> tuple[str, str, str, bool]:
    """(lead-in, value, category, covered by a shipped rule)."""
    fam = rng.choice(TIER1_FAMILIES if tier1_only else ALL_FAMILIES)
    return fam(rng)


def tier1_corpus(n: int, seed: int = 0) -> list[tuple[str, str, tuple[int, int]]]:
    """Strings carrying one rule-covered secret: (text, category, value char span)."""
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        lead, value, cat, _ = secret_phrase(rng, tier1_only=True)
        pre = " ".join(_rand_letters(rng, rng.randint(3, 7)) for _ in range(rng.randint(0, 4)))
        post = " ".join(_rand_letters(rng, rng.randint(3, 7)) for _ in range(rng.randint(0, 4)))
        head = (pre + " " if pre else "") + lead
        text = head + value + (" " + post if post else "")
        out.append((text, cat, (len(head), len(head) + len(value))))
    return out


# ------------------------------------------------------------- generation
class _Tokens:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used: set[int] = set()

    def nonce(self) -> int:
        while True:
            t = NONCE_BASE + self.rng.randrange(NONCE_SPAN)
            if t not in self.used:
                self.used.add(t)
                return t

    def filler(self, n: int) -> list[int]:
        return [FILLER_BASE + self.rng.randrange(BODY_WORDS) for _ in range(n)]

    def template(self, s: int) -> list[int]:
        return [self.nonce()] + self.filler(s - 1) if s > 0 else []


def _bytes(text: str) -> list[int]:
    return list(DEFAULT_VOCAB.encode(text))


def build_message(tok: _Tokens, m: int, secret: str | None) -> tuple[list[int], list[SecretSpan]]:
    """``m`` fresh tokens: nonce, filler, optionally one planted secret."""
    rng = tok.rng
    if secret is None:
        return [tok.nonce()] + tok.filler(m - 1), []
    # (piece, (offset of the secret inside the piece, span)) ; lead-in, value and separator stay contiguous
    parts: list[tuple[list[int], tuple[int, SecretSpan] | None]] = []
    if secret == "context":
        setup = _bytes(f" my account at bank{_rand_letters(rng, 3)} ")
        lead = _bytes(" the number is ")
        value = _bytes("".join(str(rng.randint(0, 9)) for _ in range(7)))
        span = SecretSpan(0, len(value), Sensitivity.CONTEXT_ONLY, "Financial Info", False)
        parts = [(setup, None), (lead + value + _bytes(" "), (len(lead), span))]
    else:
        lead_s, value_s, cat, covered = secret_phrase(rng)
        lead, value = _bytes(" " + lead_s), _bytes(value_s)
        span = SecretSpan(0, len(value), Sensitivity.ALWAYS, cat, covered)
        parts = [(lead + value + _bytes(" "), (len(lead), span))]
    fixed = 1 + sum(len(p) for p, _ in parts)
    if fixed > m:
        raise InfeasibleSpec(f"fresh_tokens={m} too small to hold a planted secret ({fixed} tokens)")
    slack = m - fixed
    gaps = sorted(rng.randint(0, slack) for _ in range(len(parts)))
    tokens = [tok.nonce()]
    spans = []
    prev = 0
    for (piece, sec), g in zip(parts, gaps):
        tokens.extend(tok.filler(g - prev))
        prev = g
        if sec is not None:
            spans.append(sec[1].shifted(len(tokens) + sec[0]))
        tokens.extend(piece)
    tokens.extend(tok.filler(slack - prev))
    assert len(tokens) == m
    return tokens, spans


def _templates_for(n_sess: int, group: int) -> int:
    return -(-n_sess // group)


def plan_sessions(spec: WorkloadSpec) -> SessionPlan:
    """Choose the turn-count mix and template length that meet the overlap targets."""
    spec.validate()
    I, E = spec.intra_user_overlap, spec.inter_user_overlap
    N, m, g = spec.n_requests, spec.fresh_tokens, spec.sessions_per_template
    if spec.scenario is Scenario.SYSTEM_PROMPT:
        # single-turn requests; users take turns, so a user's second visit reuses its own copy
        s = spec.system_prompt_tokens
        n = N - 1
        if s == 0 or n < 1:
            raise InfeasibleSpec("SystemPrompt needs system_prompt_tokens > 0 and n_requests >= 2")
        first = min(n, spec.n_users)
        if E > 0:
            m = round(s * (first / (E * (n + 1)) - 1))
            if m < 8:
                raise InfeasibleSpec(f"inter overlap {E} unreachable with a {s}-token system prompt")
        plan = SessionPlan(s, m, [1] * n, [True] * n, 1, n, repeats=n - first)
        pi, pe = plan.predicted()
        if abs(pi - I) + abs(pe - E) > 0.02:
            raise InfeasibleSpec(f"SystemPrompt with {spec.n_users} users yields intra={pi:.4f}, inter={pe:.4f}")
        return plan
    if E > 0 and spec.n_users < 2:
        raise InfeasibleSpec("inter-user reuse needs at least two users")
    group = min(g, spec.n_users - 1) if E > 0 else g
    best: tuple[float, SessionPlan] | None = None
    k_options = range(2, 17) if I > 0 else (1,)
    for k_hi in k_options:
        for n_big in range(0, N // k_hi + 1 if k_hi > 1 else 1):
            budget = N - n_big * k_hi
            if budget < 0:
                break
            # n_small single-turn sessions, plus creator posts when templated
            if E > 0:
                n_small = min(budget, max(0, (budget * group - n_big) // (group + 1) + 2))
                while n_small >= 0 and n_small + _templates_for(n_small + n_big, group) > budget:
                    n_small -= 1
            else:
                n_small = budget
            if n_small < 0:
                continue
            n_sess = n_small + n_big
            T = _templates_for(n_sess, group) if E > 0 else 0
            extra = budget - n_small - T  # untemplated one-turn sessions to fill the count exactly
            turns = [k_hi] * n_big + [1] * n_small + [1] * extra
            templated = [E > 0] * n_sess + [False] * extra
            if n_sess == 0:
                continue
            K1 = n_big * k_hi + n_small
            K2 = n_big * k_hi * (k_hi - 1) // 2
            tot_m = m * (K1 + K2 + T + extra)
            # intra = s*(K1-n_sess) + m*K2 ; inter = s*n_sess ; total = s*(K1+T) + tot_m
            if E == 0:
                s = 0
            elif I == 0 or (K1 - n_sess == 0 and K2 == 0):
                den = n_sess - E * (K1 + T)
                if den <= 0:
                    continue
                s = E * tot_m / den
            else:
                den = n_sess * I / E - (K1 - n_sess)
                if den <= 0:
                    continue
                s = m * K2 / den
            s = max(0, round(s))
            if E > 0 and s < 1:
                continue
            plan = SessionPlan(s, m, turns, templated, T, group)
            pi, pe = plan.predicted()
            err = abs(pi - I) + abs(pe - E)
            if best is None or err < best[0] - 1e-12:
                best = (err, plan)
    if best is None or best[0] > 0.02:
        raise InfeasibleSpec(f"cannot reach intra={I}, inter={E} with n_requests={N}")
    return best[1]


def generate(spec: WorkloadSpec) -> Workload:
    plan = plan_sessions(spec)
    rng = random.Random(spec.seed)
    tok = _Tokens(rng)
    sessions = list(zip(plan.turns, plan.templated))
    rng.shuffle(sessions)
    n_sess = len(sessions)
    gap = spec.mean_interarrival_ms * spec.n_requests / max(1, sum(plan.turns))
    starts, t = [], 0.0
    for _ in range(n_sess):
        t += rng.expovariate(1.0 / gap)
        starts.append(t)
    lead = spec.template_lead_ms if plan.n_templates else 0.0

    # template ids per templated session, with distinct users per template
    users = list(range(1, spec.n_users + 1))
    tmpl_sessions = [i for i, (_, tm) in enumerate(sessions) if tm]
    template_of: dict[int, int] = {}
    creators: list[int] = []
    members: dict[int, list[int]] = {}
    if spec.scenario is Scenario.SYSTEM_PROMPT:
        for i in tmpl_sessions:
            template_of[i] = 0
        members[0] = tmpl_sessions
        creators = [0]
    else:
        for j in range(plan.n_templates):
            idx = tmpl_sessions[j * plan.group:(j + 1) * plan.group]
            members[j] = idx
            for i in idx:
                template_of[i] = j
    session_user: dict[int, int] = {}
    if spec.scenario is Scenario.SYSTEM_PROMPT:
        order = sorted(range(n_sess), key=lambda i: starts[i])
        for rank, i in enumerate(order):
            session_user[i] = users[rank % len(users)]
    else:
        for j in range(plan.n_templates):
            chosen = rng.sample(users, len(members[j]) + 1)
            creators.append(chosen[0])
            for i, u in zip(members[j], chosen[1:]):
                session_user[i] = u
    for i in range(n_sess):
        session_user.setdefault(i, rng.choice(users))

    raw: list[tuple[float, int, int, list[int], list[SecretSpan], int, OwnerClass]] = []
    templates = [tok.template(plan.s) for _ in range(max(1, plan.n_templates) if plan.n_templates else 0)]

    def want_secret() -> str | None:
        if rng.random() >= spec.secret_density:
            return None
        return "context" if rng.random() < spec.context_dependent_fraction else "plain"

    for j, tmpl in enumerate(templates):
        first = min((starts[i] for i in members.get(j, [])), default=0.0)
        msg, spans = build_message(tok, plan.m, want_secret())
        owner = OwnerClass.BUSINESS if spec.scenario is Scenario.SYSTEM_PROMPT else OwnerClass.CUSTOMER
        raw.append((first - lead, creators[j], -1 - j, tmpl + msg,
                    [sp.shifted(len(tmpl)) for sp in spans], 1, owner))
    for i, (k, tm) in enumerate(sessions):
        prefix = list(templates[template_of[i]]) if tm else []
        spans: list[SecretSpan] = []
        when = starts[i]
        for turn in range(1, k + 1):
            msg, new = build_message(tok, plan.m, want_secret())
            spans.extend(sp.shifted(len(prefix)) for sp in new)
            prefix = prefix + msg
            raw.append((when, session_user[i], i, list(prefix), list(spans), turn, OwnerClass.CUSTOMER))
            when += spec.think_time_ms * (0.5 + rng.random())
    shift = -min(r[0] for r in raw) if raw and min(r[0] for r in raw) < 0 else 0.0
    raw.sort(key=lambda r: (r[0], r[2], r[5]))
    requests = []
    for rid, (when, uid, sid, toks, spans, turn, owner) in enumerate(raw):
        requests.append(Request(rid, UserId(uid), tuple(toks), round(when + shift, 6), sid, turn, owner,
                                tuple(spans)))
    return Workload(spec, requests, plan)


# ----------------------------------------------------------------- reuse
def measure_reuse(requests: Sequence[Request] | Workload) -> dict[str, float]:
    """Token-weighted reuse shares under an unbounded share-everything cache.

    A matched token counts as intra-user when the requesting user's own
    earlier requests already cover it, and as inter-user otherwise.
    """
    from .cache_index import RadixIndex
    from .core import SensitivityLabel

    reqs = requests.requests if isinstance(requests, Workload) else list(requests)
    shared = RadixIndex(None, block_size=None)
    own = RadixIndex(None, block_size=None)
    intra = inter = total = 0
    for r in sorted(reqs, key=lambda r: (r.arrival_ms, r.request_id)):
        uid = r.user.value
        g = shared.match_prefix(r.tokens, uid, touch=False).matched_tokens
        a = own.match_prefix(r.tokens, uid, touch=False).matched_tokens
        intra += a
        inter += g - a
        total += len(r.tokens)
        for node in shared.insert_detailed(r.tokens, uid).created:
            shared.set_label(node, SensitivityLabel.PUBLIC)
        own.insert(r.tokens, uid)
    if total == 0:
        return {"intra_reuse": 0.0, "inter_reuse": 0.0}
    return {"intra_reuse": intra / total, "inter_reuse": inter / total}


# ----------------------------------------------------------------- presets
def preset_path(name: str) -> Path:
    return Path(str(resources.files("safekv").joinpath("presets", f"{name}.json")))


def load_preset(name: str) -> dict:
    path = preset_path(name)
    if not path.exists():
        raise FileNotFoundError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    return json.loads(path.read_text(encoding="utf-8"))


# ------------------------------------------------------------ CSV ingestion
CSV_COLUMNS = ("user_id", "turn_index", "text", "secret_span_start", "secret_span_end", "category")


def load_corpus_csv(path: str | Path, *, interarrival_ms: float = 250.0) -> list[Request]:
    """Build requests from a CSV corpus.

    Rows of one user are ordered by ``turn_index``; each request carries that
    user's earlier turns as history, like a chat transcript. Secret offsets
    are character positions within the row's ``text`` (leave blank for none).
    """
    rows: dict[int, list[dict]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise InfeasibleSpec(f"CSV lacks column(s) {sorted(missing)}")
        for row in reader:
            rows.setdefault(int(row["user_id"]), []).append(row)
    timeline = []
    for uid in sorted(rows):
        history = ""
        spans: list[SecretSpan] = []
        for row in sorted(rows[uid], key=lambda r: int(r["turn_index"])):
            base = len(history) + (1 if history else 0)
            history = (history + " " + row["text"]) if history else row["text"]
            if row["secret_span_start"].strip():
                a, b = int(row["secret_span_start"]), int(row["secret_span_end"])
                spans.append(SecretSpan(base + a, base + b, Sensitivity.ALWAYS, row["category"] or "unknown", False))
            timeline.append((int(row["turn_index"]), uid, history, tuple(spans)))
    timeline.sort(key=lambda x: (x[0], x[1]))
    out = []
    for rid, (turn, uid, text, spans) in enumerate(timeline):
        out.append(Request(rid, UserId(uid), DEFAULT_VOCAB.encode(text), rid * interarrival_ms, uid, turn,
                           spans=spans))
    return out


# -------------------------------------------------------- attack targets
@dataclass(frozen=True)
class PlantedSecret:
    victim: UserId
    known_prefix: TokenSeq
    secret: TokenSeq
    suffix: TokenSeq
    candidate_sets: tuple[tuple[int, ...], ...]
    category: str = "Identity Information"

    @property
    def tokens(self) -> TokenSeq:
        return self.known_prefix + self.secret + self.suffix

    @property
    def span(self) -> SecretSpan:
        a = len(self.known_prefix)
        return SecretSpan(a, a + len(self.secret), Sensitivity.ALWAYS, self.category, False)


DIGITS = tuple(ord(c) for c in "0123456789")


def plant_secrets(n: int, seed: int = 0, *, digits: int = 5, prefix_tokens: int = 32,
                  first_victim: int = 10_000) -> list[PlantedSecret]:
    """Victim requests ``<unique known prefix> <digits> <suffix>`` with digit candidate sets.

    The prefix length is a whole number of cache blocks so the digits start
    a fresh block.
    """
    rng = random.Random(seed ^ 0xA77AC)
    tok = _Tokens(rng)
    lead = _bytes(" my pin code is ")
    out = []
    for i in range(n):
        head = [tok.nonce()] + tok.filler(max(0, prefix_tokens - 1 - len(lead))) + lead
        head = head[:prefix_tokens] if len(head) > prefix_tokens else head
        secret = tuple(rng.choice(DIGITS) for _ in range(digits))
        suffix = tuple(_bytes(" thanks ") + tok.filler(8))
        out.append(PlantedSecret(UserId(first_victim + i), tuple(head), secret, suffix,
                                 tuple(DIGITS for _ in range(digits))))
    return out
