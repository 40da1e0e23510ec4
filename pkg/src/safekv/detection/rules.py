"""Tier-1 rule engine: compiled regexes plus a whole-word blacklist trie.

A :class:`PatternSet` is immutable once compiled. :class:`RuleEngine` holds a
reference to the active set and swaps it in one assignment on reload, so a
scan always runs start to finish against a single version.
"""

from __future__ import annotations

import enum
import json
import logging
import re
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

log = logging.getLogger(__name__)

DEFAULT_RULES_FILE = "privacy_pattern_config.json"
_RULE_FIELDS = {"rule_id", "category", "kind", "pattern", "enabled", "description"}
_TOP_FIELDS = {"version", "rules"}


class RuleKind(enum.Enum):
    REGEX = "regex"
    BLACKLIST = "blacklist"


class ParseError(ValueError):
    pass


class CompileError(ValueError):
    def __init__(self, rule_id: str, message: str):
        super().__init__(f"rule {rule_id!r}: {message}")
        self.rule_id = rule_id


@dataclass(frozen=True)
class PatternRule:
    rule_id: str
    category: str
    kind: RuleKind
    pattern: str
    enabled: bool = True
    description: str = ""


@dataclass(frozen=True)
class RuleMatch:
    rule_id: str
    category: str
    start: int
    end: int


def _is_word_char(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


class BlacklistTrie:
    """Case-insensitive multi-literal matcher that only reports whole-word hits."""

    def __init__(self):
        self._root: dict = {}
        self.size = 0

    def add(self, literal: str, payload: PatternRule) -> None:
        node = self._root
        for ch in literal.lower():
            node = node.setdefault(ch, {})
        node.setdefault(None, []).append(payload)
        self.size += 1

    def scan(self, text: str) -> list[RuleMatch]:
        if not self.size:
            return []
        low = text.lower()
        n = len(low)
        out = []
        for i in range(n):
            if i and _is_word_char(low[i - 1]) and _is_word_char(low[i]):
                continue
            node = self._root
            j = i
            while j < n and low[j] in node:
                node = node[low[j]]
                j += 1
                if None in node and (j == n or not (_is_word_char(low[j]) and _is_word_char(low[j - 1]))):
                    for rule in node[None]:
                        out.append(RuleMatch(rule.rule_id, rule.category, i, j))
        return out


class PatternSet:
    """A compiled, immutable set of rules."""

    def __init__(self, rules: list[PatternRule], version: int = 1):
        ids = [r.rule_id for r in rules]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise ParseError(f"duplicate rule_id(s): {sorted(dup)}")
        self.version = version
        self.rules = tuple(rules)
        self._regex: list[tuple[PatternRule, re.Pattern]] = []
        self._trie = BlacklistTrie()
        for rule in rules:
            if rule.kind is RuleKind.REGEX:
                try:
                    compiled = re.compile(rule.pattern)
                except re.error as exc:
                    raise CompileError(rule.rule_id, str(exc)) from None
                if compiled.fullmatch(""):
                    raise CompileError(rule.rule_id, "pattern matches the empty string")
                if rule.enabled:
                    self._regex.append((rule, compiled))
            else:
                if not rule.pattern.strip():
                    raise CompileError(rule.rule_id, "empty blacklist literal")
                if rule.enabled:
                    self._trie.add(rule.pattern.strip(), rule)
        self.scan = lru_cache(maxsize=512)(self._scan)

    def __len__(self) -> int:
        return len(self.rules)

    @property
    def enabled_count(self) -> int:
        return sum(r.enabled for r in self.rules)

    def _scan(self, text: str) -> tuple[RuleMatch, ...]:
        found = []
        for rule, rx in self._regex:
            for m in rx.finditer(text):
                found.append(RuleMatch(rule.rule_id, rule.category, m.start(), m.end()))
        found.extend(self._trie.scan(text))
        found.sort(key=lambda m: (m.start, m.end, m.rule_id))
        return tuple(found)


def parse_rules(doc: object, source: str = "<memory>") -> PatternSet:
    if not isinstance(doc, dict) or not isinstance(doc.get("rules"), list):
        raise ParseError(f"{source}: expected an object with a 'rules' array")
    extra = set(doc) - _TOP_FIELDS
    if extra:
        log.warning("%s: ignoring unknown top-level field(s) %s", source, sorted(extra))
    version = doc.get("version", 1)
    if not isinstance(version, int):
        raise ParseError(f"{source}: 'version' must be an integer")
    rules = []
    for i, raw in enumerate(doc["rules"]):
        if not isinstance(raw, dict):
            raise ParseError(f"{source}: rule #{i} is not an object")
        missing = {"rule_id", "category", "kind", "pattern"} - set(raw)
        if missing:
            raise ParseError(f"{source}: rule #{i} lacks {sorted(missing)}")
        extra = set(raw) - _RULE_FIELDS
        if extra:
            log.warning("%s: rule %s: ignoring unknown field(s) %s", source, raw["rule_id"], sorted(extra))
        try:
            kind = RuleKind(raw["kind"])
        except ValueError:
            raise CompileError(str(raw["rule_id"]), f"unknown kind {raw['kind']!r}") from None
        if not isinstance(raw["pattern"], str):
            raise CompileError(str(raw["rule_id"]), "pattern must be a string")
        rules.append(PatternRule(str(raw["rule_id"]), str(raw["category"]), kind, raw["pattern"],
                                 bool(raw.get("enabled", True)), str(raw.get("description", ""))))
    return PatternSet(rules, version)


def load_rules(path: str | Path) -> PatternSet:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return parse_rules(doc, str(path))


def default_rules_path() -> Path:
    return Path(str(resources.files(__package__).joinpath(DEFAULT_RULES_FILE)))


def load_default_rules() -> PatternSet:
    return load_rules(default_rules_path())


@dataclass(frozen=True)
class DetectionVerdict:
    sensitive: bool
    tier: int
    score: float
    categories: tuple[str, ...] = ()
    escalate: bool = False


def verdict_from_matches(matches: tuple[RuleMatch, ...] | list[RuleMatch]) -> DetectionVerdict:
    if matches:
        cats = tuple(dict.fromkeys(m.category for m in matches))
        return DetectionVerdict(True, 1, 1.0, cats, False)
    return DetectionVerdict(False, 1, 0.0, (), True)


def tier1_scan(text: str, rules: PatternSet) -> DetectionVerdict:
    return verdict_from_matches(rules.scan(text))


@dataclass
class RuleEngine:
    """Holds the active pattern set; reloads replace it atomically."""

    active: PatternSet = field(default_factory=load_default_rules)
    path: Path | None = None
    reloads: int = 0

    def __post_init__(self):
        self._write_lock = threading.Lock()

    @classmethod
    def from_path(cls, path: str | Path) -> RuleEngine:
        return cls(load_rules(path), Path(path))

    def reload(self, path: str | Path | None = None) -> PatternSet:
        """Compile the file and swap it in; on any error the old set stays active."""
        target = Path(path) if path is not None else self.path
        if target is None:
            raise ParseError("no rule file to reload")
        new = load_rules(target)
        with self._write_lock:
            self.active = new
            self.path = target
            self.reloads += 1
        return new

    def scan(self, text: str) -> DetectionVerdict:
        return tier1_scan(text, self.active)

    def matches(self, text: str) -> tuple[RuleMatch, ...]:
        return self.active.scan(text)

    def scan_span(self, text: str, start: int, end: int) -> DetectionVerdict:
        """Verdict for the slice ``text[start:end]`` judged with its surrounding text.

        A match counts when it overlaps the slice, so a secret that straddles a
        block boundary flags both blocks.
        """
        hits = [m for m in self.active.scan(text) if m.start < end and m.end > start]
        return verdict_from_matches(hits)
