"""Shared vocabulary: tokens, users, handles, labels and the default tokenizer."""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass, field
from typing import Protocol, Sequence

TokenSeq = tuple[int, ...]


class UserKind(enum.Enum):
    BENIGN = "benign"
    ATTACKER = "attacker"


@dataclass(frozen=True)
class UserId:
    """Opaque user identifier.

    ``kind`` is simulator metadata. Cache and detection code only ever see
    ``value`` (see :func:`user_key`), so attackers look like anyone else.
    """

    value: int
    kind: UserKind = field(default=UserKind.BENIGN, compare=False, repr=False)


def user_key(user: UserId | int) -> int:
    return user.value if isinstance(user, UserId) else int(user)


class OwnerClass(enum.Enum):
    CUSTOMER = "customer"
    BUSINESS = "business"


class Tier(enum.IntEnum):
    """Storage tiers, hottest first. ``Tier.HBM + 1`` is the next colder tier."""

    HBM = 0
    DRAM = 1
    SSD = 2


@dataclass(frozen=True)
class KvHandle:
    value: int
    tier: Tier
    token_count: int

    def __post_init__(self):
        if self.token_count <= 0:
            raise ValueError("token_count must be positive")


class SensitivityLabel(enum.Enum):
    PRIVATE = "private"
    PUBLIC = "public"
    PENDING_PRIVATE = "pending_private"
    RESTRICTED = "restricted"

    @property
    def private_tag(self) -> int:
        return 0 if self is SensitivityLabel.PUBLIC else 1


class PolicyId(enum.Enum):
    GLOBAL_SHARE = "GlobalShare"
    CACHE_PARTITION = "CachePartition"
    PUBLIC_SYSTEM_PROMPT = "PublicSystemPrompt"
    SAFEKV = "SafeKV"


def seq_digest(seq: Sequence[int]) -> str:
    h = hashlib.sha256()
    for t in seq:
        h.update(int(t).to_bytes(4, "little"))
    return h.hexdigest()


class Vocabulary(Protocol):
    vocab_size: int

    def encode(self, text: str) -> TokenSeq: ...

    def decode(self, tokens: Sequence[int]) -> str: ...


class ByteVocab:
    """Identity map over UTF-8 bytes; token prefixes coincide with byte prefixes."""

    vocab_size = 256

    def encode(self, text: str) -> TokenSeq:
        return tuple(text.encode("utf-8"))

    def decode(self, tokens: Sequence[int]) -> str:
        return bytes(tokens).decode("utf-8", errors="replace")


class WordVocab:
    """Word-level mock: each whitespace/punctuation piece hashes to a stable id.

    Decoding is lossy (returns placeholder words) unless the piece was seen by
    ``encode`` on this instance.
    """

    _piece = re.compile(r"\s+|\w+|[^\w\s]")

    def __init__(self, vocab_size: int = 50_000):
        if vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        self.vocab_size = vocab_size
        self._seen: dict[int, str] = {}

    def _id(self, piece: str) -> int:
        digest = hashlib.blake2b(piece.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.vocab_size

    def encode(self, text: str) -> TokenSeq:
        out = []
        for piece in self._piece.findall(text):
            tid = self._id(piece)
            self._seen.setdefault(tid, piece)
            out.append(tid)
        return tuple(out)

    def decode(self, tokens: Sequence[int]) -> str:
        return "".join(self._seen.get(t, f"<{t}>") for t in tokens)


FILLER_BASE = 256
_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def filler_word(token: int) -> str:
    """Letters-only pseudo-word for a filler token (ids >= FILLER_BASE), trailing space included."""
    n = token - FILLER_BASE
    if n < 0:
        raise ValueError("not a filler token")
    chars = []
    while True:
        n, r = divmod(n, 26)
        chars.append(_LETTERS[r])
        if n == 0:
            break
    return "".join(reversed(chars)).rjust(4, "a") + " "


class HybridVocab:
    """Bytes below 256 plus an open range of opaque filler words above it.

    Each byte decodes to exactly one character (latin-1), so character
    offsets of a decoded sequence follow directly from the token lengths.
    """

    vocab_size = 1 << 31

    def encode(self, text: str) -> TokenSeq:
        return tuple(text.encode("latin-1", errors="replace"))

    def piece(self, token: int) -> str:
        return chr(token) if token < FILLER_BASE else filler_word(token)

    def decode(self, tokens: Sequence[int]) -> str:
        return "".join(self.piece(t) for t in tokens)

    def char_offsets(self, tokens: Sequence[int]) -> list[int]:
        out = [0]
        for t in tokens:
            out.append(out[-1] + (1 if t < FILLER_BASE else len(filler_word(t))))
        return out


DEFAULT_VOCAB = HybridVocab()


def tokenize(text: str, vocab: Vocabulary | None = None) -> TokenSeq:
    return (vocab or DEFAULT_VOCAB).encode(text)


def detokenize(tokens: Sequence[int], vocab: Vocabulary | None = None) -> str:
    return (vocab or DEFAULT_VOCAB).decode(tokens)
