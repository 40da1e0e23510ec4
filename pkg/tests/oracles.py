"""Reference implementations the tests compare the library against."""

from __future__ import annotations

import random
from typing import Sequence

from safekv.cache_index import CacheNode, RadixIndex
from safekv.core import SensitivityLabel


def _lcp(a: Sequence[int], b: Sequence[int]) -> int:
    k = 0
    for x, y in zip(a, b):
        if x != y:
            break
        k += 1
    return k


def flat_records(index: RadixIndex) -> list[tuple[tuple[int, ...], tuple[SensitivityLabel, ...], tuple[int, ...]]]:
    """One record per cached span: full token path, per-node labels and creators along it.

    Built from parent pointers only, so it does not share code with the
    search routine it checks.
    """
    out = []
    for node in index.iter_nodes():
        chain: list[CacheNode] = []
        cur = node
        while cur.parent is not None:
            chain.append(cur)
            cur = cur.parent
        chain.reverse()
        tokens: list[int] = []
        for n in chain:
            tokens.extend(n.edge)
        out.append((tuple(tokens), tuple(n.label for n in chain), tuple(n.creator_id for n in chain)))
    return out


def flat_match(records, query: Sequence[int], user: int) -> int:
    """Longest prefix of ``query`` covered by a cached path whose every node is visible to ``user``."""
    best = 0
    for tokens, labels, creators in records:
        if all(lab is SensitivityLabel.PUBLIC or c == user for lab, c in zip(labels, creators)):
            best = max(best, _lcp(tokens, query))
    return best


def random_ops_index(rng: random.Random, n_ops: int, *, alphabet: int = 4, max_len: int = 8, users: int = 3,
                     block_size: int | None = None, capacity: int | None = None, compress: bool = True,
                     queries_per_op: int = 2, on_query=None) -> RadixIndex:
    """Drive a random insert/match/evict/compress/label sequence, calling ``on_query`` per probe."""
    from safekv.cache_index import CapacityExhausted, NotCompressible

    index = RadixIndex(capacity, block_size=block_size)
    labels = list(SensitivityLabel)
    for _ in range(n_ops):
        op = rng.random()
        try:
            if op < 0.45:
                seq = [rng.randrange(alphabet) for _ in range(rng.randint(1, max_len))]
                res = index.insert_detailed(seq, rng.randrange(users), epoch=index.epoch)
                for node in res.created:
                    lab = rng.choice(labels)
                    if lab is not SensitivityLabel.PENDING_PRIVATE:
                        index.set_label(node, lab)
            elif op < 0.6:
                nodes = list(index.iter_nodes())
                if nodes:
                    node = rng.choice(nodes)
                    lab = rng.choice([SensitivityLabel.PUBLIC, SensitivityLabel.PRIVATE, SensitivityLabel.RESTRICTED])
                    index.set_label(node, lab, propagate=rng.random() < 0.5)
            elif op < 0.7:
                if index.budget.used[0] > 0:
                    index.evict(rng.randint(1, 3))
            elif op < 0.8 and compress:
                if rng.random() < 0.5:
                    index.compress_all()
                else:
                    nodes = list(index.iter_nodes())
                    if nodes:
                        index.compress_private_path(rng.choice(nodes))
            elif op < 0.85:
                index.advance_epoch()
        except (CapacityExhausted, NotCompressible):
            pass
        if on_query is not None:
            for _ in range(queries_per_op):
                q = [rng.randrange(alphabet) for _ in range(rng.randint(1, max_len + 2))]
                on_query(index, q, rng.randrange(users))
    return index


def chance_ci(n: int, p: float, z: float = 2.5758) -> tuple[float, float]:
    """Two-sided normal-approximation binomial interval for a rate (99% by default)."""
    half = z * (p * (1 - p) / n) ** 0.5
    return p - half, p + half
