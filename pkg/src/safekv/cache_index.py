"""Access-controlled radix index over cached KV spans.

Every node carries a sensitivity label and the id of the user whose request
created it. A node is *visible* to user ``u`` when it is public or was
created by ``u``; prefix lookups only walk visible nodes.

Siblings are keyed by (first token, creator). Two users who both submit the
same private prefix therefore get separate copies, each reusable by its own
creator, while a public node is a single shared copy.

Single-user private chains can be collapsed into one ``pri_root`` whose
handle list aggregates the chain; the inner nodes stay in place as inactive
metadata so partial matches and eviction still work per block.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import math
import struct
import threading
from dataclasses import dataclass, field
from typing import Iterator, Sequence

from .core import KvHandle, OwnerClass, SensitivityLabel, Tier, TokenSeq, UserId, user_key
from .monitor import AccessStats

PRIVATE_LIKE = (SensitivityLabel.PRIVATE, SensitivityLabel.RESTRICTED)
_LABEL_CODE = {
    SensitivityLabel.PRIVATE: 0,
    SensitivityLabel.PUBLIC: 1,
    SensitivityLabel.PENDING_PRIVATE: 2,
    SensitivityLabel.RESTRICTED: 3,
}


class CacheError(Exception):
    pass


class CapacityExhausted(CacheError):
    pass


class NotCompressible(CacheError):
    pass


class IllegalTransition(CacheError):
    pass


class UnderflowError(CacheError):
    pass


@dataclass(eq=False)
class CacheNode:
    node_id: int
    edge: TokenSeq
    parent: CacheNode | None
    label: SensitivityLabel
    creator_id: int
    owner_class: OwnerClass
    kv_handles: list[KvHandle]
    access_epoch: int = 0
    ref_count: int = 0
    is_compressed: bool = False
    after_compress: bool = False
    compress_ref: CacheNode | None = None
    stats: AccessStats = field(default_factory=AccessStats)
    cumulative_kv_tokens: int = 0
    audit: tuple[str, ...] = ()
    children: dict[int, dict[int, CacheNode]] = field(default_factory=dict)
    alive: bool = True
    depth: int = 0  # tokens from root to the end of this edge
    held: int = 0  # pins on this node plus all descendants
    chain: list[CacheNode] = field(default_factory=list)  # pri_root only; chain[0] is self
    chain_index: int = 0
    sensitive_truth: bool | None = None  # ground truth attached by the simulator

    @property
    def private_tag(self) -> int:
        return self.label.private_tag

    @property
    def is_root(self) -> bool:
        return self.parent is None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def iter_children(self) -> Iterator[CacheNode]:
        for tok in sorted(self.children):
            bucket = self.children[tok]
            for creator in sorted(bucket):
                yield bucket[creator]

    def child_count(self) -> int:
        return sum(len(b) for b in self.children.values())

    def visible_to(self, user: UserId | int) -> bool:
        return self.label is SensitivityLabel.PUBLIC or self.creator_id == user_key(user)

    @property
    def own_handle(self) -> KvHandle:
        if self.after_compress:
            return self.compress_ref.kv_handles[self.chain_index]
        if self.is_compressed:
            return self.kv_handles[0]
        return self.kv_handles[0]

    @property
    def tier(self) -> Tier:
        return self.own_handle.tier

    def __repr__(self) -> str:  # keep recursion out of the default dataclass repr
        return (f"CacheNode(id={self.node_id}, edge_len={len(self.edge)}, label={self.label.value}, "
                f"creator={self.creator_id})")


@dataclass
class MatchResult:
    matched_tokens: int
    handles: list[KvHandle]
    terminal_node: CacheNode
    lowest_tier: Tier
    path: list[CacheNode] = field(default_factory=list)

    def tier_counts(self) -> dict[Tier, int]:
        out = {t: 0 for t in Tier}
        for h in self.handles:
            out[h.tier] += h.token_count
        return out


@dataclass
class InsertResult:
    node: CacheNode
    matched_tokens: int
    created: list[CacheNode]
    path: list[CacheNode]


@dataclass
class TierBudget:
    capacity: dict[Tier, int]
    used: dict[Tier, int] = field(default_factory=lambda: {t: 0 for t in Tier})

    def __post_init__(self):
        for t in Tier:
            self.capacity.setdefault(t, 0)
            self.used.setdefault(t, 0)
            if self.capacity[t] < 0:
                raise ValueError("capacity must be non-negative")

    @staticmethod
    def t_max(m_kv_bytes: int | float, bytes_per_token: int | float) -> int:
        if bytes_per_token <= 0:
            raise ValueError("bytes_per_token must be positive")
        if isinstance(m_kv_bytes, int) and isinstance(bytes_per_token, int):
            return m_kv_bytes // bytes_per_token
        return math.floor(m_kv_bytes / bytes_per_token)

    @classmethod
    def from_memory(cls, m_kv_bytes: int | float, bytes_per_token: int | float,
                    dram_tokens: int = 0, ssd_tokens: int = 0) -> TierBudget:
        hbm = cls.t_max(m_kv_bytes, bytes_per_token)
        return cls({Tier.HBM: hbm, Tier.DRAM: dram_tokens, Tier.SSD: ssd_tokens})

    @classmethod
    def from_tokens(cls, hbm: int, dram: int = 0, ssd: int = 0) -> TierBudget:
        return cls({Tier.HBM: hbm, Tier.DRAM: dram, Tier.SSD: ssd})

    @classmethod
    def from_config(cls, cfg: dict) -> TierBudget:
        """Accept ``{"hbm_tokens": ...}`` or ``{"m_kv_bytes": ..., "bytes_per_token": ...}``."""
        dram = int(cfg.get("dram_tokens", 0))
        ssd = int(cfg.get("ssd_tokens", 0))
        if "m_kv_bytes" in cfg:
            return cls.from_memory(cfg["m_kv_bytes"], cfg["bytes_per_token"], dram, ssd)
        return cls.from_tokens(int(cfg["hbm_tokens"]), dram, ssd)

    def free(self, tier: Tier) -> int:
        return self.capacity[tier] - self.used[tier]


def _chunk_bounds(start: int, end: int, block_size: int | None) -> list[tuple[int, int]]:
    if block_size is None:
        return [(start, end)]
    out = []
    pos = start
    while pos < end:
        nxt = min(end, (pos // block_size + 1) * block_size)
        out.append((pos, nxt))
        pos = nxt
    return out


def _lcp(edge: Sequence[int], seq: Sequence[int], start: int) -> int:
    n = min(len(edge), len(seq) - start)
    k = 0
    while k < n and edge[k] == seq[start + k]:
        k += 1
    return k


class RadixIndex:
    """The shared cache index.

    ``tiered=True`` turns eviction into demotion (HBM to DRAM to SSD, SSD
    frees); otherwise eviction frees HBM directly. ``block_size`` caps the
    length of newly created nodes so detection can label spans independently.
    """

    def __init__(self, budget: TierBudget | int | None = None, *, tiered: bool = False,
                 block_size: int | None = 16):
        if budget is None:
            budget = TierBudget.from_tokens(1 << 62)
        elif isinstance(budget, int):
            budget = TierBudget.from_tokens(budget)
        if block_size is not None and block_size <= 0:
            raise ValueError("block_size must be positive")
        self.budget = budget
        self.tiered = tiered
        self.block_size = block_size
        self.epoch = 0
        self._ids = itertools.count(1)
        self._handle_ids = itertools.count(1)
        self._seq = itertools.count()
        self._lock = threading.RLock()
        self._heaps: dict[Tier, list] = {t: [] for t in Tier}
        self._handle_owner: dict[int, CacheNode] = {}
        self.node_count = 0
        self.freed_handles = 0
        self.demotions = 0
        self.on_free = None  # optional callback(node) when a node leaves the tree
        self.on_split = None  # optional callback(upper, lower) after an edge split
        self.root = CacheNode(0, (), None, SensitivityLabel.PUBLIC, -1, OwnerClass.BUSINESS, [])

    # ------------------------------------------------------------------ basics
    def advance_epoch(self) -> int:
        with self._lock:
            self.epoch += 1
            return self.epoch

    def iter_nodes(self) -> Iterator[CacheNode]:
        """Live non-root nodes in canonical depth-first order."""
        stack = list(reversed(list(self.root.iter_children())))
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(list(node.iter_children())))

    def path_tokens(self, node: CacheNode) -> TokenSeq:
        parts = []
        while node is not None and node.parent is not None:
            parts.append(node.edge)
            node = node.parent
        out: list[int] = []
        for p in reversed(parts):
            out.extend(p)
        return tuple(out)

    def node_by_handle(self, handle: KvHandle | int) -> CacheNode:
        key = handle.value if isinstance(handle, KvHandle) else handle
        return self._handle_owner[key]

    def used_tokens(self, tier: Tier = Tier.HBM) -> int:
        return self.budget.used[tier]

    def live_tokens(self) -> dict[Tier, int]:
        out = {t: 0 for t in Tier}
        for node in self.iter_nodes():
            h = node.own_handle
            out[h.tier] += h.token_count
        return out

    # ---------------------------------------------------------------- handles
    def _set_own_handle(self, node: CacheNode, handle: KvHandle) -> None:
        if node.after_compress:
            node.compress_ref.kv_handles[node.chain_index] = handle
        else:
            node.kv_handles[0] = handle

    def _new_handle(self, tier: Tier, count: int) -> KvHandle:
        return KvHandle(next(self._handle_ids), tier, count)

    # ------------------------------------------------------- eviction heaps
    def _key(self, node: CacheNode) -> tuple[int, int, int]:
        return (node.access_epoch, 0 if node.label is SensitivityLabel.PUBLIC else 1, node.node_id)

    def _touch(self, node: CacheNode) -> None:
        if node.parent is None or not node.alive:
            return
        heap = self._heaps[node.tier]
        heapq.heappush(heap, (*self._key(node), next(self._seq), node))
        if len(heap) > 4 * self.node_count + 1024:
            self._rebuild_heap(node.tier)

    def _rebuild_heap(self, tier: Tier) -> None:
        heap = [(*self._key(n), next(self._seq), n) for n in self.iter_nodes() if n.tier is tier]
        heapq.heapify(heap)
        self._heaps[tier] = heap

    def _is_tier_leaf(self, node: CacheNode, tier: Tier) -> bool:
        if node.tier is not tier:
            return False
        for bucket in node.children.values():
            for child in bucket.values():
                if child.tier is tier:
                    return False
        return True

    def _pop_candidate(self, tier: Tier, skipped: list[CacheNode]) -> CacheNode | None:
        heap = self._heaps[tier]
        while heap:
            *key, _, node = heapq.heappop(heap)
            if not node.alive or node.held > 0 or tuple(key) != self._key(node):
                continue
            if not self._is_tier_leaf(node, tier):
                continue
            if node in skipped:
                continue
            return node
        return None

    # ---------------------------------------------------------------- search
    def _search(self, seq: Sequence[int], user: int):
        """Depth-first search for the longest fully visible path.

        Returns ``(end_pos, steps)`` where each step is ``(node, taken, compressed)``:
        ``taken`` tokens of ``node``'s edge were matched, and ``compressed`` marks
        a jump across a whole pri_root chain (``node`` is then the pri_root).
        """
        entries: list[tuple[CacheNode, int, int, int, bool]] = []  # node, end, prev, taken, compressed
        stack: list[tuple[CacheNode, int, int]] = [(self.root, 0, -1)]
        best_end, best_idx = 0, -1
        n = len(seq)
        while stack:
            node, pos, prev = stack.pop()
            if pos >= n:
                continue
            bucket = node.children.get(seq[pos])
            if not bucket:
                continue
            cands = [c for c in bucket.values() if c.label is SensitivityLabel.PUBLIC or c.creator_id == user]
            if not cands:
                continue
            cands.sort(key=lambda c: (c.creator_id != user, c.creator_id))
            pushes = []
            for child in cands:
                if child.is_compressed and len(child.chain) > 1:
                    span = self._chain_span(child)
                    if tuple(seq[pos:pos + len(span)]) == span:
                        end = pos + len(span)
                        entries.append((child, end, prev, len(span), True))
                        idx = len(entries) - 1
                        if end > best_end:
                            best_end, best_idx = end, idx
                        pushes.append((child.chain[-1], end, idx))
                        continue
                k = _lcp(child.edge, seq, pos)
                entries.append((child, pos + k, prev, k, False))
                idx = len(entries) - 1
                if pos + k > best_end:
                    best_end, best_idx = pos + k, idx
                if k == len(child.edge):
                    pushes.append((child, pos + k, idx))
            stack.extend(reversed(pushes))
        steps = []
        idx = best_idx
        while idx >= 0:
            node, _, prev, taken, compressed = entries[idx]
            steps.append((node, taken, compressed))
            idx = prev
        steps.reverse()
        return best_end, steps

    def _chain_span(self, pri_root: CacheNode) -> TokenSeq:
        out: list[int] = []
        for member in pri_root.chain:
            out.extend(member.edge)
        return tuple(out)

    def match_prefix(self, seq: Sequence[int], user: UserId | int, *, touch: bool = True) -> MatchResult:
        uid = user_key(user)
        with self._lock:
            end, steps = self._search(seq, uid)
            handles: list[KvHandle] = []
            path: list[CacheNode] = []
            terminal = self.root
            for node, taken, compressed in steps:
                if compressed:
                    handles.extend(node.kv_handles)
                    path.extend(node.chain)
                    terminal = node.chain[-1]
                else:
                    h = node.own_handle
                    handles.append(h if taken == h.token_count else KvHandle(h.value, h.tier, taken))
                    path.append(node)
                    terminal = node
            if touch:
                for node in path:
                    if node.access_epoch != self.epoch:
                        node.access_epoch = self.epoch
                        self._touch(node)
            lowest = max((h.tier for h in handles), default=Tier.HBM)
            return MatchResult(end, handles, terminal, lowest, path)

    # ---------------------------------------------------------------- insert
    def insert(self, seq: Sequence[int], user: UserId | int, owner: OwnerClass = OwnerClass.CUSTOMER,
               epoch: int | None = None) -> CacheNode:
        return self.insert_detailed(seq, user, owner, epoch).node

    def insert_detailed(self, seq: Sequence[int], user: UserId | int,
                        owner: OwnerClass = OwnerClass.CUSTOMER, epoch: int | None = None) -> InsertResult:
        seq = tuple(int(t) for t in seq)
        if not seq:
            raise ValueError("seq must be non-empty")
        uid = user_key(user)
        with self._lock:
            if epoch is not None and epoch > self.epoch:
                self.epoch = epoch
            now = self.epoch
            end, steps = self._search(seq, uid)
            path: list[CacheNode] = []
            for node, _, compressed in steps:
                path.extend(node.chain if compressed else [node])
            attach = self.root
            if steps:
                last, taken, compressed = steps[-1]
                if compressed:
                    attach = last.chain[-1]
                elif taken < len(last.edge):
                    self._decompress_member(last)
                    attach = self._split(last, taken)
                    path[-1] = attach
                else:
                    attach = last
            remaining = len(seq) - end
            created: list[CacheNode] = []
            anchor = path[-1] if path else None
            if anchor is not None:
                self._pin_raw(anchor)
            try:
                if self.tiered and path:
                    self._promote_nodes(path)
                if remaining:
                    if attach.compress_ref is not None or (attach.is_compressed and len(attach.chain) > 1):
                        root = attach.compress_ref or attach
                        if root.chain[-1] is not attach:
                            self._decompress(root)
                    self._reserve(Tier.HBM, remaining)
                    parent = attach
                    for a, b in _chunk_bounds(end, len(seq), self.block_size):
                        child = self._make_node(seq[a:b], parent, uid, owner, now)
                        created.append(child)
                        parent = child
            finally:
                if anchor is not None:
                    self._unpin_raw(anchor)
            for node in path:
                if node.access_epoch != now:
                    node.access_epoch = now
                    self._touch(node)
            terminal = created[-1] if created else (path[-1] if path else self.root)
            return InsertResult(terminal, end, created, path + created)

    def _make_node(self, edge: TokenSeq, parent: CacheNode, uid: int, owner: OwnerClass, epoch: int) -> CacheNode:
        handle = self._new_handle(Tier.HBM, len(edge))
        node = CacheNode(next(self._ids), edge, parent, SensitivityLabel.PENDING_PRIVATE, uid, owner,
                         [handle], access_epoch=epoch, depth=parent.depth + len(edge))
        parent.children.setdefault(edge[0], {})[uid] = node
        self._handle_owner[handle.value] = node
        self.budget.used[Tier.HBM] += len(edge)
        self.node_count += 1
        self._touch(node)
        return node

    def _split(self, node: CacheNode, k: int) -> CacheNode:
        """Cut ``node``'s edge after ``k`` tokens; returns the new upper node."""
        assert 0 < k < len(node.edge) and not node.after_compress and not node.is_compressed
        old = node.kv_handles[0]
        upper_handle = KvHandle(next(self._handle_ids), old.tier, k)
        upper = CacheNode(next(self._ids), node.edge[:k], node.parent, node.label, node.creator_id,
                          node.owner_class, [upper_handle], access_epoch=node.access_epoch,
                          stats=node.stats.copy(), audit=node.audit, depth=node.depth - len(node.edge) + k,
                          held=node.held, sensitive_truth=node.sensitive_truth)
        node.parent.children[node.edge[0]][node.creator_id] = upper
        node.edge = node.edge[k:]
        node.kv_handles[0] = KvHandle(old.value, old.tier, old.token_count - k)
        node.parent = upper
        upper.children[node.edge[0]] = {node.creator_id: node}
        self._handle_owner[upper_handle.value] = upper
        self.node_count += 1
        self._touch(upper)
        self._touch(node)
        if self.on_split is not None:
            self.on_split(upper, node)
        return upper

    # --------------------------------------------------------------- capacity
    def _reserve(self, tier: Tier, tokens: int) -> None:
        cap = self.budget.capacity[tier]
        if tokens > cap:
            raise CapacityExhausted(f"{tokens} tokens exceed {tier.name} capacity {cap}")
        over = self.budget.used[tier] + tokens - cap
        if over > 0:
            self._evict_tier(tier, over)

    def evict(self, needed_tokens: int, epoch: int | None = None) -> list[KvHandle]:
        if needed_tokens <= 0:
            raise ValueError("needed_tokens must be positive")
        with self._lock:
            if epoch is not None and epoch > self.epoch:
                self.epoch = epoch
            return self._evict_tier(Tier.HBM, needed_tokens)

    def _evict_tier(self, tier: Tier, needed: int) -> list[KvHandle]:
        freed: list[KvHandle] = []
        got = 0
        skipped: list[CacheNode] = []
        try:
            while got < needed:
                victim = self._pop_candidate(tier, skipped)
                if victim is None:
                    raise CapacityExhausted(f"could free only {got}/{needed} tokens in {tier.name}")
                handle = victim.own_handle
                if self.tiered and tier < Tier.SSD and self.budget.capacity[Tier(tier + 1)] > 0:
                    try:
                        self._move(victim, Tier(tier + 1))
                        self.demotions += 1
                    except CapacityExhausted:
                        if victim.is_leaf:
                            self._free(victim)
                        else:
                            skipped.append(victim)
                            continue
                elif victim.is_leaf:
                    self._free(victim)
                else:
                    skipped.append(victim)
                    continue
                freed.append(handle)
                got += handle.token_count
        finally:
            for node in skipped:
                self._touch(node)
        return freed

    def _move(self, node: CacheNode, tier: Tier) -> KvHandle:
        old = node.own_handle
        if old.tier is tier:
            return old
        count = old.token_count
        if self.budget.used[tier] + count > self.budget.capacity[tier]:
            self._pin_raw(node)
            try:
                self._reserve(tier, count)
            finally:
                self._unpin_raw(node)
        new = KvHandle(old.value, tier, count)
        self._set_own_handle(node, new)
        self.budget.used[old.tier] -= count
        self.budget.used[tier] += count
        self._touch(node)
        if node.parent is not None:
            self._touch(node.parent)
        return new

    def demote(self, handle: KvHandle) -> KvHandle:
        if handle.tier is Tier.SSD:
            raise ValueError("SSD handles cannot be demoted")
        with self._lock:
            node = self.node_by_handle(handle)
            target = Tier(node.tier + 1)
            if self.budget.used[target] + handle.token_count > self.budget.capacity[target]:
                raise CapacityExhausted(f"{target.name} is full")
            self.demotions += 1
            return self._move(node, target)

    def promote(self, nodes: Sequence[CacheNode]) -> int:
        with self._lock:
            return self._promote_nodes(nodes)

    def _promote_nodes(self, nodes: Sequence[CacheNode]) -> int:
        moved = 0
        for node in nodes:
            if node.tier is Tier.HBM or not node.alive:
                continue
            try:
                self._move(node, Tier.HBM)
            except CapacityExhausted:
                break
            moved += node.own_handle.token_count
        return moved

    def _free(self, node: CacheNode) -> None:
        assert node.is_leaf and node.held == 0 and node.parent is not None
        handle = node.own_handle
        parent = node.parent
        bucket = parent.children[node.edge[0]]
        del bucket[node.creator_id]
        if not bucket:
            del parent.children[node.edge[0]]
        if node.after_compress:
            root = node.compress_ref
            assert root.chain[-1] is node
            root.chain.pop()
            root.kv_handles.pop()
            root.cumulative_kv_tokens -= handle.token_count
            if len(root.chain) == 1:
                root.is_compressed = False
                root.chain = []
                root.cumulative_kv_tokens = 0
        node.alive = False
        node.after_compress = False
        node.compress_ref = None
        self.budget.used[handle.tier] -= handle.token_count
        del self._handle_owner[handle.value]
        self.node_count -= 1
        self.freed_handles += 1
        self._touch(parent)
        if self.on_free is not None:
            self.on_free(node)

    # ------------------------------------------------------------------ pins
    def _pin_raw(self, node: CacheNode) -> None:
        node.ref_count += 1
        cur = node
        while cur is not None:
            cur.held += 1
            cur = cur.parent

    def _unpin_raw(self, node: CacheNode) -> None:
        if node.ref_count <= 0:
            raise UnderflowError(f"node {node.node_id} is not pinned")
        node.ref_count -= 1
        cur = node
        while cur is not None:
            cur.held -= 1
            if cur.held == 0:
                self._touch(cur)
            cur = cur.parent

    def pin(self, node: CacheNode) -> None:
        with self._lock:
            if not node.alive:
                raise CacheError("cannot pin an evicted node")
            self._pin_raw(node)

    def unpin(self, node: CacheNode) -> None:
        with self._lock:
            self._unpin_raw(node)

    # ----------------------------------------------------------------- labels
    def set_label(self, node: CacheNode, label: SensitivityLabel, propagate: bool = False,
                  audit: str | None = None) -> int:
        with self._lock:
            if not node.alive or node.parent is None:
                raise CacheError("node is not in the tree")
            if node.label is SensitivityLabel.PUBLIC and label is SensitivityLabel.PENDING_PRIVATE:
                raise IllegalTransition("Public -> PendingPrivate")
            targets = [node]
            if propagate and label in PRIVATE_LIKE:
                stack = list(node.iter_children())
                while stack:
                    cur = stack.pop()
                    targets.append(cur)
                    stack.extend(cur.iter_children())
            changed = 0
            for cur in targets:
                if cur.label is label:
                    continue
                if label not in PRIVATE_LIKE:
                    self._decompress_member(cur)
                cur.label = label
                if audit:
                    cur.audit = cur.audit + (audit,)
                self._touch(cur)
                changed += 1
            return changed

    # ------------------------------------------------------------ compression
    def _links(self, parent: CacheNode, child: CacheNode) -> bool:
        return (parent.child_count() == 1 and parent.label in PRIVATE_LIKE and child.label in PRIVATE_LIKE
                and parent.creator_id == child.creator_id and parent.ref_count == 0 and child.ref_count == 0
                and not (parent.is_compressed or parent.after_compress)
                and not (child.is_compressed or child.after_compress))

    def compress_private_path(self, chain_head: CacheNode) -> CacheNode:
        with self._lock:
            head = chain_head
            if not head.alive or head.parent is None:
                raise NotCompressible("node is not in the tree")
            if head.is_compressed or head.after_compress:
                raise NotCompressible("node already belongs to a compressed chain")
            if head.label not in PRIVATE_LIKE or head.ref_count:
                raise NotCompressible("chain head must be private and unpinned")
            chain = [head]
            while chain[-1].child_count() == 1:
                nxt = next(chain[-1].iter_children())
                if not self._links(chain[-1], nxt):
                    break
                chain.append(nxt)
            if len(chain) < 2:
                raise NotCompressible("chain length < 2")
            handles = [m.kv_handles[0] for m in chain]
            head.is_compressed = True
            head.chain = chain
            head.kv_handles = handles
            head.cumulative_kv_tokens = sum(h.token_count for h in handles)
            for i, member in enumerate(chain[1:], start=1):
                member.after_compress = True
                member.compress_ref = head
                member.chain_index = i
                member.kv_handles = []
            return head

    def compress_all(self) -> list[CacheNode]:
        """Compress every maximal eligible chain; returns the new pri_roots."""
        with self._lock:
            roots = []
            for node in list(self.iter_nodes()):
                if node.is_compressed or node.after_compress or node.child_count() != 1:
                    continue
                parent = node.parent
                if parent is not self.root and self._links(parent, node):
                    continue
                if not self._links(node, next(node.iter_children())):
                    continue
                roots.append(self.compress_private_path(node))
            return roots

    def _decompress_member(self, node: CacheNode) -> None:
        if node.after_compress:
            self._decompress(node.compress_ref)
        elif node.is_compressed:
            self._decompress(node)

    def _decompress(self, root: CacheNode) -> None:
        handles = root.kv_handles
        for i, member in enumerate(root.chain):
            member.kv_handles = [handles[i]]
            member.after_compress = False
            member.compress_ref = None
            member.chain_index = 0
        root.is_compressed = False
        root.chain = []
        root.cumulative_kv_tokens = 0

    def decompress_all(self) -> None:
        with self._lock:
            for node in list(self.iter_nodes()):
                if node.is_compressed:
                    self._decompress(node)

    # ---------------------------------------------------------------- digest
    def digest(self) -> str:
        with self._lock:
            h = hashlib.sha256()
            stack = [self.root]
            while stack:
                node = stack.pop()
                kids = list(node.iter_children())
                flags = (1 if node.is_compressed else 0) | (2 if node.after_compress else 0)
                h.update(struct.pack("<I", len(node.edge)))
                h.update(struct.pack(f"<{len(node.edge)}I", *node.edge))
                h.update(struct.pack("<BqQBI", _LABEL_CODE[node.label], node.creator_id,
                                     node.access_epoch, flags, len(kids)))
                stack.extend(reversed(kids))
            return h.hexdigest()

    def check_invariants(self) -> None:
        """Raise AssertionError if a structural invariant is broken (test helper)."""
        used = {t: 0 for t in Tier}
        for node in self.iter_nodes():
            assert node.edge, "empty non-root edge"
            assert node.parent.children[node.edge[0]][node.creator_id] is node
            assert node.depth == node.parent.depth + len(node.edge)
            assert node.own_handle.token_count == len(node.edge)
            assert self._handle_owner[node.own_handle.value] is node
            if node.after_compress:
                root = node.compress_ref
                assert root.is_compressed and root.chain[node.chain_index] is node
            if node.is_compressed:
                assert node.label in PRIVATE_LIKE
                assert node.cumulative_kv_tokens == sum(h.token_count for h in node.kv_handles)
                assert len(node.kv_handles) == len(node.chain) >= 2
            pins = node.ref_count + sum(c.held for c in node.iter_children())
            assert node.held == pins, "held counter out of sync"
            used[node.tier] += len(node.edge)
        for t in Tier:
            assert used[t] == self.budget.used[t], f"budget drift on {t.name}"
            assert used[t] <= self.budget.capacity[t]
