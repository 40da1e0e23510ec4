"""A walk through the privacy-aware prefix cache.

Run with ``python demos/01_cache_basics.py``.
"""

from __future__ import annotations

from safekv.cache_index import RadixIndex
from safekv.core import DEFAULT_VOCAB, SensitivityLabel as L

alice, bob = 1, 2
index = RadixIndex(block_size=4)

# %% Two users send prompts that start with the same instruction.
shared = DEFAULT_VOCAB.encode("You are a helpful assistant . Summarise the following text :")
alice_prompt = shared + DEFAULT_VOCAB.encode("my card is 4539 1488 0343 6467")
res = index.insert_detailed(alice_prompt, alice)
print(f"alice inserted {len(alice_prompt)} tokens as {len(res.created)} blocks")

# %% New blocks start pending: nobody but the creator may reuse them.
print("bob matches before classification:", index.match_prefix(alice_prompt, bob).matched_tokens)

# %% The detector clears the instruction blocks and flags the card number.
for node in res.created:
    span = index.path_tokens(node)
    index.set_label(node, L.PUBLIC if len(span) <= len(shared) else L.PRIVATE)

print("bob matches the shared instruction:", index.match_prefix(alice_prompt, bob).matched_tokens, "tokens")
print("alice matches her whole prompt:   ", index.match_prefix(alice_prompt, alice).matched_tokens, "tokens")

# %% Private chains collapse into one lookup unit without changing any answer.
before = index.match_prefix(alice_prompt, alice).matched_tokens
index.compress_all()
print("after compression alice still matches", index.match_prefix(alice_prompt, alice).matched_tokens,
      "tokens (was", before, ")")

# %% Eviction frees the least recently used leaf, public before private.
index.advance_epoch()
freed = index.evict(4)
print("evicted handles:", [h.value for h in freed])
index.check_invariants()
