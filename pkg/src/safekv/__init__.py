"""Privacy-aware KV-cache sharing with a serving simulator and an attack harness."""

from .core import (KvHandle, OwnerClass, PolicyId, SensitivityLabel, Tier, TokenSeq, UserId, UserKind,
                   detokenize, tokenize)

__version__ = "0.1.0"

__all__ = ["KvHandle", "OwnerClass", "PolicyId", "SensitivityLabel", "Tier", "TokenSeq", "UserId", "UserKind",
           "detokenize", "tokenize", "__version__"]
