"""Deterministic seed derivation, independent of PYTHONHASHSEED."""

from __future__ import annotations

import hashlib


def derive_seed(*parts: object) -> int:
    """64-bit seed from a stable digest of the parts.

    Built on sha256 of the parts' reprs rather than hash(), which is
    randomized per process for strings. Same parts, same seed, always.
    """
    data = "\x1f".join(repr(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "little")
