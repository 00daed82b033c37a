"""Stable derived seeds so every random draw is keyed explicitly."""

from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    """Deterministic 63-bit seed from a tuple of hashable labels."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF
