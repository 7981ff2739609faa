"""Canonical hashing helpers shared by ids, config stamps, and derived seeds."""

from __future__ import annotations

import hashlib
import json
from typing import Any

_SEP = "\x1f"


def canonical_json(obj: Any) -> str:
    """Compact, key-sorted JSON; equal values always serialize to equal bytes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8", "surrogatepass")).hexdigest()


def content_hash(obj: Any) -> str:
    return sha256_hex(canonical_json(obj))


def derive_seed(*parts: object) -> int:
    """Deterministic nonnegative 63-bit seed from any mix of labels and numbers."""
    digest = sha256_hex(_SEP.join(str(p) for p in parts))
    return int(digest[:16], 16) & 0x7FFF_FFFF_FFFF_FFFF
