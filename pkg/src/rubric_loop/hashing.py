"""Canonical serialization, content digests, and seeded deterministic ordering.

All persistence and reproducibility guarantees in this package reduce to the
two primitives here: ``digest_of`` (content addressing) and ``stable_order``
(a platform- and language-independent seeded shuffle built from SHA-256, so
splits and samples replay identically everywhere).
"""

from __future__ import annotations

import hashlib
import json
from typing import Any, Iterable


def canonical_json(payload: Any) -> str:
    """Serialize ``payload`` with sorted keys and no whitespace."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest_of(payload: Any) -> str:
    """SHA-256 hex digest of the canonical JSON form of ``payload``."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def digest_of_text(text: str) -> str:
    """SHA-256 hex digest of raw UTF-8 text (used for prompt bytes)."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def stable_order(ids: Iterable[str], seed: int, domain: str) -> list[str]:
    """Return ``ids`` in a seeded pseudo-random order.

    Ids are first sorted lexicographically (canonical order), then reordered
    by the SHA-256 digest of ``"{domain}|{seed}|{id}"``. The ``domain`` tag
    keeps different consumers (splitting, sampling) decorrelated under the
    same seed.
    """

    def key(item: str) -> str:
        return hashlib.sha256(f"{domain}|{seed}|{item}".encode("utf-8")).hexdigest()

    return sorted(sorted(ids), key=key)
