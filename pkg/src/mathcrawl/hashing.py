"""Stable, dependency-free hashing used across the pipeline.

Everything downstream (feature hashing, sharding, MinHash base hashes,
exact-duplicate fast paths) must produce identical values across runs,
platforms and Python versions, so we pin FNV-1a 64-bit rather than relying
on ``hash()``.
"""

from __future__ import annotations

from functools import lru_cache

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes | str) -> int:
    """FNV-1a 64-bit hash of ``data`` (strings hash their UTF-8 bytes)."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


@lru_cache(maxsize=1 << 20)
def _cached_fnv1a64_str(s: str) -> int:
    return fnv1a64(s)


def feature_bucket(feature: str, n_buckets: int) -> int:
    """Fold a feature string into ``[0, n_buckets)``.

    Cached: feature vocabularies repeat heavily across documents.
    """
    return _cached_fnv1a64_str(feature) % n_buckets
