"""MinHash-LSH content deduplication and exact URL deduplication.

Signatures use ``h_i(x) = (a_i * H(x) + b_i) mod (2^61 - 1)`` over word
shingles, with FNV-1a 64 as the base hash; the Mersenne modulus makes the
multiply exact in vectorized uint64 arithmetic (see ``_mulmod_p61``).
Candidate pairs share at least one banded key; clusters are union-find
components. Content dedup keeps the keeper-minimal document per cluster
(default: lexicographically smallest (snapshot_id, id), i.e. the earlier
snapshot); URL dedup is exact-match, scoped to snapshots of the same
calendar year, and keeps the more recent copy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .hashing import fnv1a64
from .records import InterleavedDoc, plain_text, snapshot_year

MERSENNE_P61 = (1 << 61) - 1

SIGCACHE_MAGIC = b"MHSG1"

WITHIN_SNAPSHOT = "within_snapshot"
NEIGHBOR_PAIRS = "neighbor_pairs"


class ScopeError(ValueError):
    """Documents do not satisfy the pass's snapshot-scope precondition."""


@dataclass(frozen=True)
class MinHashParams:
    shingle_k: int = 5
    n_perm: int = 112
    bands: int = 14
    rows: int = 8
    seed: int = 0

    def validate(self) -> "MinHashParams":
        if self.bands * self.rows != self.n_perm:
            raise ValueError(
                f"bands*rows must equal n_perm ({self.bands}*{self.rows} != {self.n_perm})"
            )
        if self.shingle_k < 1:
            raise ValueError("shingle_k must be >= 1")
        return self


@dataclass
class MinHashSignature:
    doc_id: str
    values: np.ndarray  # (n_perm,) uint64 slot minima
    band_keys: np.ndarray  # (bands,) uint64

    def estimate_jaccard(self, other: "MinHashSignature") -> float:
        return float(np.mean(self.values == other.values))


@dataclass(frozen=True)
class DedupPolicy:
    scope: str = WITHIN_SNAPSHOT
    # keeper: smallest (snapshot_id, id) wins; a total order over documents

    @staticmethod
    def keeper_key(doc: InterleavedDoc) -> tuple[str, str]:
        return (doc.snapshot_id, doc.id)


def shingles(text: str, k: int) -> set[str]:
    """Lowercased word k-gram set; short docs yield their whole token run."""
    if k < 1:
        raise ValueError("k must be >= 1")
    tokens = text.lower().split()
    if not tokens:
        return set()
    if len(tokens) < k:
        return {" ".join(tokens)}
    return {" ".join(tokens[i : i + k]) for i in range(len(tokens) - k + 1)}


def _mulmod_p61(a: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Exact ``(a * h) mod (2^61 - 1)`` for uint64 operands below 2^61.

    Splits both operands into 31/30-bit halves so every partial product fits
    in 64 bits, then folds with 2^61 === 1 (mod p).
    """
    mask31 = np.uint64((1 << 31) - 1)
    mask30 = np.uint64((1 << 30) - 1)
    p = np.uint64(MERSENNE_P61)
    a1, a0 = a >> np.uint64(31), a & mask31
    h1, h0 = h >> np.uint64(31), h & mask31
    mid = a1 * h0 + a0 * h1  # < 2^62
    mid1, mid0 = mid >> np.uint64(30), mid & mask30
    # a*h = a1*h1*2^62 + mid*2^31 + a0*h0; 2^62 === 2, mid*2^31 === mid1 + mid0*2^31
    s = np.uint64(2) * (a1 * h1) + mid1 + (mid0 << np.uint64(31)) + a0 * h0  # < 2^64
    s = (s >> np.uint64(61)) + (s & p)
    return np.where(s >= p, s - p, s)


def _addmod_p61(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    p = np.uint64(MERSENNE_P61)
    s = x + b  # both < p, sum < 2^62
    return np.where(s >= p, s - p, s)


def _permutation_coeffs(params: MinHashParams) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(params.seed)
    a = rng.integers(1, MERSENNE_P61, size=params.n_perm, dtype=np.uint64)
    b = rng.integers(0, MERSENNE_P61, size=params.n_perm, dtype=np.uint64)
    return a, b


def signature(shingle_set: Iterable[str], params: MinHashParams, doc_id: str = "") -> MinHashSignature:
    """Slot minima of the permuted shingle hashes, plus banded keys."""
    params.validate()
    base = np.array(
        [fnv1a64(s) % MERSENNE_P61 for s in shingle_set], dtype=np.uint64
    )
    if base.size == 0:
        raise ValueError("empty document: cannot build a MinHash signature")
    a, b = _permutation_coeffs(params)
    permuted = _addmod_p61(_mulmod_p61(a[:, None], base[None, :]), b[:, None])
    values = permuted.min(axis=1)
    return MinHashSignature(doc_id=doc_id, values=values, band_keys=_band_keys(values, params))


def _band_keys(values: np.ndarray, params: MinHashParams) -> np.ndarray:
    keys = np.empty(params.bands, dtype=np.uint64)
    little = values.astype("<u8")
    for j in range(params.bands):
        row_bytes = little[j * params.rows : (j + 1) * params.rows].tobytes()
        keys[j] = fnv1a64(j.to_bytes(4, "little") + row_bytes)
    return keys


class _UnionFind:
    def __init__(self) -> None:
        self.parent: dict[str, str] = {}

    def find(self, x: str) -> str:
        root = x
        while self.parent.setdefault(root, root) != root:
            root = self.parent[root]
        while self.parent[x] != root:  # path compression
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x: str, y: str) -> None:
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            self.parent[ry] = rx


@dataclass
class ClusterResult:
    clusters: list[list[str]]  # size >= 2, members in input order
    singleton_count: int
    # first band collision that pulled a doc into a cluster: doc_id -> (band, key, other)
    evidence: dict[str, tuple[int, int, str]] = field(default_factory=dict)


def cluster(signatures: Sequence[MinHashSignature], params: MinHashParams) -> ClusterResult:
    """Union-find over band-key collisions; two docs join iff they share a key."""
    params.validate()
    for sig in signatures:
        if len(sig.values) != params.n_perm or len(sig.band_keys) != params.bands:
            raise ValueError(
                f"signature {sig.doc_id!r} was built with different parameters"
            )
    uf = _UnionFind()
    first_owner: dict[tuple[int, int], str] = {}
    evidence: dict[str, tuple[int, int, str]] = {}
    order: list[str] = []
    for sig in signatures:
        order.append(sig.doc_id)
        uf.find(sig.doc_id)
        for band, key in enumerate(sig.band_keys):
            slot = (band, int(key))
            owner = first_owner.setdefault(slot, sig.doc_id)
            if owner != sig.doc_id:
                uf.union(owner, sig.doc_id)
                evidence.setdefault(sig.doc_id, (band, int(key), owner))
    members: dict[str, list[str]] = {}
    for doc_id in order:
        members.setdefault(uf.find(doc_id), []).append(doc_id)
    clusters = [group for group in members.values() if len(group) >= 2]
    singletons = sum(1 for group in members.values() if len(group) == 1)
    return ClusterResult(clusters=clusters, singleton_count=singletons, evidence=evidence)


@dataclass
class DropRecord:
    dropped_id: str
    kept_id: str
    reason: str
    evidence: dict = field(default_factory=dict)


def _check_scope(docs: Sequence[InterleavedDoc], scope: str) -> None:
    snapshots = {doc.snapshot_id for doc in docs}
    if scope == WITHIN_SNAPSHOT:
        if len(snapshots) > 1:
            raise ScopeError(f"within-snapshot pass saw {len(snapshots)} snapshots: {sorted(snapshots)}")
    elif scope == NEIGHBOR_PAIRS:
        if docs and len(snapshots) != 2:
            raise ScopeError(f"neighbor-pair pass needs exactly 2 snapshots, saw {sorted(snapshots)}")
    else:
        raise ValueError(f"unknown scope {scope!r}")


def dedup_pass(
    docs: Sequence[InterleavedDoc],
    params: MinHashParams,
    policy: DedupPolicy,
) -> tuple[list[InterleavedDoc], list[DropRecord]]:
    """One content-dedup pass; keeps the keeper-minimal doc per cluster.

    Byte-identical documents are merged by a full-text hash before MinHash
    runs (same semantics, cheaper); the pass is idempotent and independent
    of input order.
    """
    params.validate()
    _check_scope(docs, policy.scope)
    by_id = {doc.id: doc for doc in docs}
    if len(by_id) != len(docs):
        raise ValueError("duplicate document ids in dedup input")

    uf = _UnionFind()
    evidence: dict[str, dict] = {}
    exact_rep: dict[int, str] = {}  # full-text hash -> first doc id
    rep_ids: list[str] = []
    rep_shingles: dict[str, set[str]] = {}
    for doc in docs:
        uf.find(doc.id)
        text = plain_text(doc)
        full_hash = fnv1a64(text)
        rep = exact_rep.setdefault(full_hash, doc.id)
        if rep != doc.id:
            uf.union(rep, doc.id)
            evidence[doc.id] = {"exact_text_hash": f"{full_hash:016x}"}
            continue
        sh = shingles(text, params.shingle_k)
        if sh:
            rep_ids.append(doc.id)
            rep_shingles[doc.id] = sh

    sigs = [signature(rep_shingles[doc_id], params, doc_id) for doc_id in rep_ids]
    clustered = cluster(sigs, params)
    for group in clustered.clusters:
        anchor = group[0]
        for member in group[1:]:
            uf.union(anchor, member)
    for doc_id, (band, key, other) in clustered.evidence.items():
        evidence.setdefault(doc_id, {"band": band, "band_key": f"{key:016x}", "matched": other})

    components: dict[str, list[str]] = {}
    for doc in docs:
        components.setdefault(uf.find(doc.id), []).append(doc.id)

    survivors: list[InterleavedDoc] = []
    drops: list[DropRecord] = []
    dropped_ids: set[str] = set()
    kept_for: dict[str, str] = {}
    for group in components.values():
        keeper = min(group, key=lambda doc_id: DedupPolicy.keeper_key(by_id[doc_id]))
        for doc_id in group:
            if doc_id != keeper:
                dropped_ids.add(doc_id)
                kept_for[doc_id] = keeper
    for doc in docs:  # preserve input order among survivors
        if doc.id in dropped_ids:
            drops.append(
                DropRecord(
                    dropped_id=doc.id,
                    kept_id=kept_for[doc.id],
                    reason="duplicate",
                    evidence=evidence.get(doc.id, {}),
                )
            )
        else:
            survivors.append(doc)
    return survivors, drops


def url_dedup(docs: Sequence[InterleavedDoc]) -> tuple[list[InterleavedDoc], list[DropRecord]]:
    """Exact URL dedup within same-calendar-year snapshots, keeping the
    most recent (snapshot_id, fetch_time) copy; ties break to the smaller id.
    """
    groups: dict[tuple[str, int], list[InterleavedDoc]] = {}
    for doc in docs:
        url = doc.url.split("#", 1)[0]
        groups.setdefault((url, snapshot_year(doc.snapshot_id)), []).append(doc)

    keep_ids: set[str] = set()
    kept_for: dict[str, str] = {}
    for group in groups.values():
        winner = _most_recent(group)
        keep_ids.add(winner.id)
        for doc in group:
            if doc.id != winner.id:
                kept_for[doc.id] = winner.id

    survivors: list[InterleavedDoc] = []
    drops: list[DropRecord] = []
    for doc in docs:
        if doc.id in keep_ids:
            survivors.append(doc)
        else:
            drops.append(
                DropRecord(
                    dropped_id=doc.id,
                    kept_id=kept_for[doc.id],
                    reason="url_duplicate",
                    evidence={"url": doc.url.split("#", 1)[0]},
                )
            )
    return survivors, drops


def _most_recent(group: Sequence[InterleavedDoc]) -> InterleavedDoc:
    # later (snapshot_id, fetch_time) wins; ties break to the smaller id
    best = group[0]
    for doc in group[1:]:
        a, b = (doc.snapshot_id, doc.fetch_time), (best.snapshot_id, best.fetch_time)
        if a > b or (a == b and doc.id < best.id):
            best = doc
    return best


def save_signatures(
    path: str | Path, signatures: Sequence[MinHashSignature], params: MinHashParams
) -> None:
    """Signature cache: magic, params JSON line, fixed-width records."""
    with open(path, "wb") as fh:
        fh.write(SIGCACHE_MAGIC + b"\n")
        meta = {
            "shingle_k": params.shingle_k,
            "n_perm": params.n_perm,
            "bands": params.bands,
            "rows": params.rows,
            "seed": params.seed,
        }
        fh.write(json.dumps(meta).encode("utf-8") + b"\n")
        for sig in signatures:
            doc_id = sig.doc_id.encode("utf-8")
            fh.write(len(doc_id).to_bytes(4, "little"))
            fh.write(doc_id)
            fh.write(sig.values.astype("<u8").tobytes())
            fh.write(sig.band_keys.astype("<u8").tobytes())


def load_signatures(path: str | Path) -> tuple[list[MinHashSignature], MinHashParams]:
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != SIGCACHE_MAGIC:
            raise ValueError(f"bad magic in {path}: expected {SIGCACHE_MAGIC.decode()!r}")
        params = MinHashParams(**json.loads(fh.readline())).validate()
        sigs: list[MinHashSignature] = []
        while True:
            len_bytes = fh.read(4)
            if not len_bytes:
                break
            if len(len_bytes) != 4:
                raise ValueError(f"truncated signature cache: {path}")
            id_len = int.from_bytes(len_bytes, "little")
            doc_id = fh.read(id_len)
            values = fh.read(params.n_perm * 8)
            keys = fh.read(params.bands * 8)
            if len(doc_id) != id_len or len(values) != params.n_perm * 8 or len(keys) != params.bands * 8:
                raise ValueError(f"truncated signature cache: {path}")
            sigs.append(
                MinHashSignature(
                    doc_id=doc_id.decode("utf-8"),
                    values=np.frombuffer(values, dtype="<u8").copy(),
                    band_keys=np.frombuffer(keys, dtype="<u8").copy(),
                )
            )
    return sigs, params
