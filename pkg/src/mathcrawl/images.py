"""Image-URL statistics, filtering, deduplicated download, reintegration.

URLs failing any filter lose their slot (both parallel lists drop the
index); the download manifest holds one entry per distinct surviving URL.
Downloads are content-addressed under ``images/<sha256[:2]>/<sha256><ext>``
so byte-identical images are stored once, and failed downloads keep their
slots with ``local_path == null`` so the emitted dataset mirrors both the
URL-only and downloaded forms.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path, PurePosixPath
from typing import Iterable, Sequence
from urllib.parse import urlsplit

import httpx

from .records import InterleavedDoc

logger = logging.getLogger(__name__)

FREQ_UNIT_SLOTS = "slots"
FREQ_UNIT_DOCS = "docs"

# slot-removal reasons, in the order they are checked per URL
REASON_NOT_HTTPS = "not_https"
REASON_KEYWORD = "keyword"
REASON_PER_DOC_LIMIT = "per_doc_limit"
REASON_URL_FREQ = "url_freq"


class ManifestError(ValueError):
    pass


@dataclass
class ImageFilterConfig:
    max_url_freq: int = 10
    max_images_per_doc: int = 100
    require_https: bool = True
    keyword_blocklist: frozenset[str] = frozenset({"logo", "banner", "avatar", "icon"})
    freq_count_unit: str = FREQ_UNIT_SLOTS

    def validate(self) -> "ImageFilterConfig":
        if self.max_url_freq < 1 or self.max_images_per_doc < 1:
            raise ValueError("max_url_freq and max_images_per_doc must be >= 1")
        if self.freq_count_unit not in (FREQ_UNIT_SLOTS, FREQ_UNIT_DOCS):
            raise ValueError(f"unknown freq_count_unit {self.freq_count_unit!r}")
        return self


def url_stats(corpus: Iterable[InterleavedDoc], unit: str = FREQ_UNIT_SLOTS) -> dict[str, int]:
    """URL -> occurrence count over all image slots (or referencing docs)."""
    counts: dict[str, int] = {}
    for doc in corpus:
        urls = doc.image_urls()
        if unit == FREQ_UNIT_DOCS:
            urls = list(dict.fromkeys(urls))
        for url in urls:
            counts[url] = counts.get(url, 0) + 1
    return counts


@dataclass
class SlotRemoval:
    doc_id: str
    slot: int
    url: str
    reason: str


def filter_image_urls(
    doc: InterleavedDoc, stats: dict[str, int], cfg: ImageFilterConfig
) -> tuple[InterleavedDoc, list[SlotRemoval]]:
    """Drop offending image slots; parallel lists stay aligned.

    Reasons are reported in fixed order: https scheme, keyword, per-doc
    image count, corpus-wide URL frequency. Surviving text slots are never
    merged.
    """
    cfg.validate()
    urls = doc.image_urls()
    over_doc_limit = len(urls) > cfg.max_images_per_doc

    removals: list[SlotRemoval] = []
    texts: list[str | None] = []
    images: list[str | None] = []
    for slot, (text, url) in enumerate(zip(doc.texts, doc.images)):
        if url is None:
            texts.append(text)
            images.append(None)
            continue
        reason = _removal_reason(url, over_doc_limit, stats, cfg)
        if reason is None:
            texts.append(None)
            images.append(url)
        else:
            removals.append(SlotRemoval(doc_id=doc.id, slot=slot, url=url, reason=reason))
    filtered = replace(doc, texts=texts, images=images)
    return filtered, removals


def _removal_reason(
    url: str, over_doc_limit: bool, stats: dict[str, int], cfg: ImageFilterConfig
) -> str | None:
    lower = url.lower()
    if cfg.require_https and not url.startswith("https://"):
        return REASON_NOT_HTTPS
    if any(keyword in lower for keyword in cfg.keyword_blocklist):
        return REASON_KEYWORD
    if over_doc_limit:
        return REASON_PER_DOC_LIMIT
    if stats.get(url, 0) > cfg.max_url_freq:
        return REASON_URL_FREQ
    return None


STATUS_PENDING = "pending"
STATUS_OK = "ok"
STATUS_FAILED = "failed"


@dataclass
class ManifestEntry:
    url: str
    refs: list[str]
    status: str = STATUS_PENDING
    path: str | None = None
    sha256: str | None = None
    bytes: int | None = None
    reason: str | None = None

    def to_json_obj(self) -> dict:
        return {
            "url": self.url,
            "refs": self.refs,
            "status": self.status,
            "path": self.path,
            "sha256": self.sha256,
            "bytes": self.bytes,
            "reason": self.reason,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ManifestEntry":
        return cls(
            url=obj["url"],
            refs=list(obj["refs"]),
            status=obj.get("status", STATUS_PENDING),
            path=obj.get("path"),
            sha256=obj.get("sha256"),
            bytes=obj.get("bytes"),
            reason=obj.get("reason"),
        )


def build_manifest(corpus: Iterable[InterleavedDoc]) -> list[ManifestEntry]:
    """One entry per distinct image URL, listing every referencing doc id."""
    entries: dict[str, ManifestEntry] = {}
    for doc in corpus:
        for url in doc.image_urls():
            entry = entries.setdefault(url, ManifestEntry(url=url, refs=[]))
            if doc.id not in entry.refs:
                entry.refs.append(doc.id)
    return list(entries.values())


def save_manifest(path: str | Path, entries: Sequence[ManifestEntry]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry.to_json_obj(), ensure_ascii=False) + "\n")


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entries.append(ManifestEntry.from_json_obj(json.loads(line)))
    return entries


@dataclass
class DownloadOptions:
    concurrency: int = 4
    per_host_limit: int = 2
    timeout: float = 10.0
    max_bytes: int = 10 * 1024 * 1024
    retries: int = 1
    user_agent: str = "mathcrawl/0.1"
    max_redirects: int = 5

    def validate(self) -> "DownloadOptions":
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        return self


def content_path(out_dir: Path, sha256_hex: str, url: str) -> Path:
    ext = PurePosixPath(urlsplit(url).path).suffix
    return out_dir / "images" / sha256_hex[:2] / f"{sha256_hex}{ext}"


def download(
    manifest: Sequence[ManifestEntry], out_dir: str | Path, opts: DownloadOptions
) -> list[ManifestEntry]:
    """Fetch every manifest URL at most ``1 + retries`` times.

    Already-verified ok entries are skipped (idempotent reruns); statuses
    land on a copied manifest, one writer per entry.
    """
    opts.validate()
    urls = [e.url for e in manifest]
    if len(set(urls)) != len(urls):
        raise ManifestError("manifest contains duplicate URLs")
    out_root = Path(out_dir)
    result = [replace(e) for e in manifest]
    host_limits: dict[str, threading.Semaphore] = {}
    limits_lock = threading.Lock()

    def host_semaphore(url: str) -> threading.Semaphore:
        host = urlsplit(url).netloc
        with limits_lock:
            sem = host_limits.get(host)
            if sem is None:
                sem = host_limits[host] = threading.Semaphore(opts.per_host_limit)
            return sem

    client = httpx.Client(
        follow_redirects=True,
        max_redirects=opts.max_redirects,
        timeout=opts.timeout,
        headers={"User-Agent": opts.user_agent},
    )
    try:
        with ThreadPoolExecutor(max_workers=opts.concurrency) as pool:
            list(pool.map(lambda e: _fetch_one(e, client, out_root, opts, host_semaphore), result))
    finally:
        client.close()
    return result


def _fetch_one(entry, client, out_root: Path, opts: DownloadOptions, host_semaphore) -> None:
    if entry.status == STATUS_OK and entry.path and entry.sha256:
        existing = out_root / entry.path
        if existing.is_file() and _sha256_file(existing) == entry.sha256:
            return  # already downloaded and verified
    entry.status = STATUS_PENDING
    last_reason = "io"
    with host_semaphore(entry.url):
        for _ in range(1 + opts.retries):
            try:
                reason = _attempt(entry, client, out_root, opts)
            except httpx.TimeoutException:
                reason = "timeout"
            except (httpx.HTTPError, OSError) as exc:
                logger.debug("download error for %s: %s", entry.url, exc)
                reason = "io"
            if reason is None:
                return
            last_reason = reason
    entry.status = STATUS_FAILED
    entry.reason = last_reason


def _attempt(entry, client, out_root: Path, opts: DownloadOptions) -> str | None:
    """One fetch attempt; returns a failure reason or None on success."""
    with client.stream("GET", entry.url) as response:
        if response.status_code != 200:
            return f"http_status({response.status_code})"
        content_type = response.headers.get("content-type", "").split(";")[0].strip()
        if not content_type.startswith("image/"):
            return "bad_content_type"
        hasher = hashlib.sha256()
        chunks: list[bytes] = []
        size = 0
        for chunk in response.iter_bytes():
            size += len(chunk)
            if size > opts.max_bytes:
                return "too_large"
            hasher.update(chunk)
            chunks.append(chunk)
    sha = hasher.hexdigest()
    dest = content_path(out_root, sha, entry.url)
    if not dest.is_file():
        dest.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=dest.parent, prefix=".dl-")
        try:
            with os.fdopen(fd, "wb") as tmp:
                for chunk in chunks:
                    tmp.write(chunk)
            os.replace(tmp_name, dest)
        except BaseException:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
            raise
    entry.status = STATUS_OK
    entry.path = str(dest.relative_to(out_root))
    entry.sha256 = sha
    entry.bytes = size
    entry.reason = None
    return None


def _sha256_file(path: Path) -> str:
    hasher = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


def reintegrate(
    corpus: Sequence[InterleavedDoc], manifest: Sequence[ManifestEntry]
) -> list[InterleavedDoc]:
    """Attach per-slot download results under ``meta["image_meta"]``.

    Failed downloads keep their slot with ``local_path == null``; shared
    images resolve to one local path referenced from many documents.
    """
    by_url = {entry.url: entry for entry in manifest}
    missing = sorted({u for doc in corpus for u in doc.image_urls() if u not in by_url})
    if missing:
        raise ManifestError(f"manifest is missing {len(missing)} corpus URL(s): {missing[:5]}")
    incomplete = [e.url for e in manifest if e.status == STATUS_PENDING]
    if incomplete:
        raise ManifestError(f"manifest has {len(incomplete)} pending entries; run download first")

    out: list[InterleavedDoc] = []
    for doc in corpus:
        slot_meta: list[dict | None] = []
        for url in doc.images:
            if url is None:
                slot_meta.append(None)
                continue
            entry = by_url[url]
            if entry.status == STATUS_OK:
                slot_meta.append({"url": url, "local_path": entry.path, "status": STATUS_OK})
            else:
                slot_meta.append(
                    {"url": url, "local_path": None, "status": f"failed:{entry.reason}"}
                )
        new_meta = dict(doc.meta)
        new_meta["image_meta"] = slot_meta
        out.append(replace(doc, meta=new_meta))
    return out
