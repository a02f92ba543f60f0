"""Domain records shared by every pipeline stage.

Two shapes travel through the pipeline: ``CrawlRecord`` (one fetched page,
produced by the readers) and ``InterleavedDoc`` (the parallel text/image-URL
document every stage after extraction consumes and emits). The JSON line
format of ``InterleavedDoc`` is the inter-stage contract; key order is fixed
so reruns are byte-identical.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any
from urllib.parse import urlsplit

SNAPSHOT_RE = re.compile(r"CC-MAIN-\d{4}-\d{2}$")


class RecordError(ValueError):
    """A single input record is invalid; the surrounding stream continues."""


def validate_url(url: str) -> str:
    """Require an absolute http(s) URL; returns it unchanged."""
    parts = urlsplit(url)
    if parts.scheme not in ("http", "https") or not parts.netloc:
        raise RecordError(f"not an absolute http(s) URL: {url!r}")
    return url


def validate_snapshot_id(snapshot_id: str) -> str:
    if not SNAPSHOT_RE.match(snapshot_id):
        raise RecordError(f"snapshot id does not match CC-MAIN-YYYY-WW: {snapshot_id!r}")
    return snapshot_id


def snapshot_year(snapshot_id: str) -> int:
    """Calendar year encoded in a CC-MAIN-YYYY-WW snapshot id."""
    validate_snapshot_id(snapshot_id)
    return int(snapshot_id.split("-")[2])


def normalize_timestamp(value: str) -> str:
    """Normalize an ISO-8601-ish timestamp to ``YYYY-MM-DDTHH:MM:SSZ`` (UTC).

    Accepts 'Z' or numeric offsets and missing time components. Normalizing
    once at ingest keeps downstream comparisons plain string comparisons.
    """
    s = value.strip()
    if not s:
        raise RecordError("empty timestamp")
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(s)
    except ValueError as exc:
        raise RecordError(f"unparseable timestamp: {value!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class CrawlRecord:
    """One fetched web page as delivered by a crawl archive."""

    id: str
    url: str
    snapshot_id: str
    fetch_time: str  # normalized ISO-8601 UTC, see normalize_timestamp()
    content_type: str
    html: str  # lossy-decoded UTF-8; invalid sequences became U+FFFD

    def validate(self) -> "CrawlRecord":
        if not self.id:
            raise RecordError("record id is empty")
        validate_url(self.url)
        validate_snapshot_id(self.snapshot_id)
        return self


@dataclass
class InterleavedDoc:
    """Interleaved text/image document: two parallel lists, one slot each.

    For every index exactly one of ``texts[i]``, ``images[i]`` is non-null;
    image slots hold absolute URLs. ``scores`` records per-stage classifier
    scores, ``meta`` is a free-form key/value map (e.g. download results).
    """

    id: str
    url: str
    snapshot_id: str
    fetch_time: str
    texts: list[str | None]
    images: list[str | None]
    language: str | None = None
    scores: dict[str, float] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> "InterleavedDoc":
        if len(self.texts) != len(self.images):
            raise ValueError(
                f"doc {self.id}: texts/images length mismatch "
                f"({len(self.texts)} != {len(self.images)})"
            )
        for i, (t, im) in enumerate(zip(self.texts, self.images)):
            if (t is None) == (im is None):
                raise ValueError(f"doc {self.id}: slot {i} must hold exactly one of text/image")
            if im is not None:
                validate_url(im)
        return self

    def image_urls(self) -> list[str]:
        return [u for u in self.images if u is not None]

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "url": self.url,
            "snapshot": self.snapshot_id,
            "timestamp": self.fetch_time,
            "texts": self.texts,
            "images": self.images,
            "language": self.language,
            "scores": self.scores,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), ensure_ascii=False)

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "InterleavedDoc":
        return cls(
            id=obj["id"],
            url=obj["url"],
            snapshot_id=obj["snapshot"],
            fetch_time=obj["timestamp"],
            texts=list(obj["texts"]),
            images=list(obj["images"]),
            language=obj.get("language"),
            scores=dict(obj.get("scores", {})),
            meta=dict(obj.get("meta", {})),
        )

    @classmethod
    def from_json(cls, line: str) -> "InterleavedDoc":
        return cls.from_json_obj(json.loads(line))


def plain_text(doc: InterleavedDoc) -> str:
    """Concatenate the non-null text slots with blank lines between them."""
    return "\n\n".join(t for t in doc.texts if t is not None)
