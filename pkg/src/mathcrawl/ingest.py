"""Crawl-record readers (WARC subset, JSONL) and deterministic sharding.

The WARC reader handles the read-only subset a crawl consumer needs:
``WARC-Type: response`` records whose HTTP payload is ``text/html``, with
optional one-gzip-member-per-record compression. It is a streaming parser;
records are yielded as they complete and never buffered whole-file.

Conservation holds for every reader run:
``records_in == yielded + skipped + errors``.
"""

from __future__ import annotations

import gzip
import io
import json
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator

from .hashing import fnv1a64
from .records import CrawlRecord, RecordError, normalize_timestamp, validate_url

_CRLF = b"\r\n"
_HEADER_END = b"\r\n\r\n"
_WARC_MAGIC = b"WARC/1."
_GZIP_MAGIC = b"\x1f\x8b"


class TruncatedStreamError(RuntimeError):
    """The stream ended mid-record; carries the byte offset of the record."""

    def __init__(self, offset: int, detail: str):
        super().__init__(f"truncated WARC record at offset {offset}: {detail}")
        self.offset = offset


@dataclass
class ReaderStats:
    """Counters for one reader run, plus the record-level error log."""

    records_in: int = 0
    yielded: int = 0
    skipped_non_response: int = 0
    skipped_non_html: int = 0
    errors: list[dict] = field(default_factory=list)

    @property
    def error_count(self) -> int:
        return len(self.errors)

    @property
    def skipped(self) -> int:
        return self.skipped_non_response + self.skipped_non_html

    def check_conservation(self) -> None:
        assert self.records_in == self.yielded + self.skipped + self.error_count

    def drops_by_reason(self) -> dict[str, int]:
        out: dict[str, int] = {}
        if self.skipped_non_response:
            out["non_response"] = self.skipped_non_response
        if self.skipped_non_html:
            out["non_html"] = self.skipped_non_html
        if self.errors:
            out["read_error"] = len(self.errors)
        return out


class _PrefixedStream(io.RawIOBase):
    """Replays already-consumed prefix bytes ahead of the wrapped stream."""

    def __init__(self, prefix: bytes, stream: BinaryIO):
        self._prefix = prefix
        self._stream = stream

    def readable(self) -> bool:
        return True

    def read(self, n: int = -1) -> bytes:
        if self._prefix:
            if n < 0 or n >= len(self._prefix):
                out, self._prefix = self._prefix, b""
                rest = self._stream.read(-1 if n < 0 else n - len(out))
                return out + rest
            out, self._prefix = self._prefix[:n], self._prefix[n:]
            return out
        return self._stream.read(n)


class _OffsetReader:
    """Buffered reader over a byte stream that tracks the absolute offset."""

    def __init__(self, stream: BinaryIO, chunk_size: int = 1 << 16):
        self._stream = stream
        self._chunk = chunk_size
        self._buf = b""
        self.offset = 0  # offset of _buf[0] in the stream

    def _fill(self, want: int) -> None:
        while len(self._buf) < want:
            chunk = self._stream.read(self._chunk)
            if not chunk:
                return
            self._buf += chunk

    def peek(self, n: int) -> bytes:
        self._fill(n)
        return self._buf[:n]

    def read_exact(self, n: int) -> bytes | None:
        """Read exactly n bytes, or None if the stream ends first."""
        self._fill(n)
        if len(self._buf) < n:
            return None
        out, self._buf = self._buf[:n], self._buf[n:]
        self.offset += n
        return out

    def read_until(self, marker: bytes, limit: int = 1 << 20) -> bytes | None:
        """Consume through ``marker``; None if not found within ``limit``."""
        search_from = 0
        while True:
            idx = self._buf.find(marker, search_from)
            if idx >= 0:
                end = idx + len(marker)
                out, self._buf = self._buf[:end], self._buf[end:]
                self.offset += end
                return out
            if len(self._buf) > limit:
                return None
            search_from = max(0, len(self._buf) - len(marker) + 1)
            before = len(self._buf)
            self._fill(len(self._buf) + self._chunk)
            if len(self._buf) == before:
                return None

    def skip_to_magic(self, magic: bytes) -> bool:
        """Drop bytes until ``magic`` starts the buffer. False at EOF."""
        while True:
            idx = self._buf.find(magic)
            if idx >= 0:
                self._buf = self._buf[idx:]
                self.offset += idx
                return True
            keep = max(0, len(self._buf) - len(magic) + 1)
            self.offset += keep
            self._buf = self._buf[keep:]
            before = len(self._buf)
            self._fill(self._chunk)
            if len(self._buf) == before:
                return False

    def at_eof(self) -> bool:
        self._fill(1)
        return not self._buf


def _parse_header_block(block: bytes) -> dict[str, str]:
    """Parse CRLF-separated ``Name: value`` lines (first line excluded)."""
    headers: dict[str, str] = {}
    for line in block.split(_CRLF):
        if not line or b":" not in line:
            continue
        name, _, value = line.partition(b":")
        headers.setdefault(name.strip().decode("latin-1").lower(), value.strip().decode("latin-1"))
    return headers


class WarcReader:
    """Streaming iterator of CrawlRecords over a WARC response subset.

    ``snapshot_id`` is sidecar configuration (CommonCrawl names the snapshot
    in the path, not the record). Record-level problems are logged to
    ``stats.errors`` and the stream continues at the next record boundary; a
    truncated final record raises :class:`TruncatedStreamError` after all
    prior records were yielded.
    """

    def __init__(self, stream: BinaryIO, snapshot_id: str):
        head = stream.read(2)
        rewound = _PrefixedStream(head, stream)
        if head == _GZIP_MAGIC:
            # gzip concatenates members transparently, which covers the
            # one-member-per-record layout CommonCrawl uses
            rewound = gzip.GzipFile(fileobj=rewound)  # type: ignore[assignment]
        self._reader = _OffsetReader(rewound)
        self.snapshot_id = snapshot_id
        self.stats = ReaderStats()

    def __iter__(self) -> Iterator[CrawlRecord]:
        reader = self._reader
        while True:
            if not reader.skip_to_magic(_WARC_MAGIC):
                return
            record_offset = reader.offset
            header_block = reader.read_until(_HEADER_END)
            if header_block is None:
                raise TruncatedStreamError(record_offset, "unterminated record header")
            self.stats.records_in += 1
            headers = _parse_header_block(header_block)
            length_text = headers.get("content-length")
            if length_text is None or not length_text.isdigit():
                self._record_error(record_offset, "missing or malformed Content-Length")
                continue
            payload = reader.read_exact(int(length_text))
            if payload is None:
                raise TruncatedStreamError(record_offset, "payload shorter than Content-Length")
            if headers.get("warc-type") != "response":
                self.stats.skipped_non_response += 1
                continue
            try:
                record = self._build_record(headers, payload, record_offset)
            except RecordError as exc:
                self._record_error(record_offset, str(exc))
                continue
            if record is None:
                self.stats.skipped_non_html += 1
                continue
            self.stats.yielded += 1
            yield record

    def _record_error(self, offset: int, message: str) -> None:
        self.stats.errors.append({"offset": offset, "error": message})

    def _build_record(
        self, headers: dict[str, str], payload: bytes, offset: int
    ) -> CrawlRecord | None:
        http_end = payload.find(_HEADER_END)
        if http_end < 0 or not payload.startswith(b"HTTP/"):
            raise RecordError("response payload is not an HTTP message")
        http_headers = _parse_header_block(payload[:http_end])
        content_type = http_headers.get("content-type", "")
        if not content_type.lower().startswith("text/html"):
            return None
        record_id = headers.get("warc-record-id", "").strip("<>")
        url = headers.get("warc-target-uri", "")
        date = headers.get("warc-date", "")
        if not record_id:
            raise RecordError("missing WARC-Record-ID")
        if not url:
            raise RecordError("missing WARC-Target-URI")
        body = payload[http_end + len(_HEADER_END):]
        return CrawlRecord(
            id=record_id,
            url=validate_url(url),
            snapshot_id=self.snapshot_id,
            fetch_time=normalize_timestamp(date),
            content_type=content_type,
            html=body.decode("utf-8", errors="replace"),
        ).validate()


_JSONL_REQUIRED = ("id", "url", "snapshot", "timestamp", "html")


class JsonlReader:
    """Iterator of CrawlRecords over the desk-scale JSONL fixture format.

    Each line: ``{"id","url","snapshot","timestamp","html"}``. Bad lines are
    logged with their 1-based line number and skipped. ``default_snapshot``
    fills in when a line omits ``snapshot``.
    """

    def __init__(self, stream: BinaryIO, default_snapshot: str | None = None):
        self._stream = stream
        self._default_snapshot = default_snapshot
        self.stats = ReaderStats()

    def __iter__(self) -> Iterator[CrawlRecord]:
        for lineno, raw in enumerate(self._stream, start=1):
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            self.stats.records_in += 1
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                self._line_error(lineno, f"invalid JSON: {exc.msg}")
                continue
            try:
                record = self._build_record(obj)
            except RecordError as exc:
                self._line_error(lineno, str(exc))
                continue
            self.stats.yielded += 1
            yield record

    def _line_error(self, lineno: int, message: str) -> None:
        self.stats.errors.append({"line": lineno, "error": message})

    def _build_record(self, obj: dict) -> CrawlRecord:
        if not isinstance(obj, dict):
            raise RecordError("line is not a JSON object")
        missing = [k for k in _JSONL_REQUIRED if k not in obj and k != "snapshot"]
        if missing:
            raise RecordError(f"missing required key(s): {', '.join(missing)}")
        snapshot = obj.get("snapshot") or self._default_snapshot
        if not snapshot:
            raise RecordError("missing required key(s): snapshot (and no --snapshot fallback)")
        return CrawlRecord(
            id=str(obj["id"]),
            url=str(obj["url"]),
            snapshot_id=str(snapshot),
            fetch_time=normalize_timestamp(str(obj["timestamp"])),
            content_type="text/html",
            html=str(obj["html"]),
        ).validate()


def shard_index(record_id: str, n_shards: int) -> int:
    """Deterministic shard assignment by stable hash of the record id."""
    if n_shards < 1:
        raise ValueError("n_shards must be >= 1")
    return fnv1a64(record_id) % n_shards


def shard(records, n_shards: int) -> list[list[CrawlRecord]]:
    """Split records into ``n_shards`` sequences; union equals the input."""
    if n_shards < 1:
        raise ValueError("n_shards must be >= 1")
    shards: list[list[CrawlRecord]] = [[] for _ in range(n_shards)]
    for record in records:
        shards[shard_index(record.id, n_shards)].append(record)
    return shards
