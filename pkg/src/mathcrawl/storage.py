"""Sharded JSONL persistence: the inter-stage directory convention.

A corpus directory holds ``part-NNNNN.jsonl`` files, one document per line.
Stages read shards in filename order and write one output shard per input
shard, so reruns are byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator

from .records import InterleavedDoc

SHARD_PATTERN = "part-*.jsonl"


def shard_path(directory: str | Path, index: int) -> Path:
    return Path(directory) / f"part-{index:05d}.jsonl"


def list_shards(directory: str | Path) -> list[Path]:
    return sorted(Path(directory).glob(SHARD_PATTERN))


def write_shard(path: str | Path, docs: Iterable[InterleavedDoc]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(doc.to_json() + "\n")
            count += 1
    return count


def read_shard(path: str | Path) -> Iterator[InterleavedDoc]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield InterleavedDoc.from_json(line)


def iter_corpus(directory: str | Path) -> Iterator[tuple[int, InterleavedDoc]]:
    """Yield (shard_index, doc) over all shards in filename order."""
    for path in list_shards(directory):
        index = int(path.stem.split("-")[1])
        for doc in read_shard(path):
            yield index, doc


def read_corpus(directory: str | Path) -> list[InterleavedDoc]:
    return [doc for _, doc in iter_corpus(directory)]


def write_corpus(directory: str | Path, sharded: dict[int, list[InterleavedDoc]]) -> int:
    """Write shards (existing directory contents are not cleared)."""
    total = 0
    for index in sorted(sharded):
        total += write_shard(shard_path(directory, index), sharded[index])
    return total


def append_jsonl(path: str | Path, objs: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out
