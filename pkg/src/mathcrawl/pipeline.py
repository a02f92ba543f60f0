"""End-to-end orchestration of the curation funnel, plus the funnel report.

Stage order: ingest -> extract -> langid -> math_recall -> dedup_within ->
dedup_neighbors -> url_dedup -> rules -> math_precision -> images_filter ->
manifest [-> download -> reintegrate]. Every stage writes its drop log and a
StageStats row; inter-stage persistence is sharded JSONL directories so any
stage can also be run standalone from the CLI. Reruns with identical config,
inputs, and models produce byte-identical corpus JSONL (downloads aside).
"""

from __future__ import annotations

import gzip
import json
import logging
import os
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import tomli

from . import classifier, dedup, images, ingest, langid, mathfilter, rules, storage
from .extract import ExtractError, Rejection, extract_document
from .records import SNAPSHOT_RE, CrawlRecord, InterleavedDoc

logger = logging.getLogger(__name__)

STAGE_ORDER = [
    "ingest",
    "extract",
    "langid",
    "math_recall",
    "dedup_within",
    "dedup_neighbors",
    "url_dedup",
    "rules",
    "math_precision",
    "images_filter",
    "manifest",
    "download",
    "reintegrate",
]

_OPTIONAL_STAGES = frozenset(STAGE_ORDER) - {"ingest", "extract"}
_ENV_PREFIX = "MATHCRAWL_"
_ENV_SECTIONS = ["input", "output", "models"] + STAGE_ORDER


class ConfigError(ValueError):
    pass


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class InputFile:
    path: str
    snapshot: str | None = None


@dataclass
class PipelineConfig:
    input_format: str = "jsonl"
    input_files: list[InputFile] = field(default_factory=list)
    default_snapshot: str | None = None
    n_shards: int = 4
    output_root: str = "out"
    workers: int = 4
    seed: int = 0
    model_paths: dict[str, str] = field(default_factory=dict)  # langid/math_recall/math_precision
    stages: dict[str, dict] = field(default_factory=dict)  # per-stage settings incl. "enabled"

    def stage_enabled(self, name: str) -> bool:
        if name in ("ingest", "extract"):
            return True
        default = name not in ("download", "reintegrate")
        return bool(self.stages.get(name, {}).get("enabled", default))

    def stage_opt(self, name: str, key: str, default):
        return self.stages.get(name, {}).get(key, default)


def load_config(path: str | Path) -> PipelineConfig:
    """Parse the TOML config and apply MATHCRAWL_<SECTION>_<KEY> overrides."""
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    raw = _apply_env_overrides(raw)

    input_cfg = raw.get("input", {})
    files = [InputFile(path=f["path"], snapshot=f.get("snapshot")) for f in input_cfg.get("files", [])]
    files.extend(InputFile(path=p) for p in input_cfg.get("paths", []))
    return PipelineConfig(
        input_format=input_cfg.get("format", "jsonl"),
        input_files=files,
        default_snapshot=input_cfg.get("snapshot"),
        n_shards=int(input_cfg.get("shards", 4)),
        output_root=raw.get("output", {}).get("root", "out"),
        workers=int(raw.get("workers", 4)),
        seed=int(raw.get("seed", 0)),
        model_paths={k: str(v) for k, v in raw.get("models", {}).items()},
        stages=raw.get("stage", {}),
    )


def _apply_env_overrides(raw: dict) -> dict:
    for name, value in sorted(os.environ.items()):
        if not name.startswith(_ENV_PREFIX):
            continue
        rest = name[len(_ENV_PREFIX):].lower()
        section = max(
            (s for s in _ENV_SECTIONS if rest.startswith(s + "_")), key=len, default=None
        )
        if section is None:
            continue
        key = rest[len(section) + 1 :]
        try:
            parsed = tomli.loads(f"v = {value}")["v"]
        except tomli.TOMLDecodeError:
            parsed = value
        if section in ("input", "output", "models"):
            raw.setdefault(section, {})[key] = parsed
        else:
            raw.setdefault("stage", {}).setdefault(section, {})[key] = parsed
    return raw


def validate(config: PipelineConfig) -> list[str]:
    """Static checks; returns human-readable violations (empty = ok)."""
    violations: list[str] = []
    if config.input_format not in ("warc", "jsonl"):
        violations.append(f"input.format must be warc or jsonl, got {config.input_format!r}")
    if not config.input_files:
        violations.append("input has no files/paths")
    for item in config.input_files:
        if not Path(item.path).is_file():
            violations.append(f"input file does not exist: {item.path}")
        snapshot = item.snapshot or config.default_snapshot
        if config.input_format == "warc" and not snapshot:
            violations.append(f"warc input {item.path} needs a snapshot id")
        if snapshot and not SNAPSHOT_RE.match(snapshot):
            violations.append(f"bad snapshot id {snapshot!r} for {item.path}")
    if config.n_shards < 1:
        violations.append("input.shards must be >= 1")
    if config.workers < 1:
        violations.append("workers must be >= 1")

    for stage_name, model_key, featurizer in (
        ("langid", "langid", langid.FEATURIZER_ID),
        ("math_recall", "math_recall", mathfilter.FEATURIZER_ID),
        ("math_precision", "math_precision", mathfilter.FEATURIZER_ID),
    ):
        if not config.stage_enabled(stage_name):
            continue
        path = config.model_paths.get(model_key)
        if not path:
            violations.append(f"stage {stage_name} enabled but models.{model_key} missing")
            continue
        if not Path(path).is_file():
            violations.append(f"model file does not exist: {path}")
            continue
        try:
            meta = classifier.read_meta(path)
        except classifier.ModelFormatError as exc:
            violations.append(str(exc))
            continue
        if meta.get("featurizer_id") != featurizer:
            violations.append(
                f"model {path} featurizer {meta.get('featurizer_id')!r} "
                f"does not match stage {stage_name} ({featurizer!r})"
            )

    min_prob = config.stage_opt("langid", "min_prob", 0.65)
    if not 0 < float(min_prob) < 1:
        violations.append(f"langid.min_prob must be in (0,1), got {min_prob}")
    for stage_name, default in (("math_recall", 0.4), ("math_precision", 0.5)):
        threshold = config.stage_opt(stage_name, "threshold", default)
        if not 0 < float(threshold) < 1:
            violations.append(f"{stage_name}.threshold must be in (0,1), got {threshold}")

    params = _minhash_params(config)
    if params.bands * params.rows != params.n_perm:
        violations.append(
            f"dedup bands*rows != n_perm ({params.bands}*{params.rows} != {params.n_perm})"
        )
    wordlist = config.stage_opt("rules", "nsfw_wordlist", None)
    if config.stage_enabled("rules") and wordlist:
        try:
            rules.load_wordlist(wordlist)
        except rules.WordlistError as exc:
            violations.append(str(exc))
    return violations


def _minhash_params(config: PipelineConfig) -> dedup.MinHashParams:
    opts = config.stages.get("dedup_within", {})
    return dedup.MinHashParams(
        shingle_k=int(opts.get("shingle_k", 5)),
        n_perm=int(opts.get("n_perm", 112)),
        bands=int(opts.get("bands", 14)),
        rows=int(opts.get("rows", 8)),
        seed=int(opts.get("seed", config.seed)),
    )


@dataclass
class StageStats:
    stage: str
    docs_in: int
    docs_out: int
    drops_by_reason: dict[str, int]
    wall_time: float

    def check_conservation(self) -> None:
        dropped = sum(self.drops_by_reason.values())
        if self.docs_in != self.docs_out + dropped:
            raise AssertionError(
                f"stage {self.stage}: {self.docs_in} != {self.docs_out} + {dropped}"
            )

    def to_json_obj(self) -> dict:
        return {
            "stage": self.stage,
            "docs_in": self.docs_in,
            "docs_out": self.docs_out,
            "drops_by_reason": self.drops_by_reason,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "StageStats":
        return cls(
            stage=obj["stage"],
            docs_in=int(obj["docs_in"]),
            docs_out=int(obj["docs_out"]),
            drops_by_reason={k: int(v) for k, v in obj["drops_by_reason"].items()},
            wall_time=float(obj["wall_time"]),
        )


def funnel_report(stats: Sequence[StageStats]) -> dict:
    """Execution-order rows with per-stage retention percentages."""
    rows = []
    for s in stats:
        retained = 100.0 * s.docs_out / s.docs_in if s.docs_in else None
        row = s.to_json_obj()
        row["retained_pct"] = retained
        rows.append(row)
    return {
        "stages": rows,
        "totals": {
            "docs_in": stats[0].docs_in if stats else 0,
            "docs_out": stats[-1].docs_out if stats else 0,
        },
    }


def format_report(report: dict) -> str:
    if not report["stages"]:
        return "(empty run)\n"
    lines = [f"{'stage':<16}{'in':>10}{'out':>10}{'kept%':>8}  drops"]
    for row in report["stages"]:
        pct = f"{row['retained_pct']:.1f}" if row["retained_pct"] is not None else "-"
        drops = ", ".join(f"{k}={v}" for k, v in row["drops_by_reason"].items()) or "-"
        lines.append(
            f"{row['stage']:<16}{row['docs_in']:>10}{row['docs_out']:>10}{pct:>8}  {drops}"
        )
    totals = report["totals"]
    lines.append(f"total: {totals['docs_in']} -> {totals['docs_out']}")
    return "\n".join(lines) + "\n"


class _Runner:
    """One pipeline execution; stage outputs live under <root>/stages."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.root = Path(config.output_root)
        self.stages_dir = self.root / "stages"
        self.logs_dir = self.root / "logs"
        self.stats: list[StageStats] = []
        self._stage_no = 0

    def stage_dir(self, name: str) -> Path:
        return self.stages_dir / f"{self._stage_no:02d}-{name}"

    def _next_dir(self, name: str) -> Path:
        self._stage_no += 1
        d = self.stage_dir(name)
        d.mkdir(parents=True, exist_ok=True)
        return d

    def drop_log(self, name: str) -> Path:
        return self.logs_dir / f"{name}.jsonl"

    def run(self) -> dict:
        if self.root.exists():
            shutil.rmtree(self.root)
        self.stages_dir.mkdir(parents=True)
        self.logs_dir.mkdir(parents=True)
        current: Path | None = None
        try:
            current = self._run_ingest()
            current = self._run_extract(current)
            if self.config.stage_enabled("langid"):
                current = self._run_langid(current)
            if self.config.stage_enabled("math_recall"):
                current = self._run_math_gate(current, "math_recall", 0.4)
            if self.config.stage_enabled("dedup_within"):
                current = self._run_dedup_within(current)
            if self.config.stage_enabled("dedup_neighbors"):
                current = self._run_dedup_neighbors(current)
            if self.config.stage_enabled("url_dedup"):
                current = self._run_url_dedup(current)
            if self.config.stage_enabled("rules"):
                current = self._run_rules(current)
            if self.config.stage_enabled("math_precision"):
                current = self._run_math_gate(current, "math_precision", 0.5)
            if self.config.stage_enabled("images_filter"):
                current = self._run_images_filter(current)
            manifest_path = None
            if self.config.stage_enabled("manifest"):
                manifest_path = self._run_manifest(current)
            if manifest_path and self.config.stage_enabled("download"):
                self._run_download(current, manifest_path)
                if self.config.stage_enabled("reintegrate"):
                    current = self._run_reintegrate(current, manifest_path)
        except StageFailure:
            self._retain_partial()
            raise
        except Exception as exc:  # pragma: no cover - safety net
            self._retain_partial()
            raise StageFailure("unknown", exc) from exc

        corpus_dir = self.root / "corpus"
        shutil.copytree(current, corpus_dir)
        for s in self.stats:
            s.check_conservation()
        report = funnel_report(self.stats)
        with open(self.root / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, ensure_ascii=False, indent=2)
            fh.write("\n")
        return report

    def _retain_partial(self) -> None:
        partial = self.root / "partial"
        if partial.exists():
            shutil.rmtree(partial)
        if self.stages_dir.exists():
            shutil.move(str(self.stages_dir), str(partial))

    def _timed(self, name: str, fn: Callable[[], tuple[int, int, dict[str, int]]]) -> None:
        start = time.perf_counter()
        try:
            docs_in, docs_out, drops = fn()
        except StageFailure:
            raise
        except Exception as exc:
            raise StageFailure(name, exc) from exc
        elapsed = time.perf_counter() - start
        logger.info("stage %s: %d -> %d docs in %.2fs", name, docs_in, docs_out, elapsed)
        self.stats.append(
            StageStats(
                stage=name,
                docs_in=docs_in,
                docs_out=docs_out,
                drops_by_reason=drops,
                wall_time=elapsed,
            )
        )

    # ---- stages -----------------------------------------------------------

    def _run_ingest(self) -> Path:
        out_dir = self._next_dir("ingest")

        def go() -> tuple[int, int, dict[str, int]]:
            shards: dict[int, list[CrawlRecord]] = {i: [] for i in range(self.config.n_shards)}
            drops: dict[str, int] = {}
            total_in = 0
            seen_ids: set[str] = set()
            duplicate_ids = 0
            for item in self.config.input_files:
                reader = _open_reader(item, self.config)
                for record in reader:
                    if record.id in seen_ids:
                        duplicate_ids += 1
                        continue
                    seen_ids.add(record.id)
                    shards[ingest.shard_index(record.id, self.config.n_shards)].append(record)
                stats = reader.stats
                total_in += stats.records_in
                for reason, count in stats.drops_by_reason().items():
                    drops[reason] = drops.get(reason, 0) + count
                if stats.errors:
                    storage.append_jsonl(
                        self.drop_log("ingest"),
                        ({"stage": "ingest", "reason": "read_error", **e} for e in stats.errors),
                    )
            if duplicate_ids:
                drops["duplicate_id"] = duplicate_ids
            yielded = 0
            for index in range(self.config.n_shards):
                with open(storage.shard_path(out_dir, index), "w", encoding="utf-8") as fh:
                    for record in shards[index]:
                        fh.write(_record_json(record) + "\n")
                        yielded += 1
            return total_in, yielded, drops

        self._timed("ingest", go)
        return out_dir

    def _run_extract(self, in_dir: Path) -> Path:
        out_dir = self._next_dir("extract")

        def go() -> tuple[int, int, dict[str, int]]:
            paths = storage.list_shards(in_dir)
            results = self._map_shards(_extract_shard, [(p, out_dir) for p in paths])
            return self._fold_per_doc("extract", results)

        self._timed("extract", go)
        return out_dir

    def _run_langid(self, in_dir: Path) -> Path:
        out_dir = self._next_dir("langid")

        def make_per_doc():
            model = classifier.load(self.config.model_paths["langid"])
            cfg = langid.LangGateConfig(
                allowed=frozenset(self.config.stage_opt("langid", "allowed", ["en", "zh"])),
                min_prob=float(self.config.stage_opt("langid", "min_prob", 0.65)),
            ).validate()

            def per_doc(doc: InterleavedDoc):
                decision = langid.language_gate(doc, model, cfg)
                if decision.keep:
                    return doc, None
                return None, {
                    "id": doc.id,
                    "reason": decision.reason,
                    "predicted": decision.predicted,
                    "prob": decision.prob,
                }

            return per_doc

        self._run_per_doc_stage("langid", in_dir, out_dir, make_per_doc)
        return out_dir

    def _run_math_gate(self, in_dir: Path, stage_name: str, default_threshold: float) -> Path:
        out_dir = self._next_dir(stage_name)

        def make_per_doc():
            model = classifier.load(self.config.model_paths[stage_name])
            threshold = float(self.config.stage_opt(stage_name, "threshold", default_threshold))

            def per_doc(doc: InterleavedDoc):
                decision = mathfilter.math_gate(doc, model, threshold, stage_name)
                if decision.keep:
                    return doc, None
                return None, {"id": doc.id, "reason": decision.reason, "score": decision.score}

            return per_doc

        self._run_per_doc_stage(stage_name, in_dir, out_dir, make_per_doc)
        return out_dir

    def _run_rules(self, in_dir: Path) -> Path:
        out_dir = self._next_dir("rules")

        def make_per_doc():
            cfg = rules.RuleConfig.from_wordlist_path(
                self.config.stage_opt("rules", "nsfw_wordlist", None),
                lorem_short_chars=int(self.config.stage_opt("rules", "lorem_short_chars", 500)),
                punct_ratio_max=float(self.config.stage_opt("rules", "punct_ratio_max", 0.3)),
            )

            def per_doc(doc: InterleavedDoc):
                decision = rules.apply_rules(doc, cfg)
                if decision.keep:
                    return doc, None
                return None, {"id": doc.id, "reason": decision.rule}

            return per_doc

        self._run_per_doc_stage("rules", in_dir, out_dir, make_per_doc)
        return out_dir

    def _run_per_doc_stage(self, name: str, in_dir: Path, out_dir: Path, make_per_doc) -> None:
        def go() -> tuple[int, int, dict[str, int]]:
            per_doc = make_per_doc()
            paths = storage.list_shards(in_dir)
            jobs = [(p, out_dir, per_doc) for p in paths]
            results = self._map_shards(_per_doc_shard, jobs)
            return self._fold_per_doc(name, results)

        self._timed(name, go)

    def _fold_per_doc(self, name: str, results) -> tuple[int, int, dict[str, int]]:
        docs_in = docs_out = 0
        drops: dict[str, int] = {}
        for shard_in, shard_out, drop_records in results:
            docs_in += shard_in
            docs_out += shard_out
            for rec in drop_records:
                drops[rec["reason"]] = drops.get(rec["reason"], 0) + 1
            if drop_records:
                storage.append_jsonl(
                    self.drop_log(name), ({"stage": name, **r} for r in drop_records)
                )
        return docs_in, docs_out, drops

    def _map_shards(self, fn, jobs):
        if self.config.workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                return list(pool.map(lambda args: fn(*args), jobs))
        return [fn(*args) for args in jobs]

    def _run_dedup_within(self, in_dir: Path) -> Path:
        out_dir = self._next_dir("dedup_within")
        params = _minhash_params(self.config)

        def go():
            located = list(storage.iter_corpus(in_dir))
            by_snapshot: dict[str, list[tuple[int, InterleavedDoc]]] = {}
            for shard_idx, doc in located:
                by_snapshot.setdefault(doc.snapshot_id, []).append((shard_idx, doc))
            survivors: list[tuple[int, InterleavedDoc]] = []
            all_drops: list[dict] = []
            for snapshot in sorted(by_snapshot):
                group = by_snapshot[snapshot]
                kept, drops = dedup.dedup_pass(
                    [doc for _, doc in group],
                    params,
                    dedup.DedupPolicy(scope=dedup.WITHIN_SNAPSHOT),
                )
                kept_ids = {d.id for d in kept}
                survivors.extend((idx, doc) for idx, doc in group if doc.id in kept_ids)
                all_drops.extend(_dedup_drop_obj(d) for d in drops)
            return self._write_global_stage("dedup_within", in_dir, out_dir, located, survivors, all_drops)

        self._timed("dedup_within", go)
        return out_dir

    def _run_dedup_neighbors(self, in_dir: Path) -> Path:
        out_dir = self._next_dir("dedup_neighbors")
        params = _minhash_params(self.config)

        def go():
            located = list(storage.iter_corpus(in_dir))
            alive: dict[str, tuple[int, InterleavedDoc]] = {
                doc.id: (idx, doc) for idx, doc in located
            }
            snapshots = sorted({doc.snapshot_id for _, doc in located})
            all_drops: list[dict] = []
            for first, second in zip(snapshots, snapshots[1:]):
                pair_docs = [
                    doc
                    for _, doc in alive.values()
                    if doc.snapshot_id in (first, second)
                ]
                present = {d.snapshot_id for d in pair_docs}
                if len(present) != 2:
                    continue  # one side already empty; nothing to pair
                _, drops = dedup.dedup_pass(
                    pair_docs, params, dedup.DedupPolicy(scope=dedup.NEIGHBOR_PAIRS)
                )
                for d in drops:
                    del alive[d.dropped_id]
                    all_drops.append(_dedup_drop_obj(d))
            survivors = [entry for entry in located if entry[1].id in alive]
            return self._write_global_stage(
                "dedup_neighbors", in_dir, out_dir, located, survivors, all_drops
            )

        self._timed("dedup_neighbors", go)
        return out_dir

    def _run_url_dedup(self, in_dir: Path) -> Path:
        out_dir = self._next_dir("url_dedup")

        def go():
            located = list(storage.iter_corpus(in_dir))
            kept, drops = dedup.url_dedup([doc for _, doc in located])
            kept_ids = {d.id for d in kept}
            survivors = [entry for entry in located if entry[1].id in kept_ids]
            drop_objs = [_dedup_drop_obj(d) for d in drops]
            return self._write_global_stage(
                "url_dedup", in_dir, out_dir, located, survivors, drop_objs
            )

        self._timed("url_dedup", go)
        return out_dir

    def _write_global_stage(self, name, in_dir, out_dir, located, survivors, drop_objs):
        sharded: dict[int, list[InterleavedDoc]] = {}
        for path in storage.list_shards(in_dir):  # keep empty shards present
            sharded[int(path.stem.split("-")[1])] = []
        for shard_idx, doc in survivors:
            sharded.setdefault(shard_idx, []).append(doc)
        storage.write_corpus(out_dir, sharded)
        if drop_objs:
            storage.append_jsonl(self.drop_log(name), ({"stage": name, **o} for o in drop_objs))
        drops: dict[str, int] = {}
        for obj in drop_objs:
            drops[obj["reason"]] = drops.get(obj["reason"], 0) + 1
        return len(located), len(survivors), drops

    def _run_images_filter(self, in_dir: Path) -> Path:
        out_dir = self._next_dir("images_filter")
        cfg = images.ImageFilterConfig(
            max_url_freq=int(self.config.stage_opt("images_filter", "max_url_freq", 10)),
            max_images_per_doc=int(
                self.config.stage_opt("images_filter", "max_images_per_doc", 100)
            ),
            require_https=bool(self.config.stage_opt("images_filter", "require_https", True)),
            keyword_blocklist=frozenset(
                self.config.stage_opt(
                    "images_filter", "keyword_blocklist", ["logo", "banner", "avatar", "icon"]
                )
            ),
            freq_count_unit=str(self.config.stage_opt("images_filter", "freq_unit", "slots")),
        ).validate()

        def go():
            located = list(storage.iter_corpus(in_dir))
            stats = images.url_stats((doc for _, doc in located), unit=cfg.freq_count_unit)
            with open(self.root / "url_stats.json", "w", encoding="utf-8") as fh:
                json.dump(dict(sorted(stats.items())), fh, ensure_ascii=False, indent=2)
            survivors: list[tuple[int, InterleavedDoc]] = []
            drop_objs: list[dict] = []
            slot_logs: list[dict] = []
            for shard_idx, doc in located:
                filtered, removals = images.filter_image_urls(doc, stats, cfg)
                slot_logs.extend(
                    {
                        "id": r.doc_id,
                        "reason": f"slot:{r.reason}",
                        "slot": r.slot,
                        "url": r.url,
                    }
                    for r in removals
                )
                if filtered.texts:
                    survivors.append((shard_idx, filtered))
                else:
                    # every slot was a removed image; nothing left to emit
                    drop_objs.append({"id": doc.id, "reason": "empty_after_image_filter"})
            if slot_logs:
                storage.append_jsonl(
                    self.drop_log("images_filter"),
                    ({"stage": "images_filter", **o} for o in slot_logs),
                )
            return self._write_global_stage(
                "images_filter", in_dir, out_dir, located, survivors, drop_objs
            )

        self._timed("images_filter", go)
        return out_dir

    def _run_manifest(self, in_dir: Path) -> Path:
        manifest_path = self.root / "manifest.jsonl"

        def go():
            docs = storage.read_corpus(in_dir)
            entries = images.build_manifest(docs)
            images.save_manifest(manifest_path, entries)
            return len(docs), len(docs), {}

        self._timed("manifest", go)
        return manifest_path

    def _run_download(self, in_dir: Path, manifest_path: Path) -> None:
        opts = images.DownloadOptions(
            concurrency=int(self.config.stage_opt("download", "concurrency", 4)),
            per_host_limit=int(self.config.stage_opt("download", "per_host", 2)),
            timeout=float(self.config.stage_opt("download", "timeout", 10.0)),
            max_bytes=int(self.config.stage_opt("download", "max_bytes", 10 * 1024 * 1024)),
            retries=int(self.config.stage_opt("download", "retries", 1)),
        ).validate()

        def go():
            entries = images.load_manifest(manifest_path)
            updated = images.download(entries, self.root, opts)
            images.save_manifest(manifest_path, updated)
            docs = storage.read_corpus(in_dir)
            return len(docs), len(docs), {}

        self._timed("download", go)

    def _run_reintegrate(self, in_dir: Path, manifest_path: Path) -> Path:
        out_dir = self._next_dir("reintegrate")

        def go():
            located = list(storage.iter_corpus(in_dir))
            manifest = images.load_manifest(manifest_path)
            merged = images.reintegrate([doc for _, doc in located], manifest)
            survivors = [(idx, new) for (idx, _), new in zip(located, merged)]
            return self._write_global_stage(
                "reintegrate", in_dir, out_dir, located, survivors, []
            )

        self._timed("reintegrate", go)
        return out_dir


def _record_json(record: CrawlRecord) -> str:
    return json.dumps(
        {
            "id": record.id,
            "url": record.url,
            "snapshot": record.snapshot_id,
            "timestamp": record.fetch_time,
            "html": record.html,
        },
        ensure_ascii=False,
    )


def _open_reader(item: InputFile, config: PipelineConfig):
    path = Path(item.path)
    snapshot = item.snapshot or config.default_snapshot
    if config.input_format == "warc":
        if not snapshot:
            raise ConfigError(f"warc input {item.path} needs a snapshot id")
        return ingest.WarcReader(open(path, "rb"), snapshot_id=snapshot)
    stream = gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")
    return ingest.JsonlReader(stream, default_snapshot=snapshot)


def _extract_shard(in_path: Path, out_dir: Path):
    docs_in = docs_out = 0
    drop_records: list[dict] = []
    out_path = storage.shard_path(out_dir, int(in_path.stem.split("-")[1]))
    with open(in_path, "r", encoding="utf-8") as fh, open(
        out_path, "w", encoding="utf-8"
    ) as out:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            record = CrawlRecord(
                id=obj["id"],
                url=obj["url"],
                snapshot_id=obj["snapshot"],
                fetch_time=obj["timestamp"],
                content_type="text/html",
                html=obj["html"],
            )
            docs_in += 1
            try:
                result = extract_document(record)
            except ExtractError as exc:
                drop_records.append({"id": record.id, "reason": "parse_error", "error": str(exc)})
                continue
            if isinstance(result, Rejection):
                drop_records.append({"id": record.id, "reason": result.reason})
                continue
            out.write(result.to_json() + "\n")
            docs_out += 1
    return docs_in, docs_out, drop_records


def _per_doc_shard(in_path: Path, out_dir: Path, per_doc):
    docs_in = docs_out = 0
    drop_records: list[dict] = []
    out_path = storage.shard_path(out_dir, int(in_path.stem.split("-")[1]))
    with open(out_path, "w", encoding="utf-8") as out:
        for doc in storage.read_shard(in_path):
            docs_in += 1
            kept, drop = per_doc(doc)
            if kept is not None:
                out.write(kept.to_json() + "\n")
                docs_out += 1
            else:
                drop_records.append(drop)
    return docs_in, docs_out, drop_records


def _dedup_drop_obj(d: dedup.DropRecord) -> dict:
    return {
        "id": d.dropped_id,
        "reason": d.reason,
        "kept_id": d.kept_id,
        "evidence": d.evidence,
    }


def run(config: PipelineConfig) -> dict:
    """Validate then execute the full pipeline; returns the funnel report."""
    violations = validate(config)
    if violations:
        raise ConfigError("; ".join(violations))
    return _Runner(config).run()
