"""``mathcrawl`` command line: each pipeline stage standalone, plus ``run``.

Exit codes: 0 success, 2 invalid configuration, 3 stage failure.
"""

from __future__ import annotations

import gzip
import json
import logging
import random
import sys
from pathlib import Path

import click

from . import classifier, dedup, images, ingest, langid, mathfilter, pipeline, rules, storage
from .extract import ExtractError, Rejection, extract_document
from .records import CrawlRecord, InterleavedDoc

EXIT_CONFIG = 2
EXIT_STAGE = 3


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable info-level logging.")
def main(verbose: bool) -> None:
    """Curate math-focused multimodal web corpora from crawl records."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _open_input(path: str):
    p = Path(path)
    return gzip.open(p, "rb") if p.suffix == ".gz" else open(p, "rb")


@main.command("ingest")
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["warc", "jsonl"]), required=True)
@click.option("--snapshot", default=None, help="Snapshot id (required for warc).")
@click.option("--shards", default=1, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def ingest_cmd(input_path: str, fmt: str, snapshot: str | None, shards: int, out_dir: str) -> None:
    """Read crawl records and write sharded record JSONL."""
    if fmt == "warc" and not snapshot:
        raise click.UsageError("--snapshot is required for warc input")
    stream = _open_input(input_path)
    reader = (
        ingest.WarcReader(stream, snapshot_id=snapshot)
        if fmt == "warc"
        else ingest.JsonlReader(stream, default_snapshot=snapshot)
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    handles = [open(storage.shard_path(out, i), "w", encoding="utf-8") for i in range(shards)]
    try:
        for record in reader:
            line = json.dumps(
                {
                    "id": record.id,
                    "url": record.url,
                    "snapshot": record.snapshot_id,
                    "timestamp": record.fetch_time,
                    "html": record.html,
                },
                ensure_ascii=False,
            )
            handles[ingest.shard_index(record.id, shards)].write(line + "\n")
    finally:
        for fh in handles:
            fh.close()
        stream.close()
    stats = reader.stats
    click.echo(
        f"ingest: {stats.records_in} in, {stats.yielded} yielded, "
        f"{stats.skipped} skipped, {stats.error_count} errors"
    )


def _load_record(obj: dict) -> CrawlRecord:
    return CrawlRecord(
        id=obj["id"],
        url=obj["url"],
        snapshot_id=obj["snapshot"],
        fetch_time=obj["timestamp"],
        content_type="text/html",
        html=obj["html"],
    )


@main.command("extract")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--keep-rejections", "rejections_path", default=None, type=click.Path())
def extract_cmd(in_dir: str, out_dir: str, rejections_path: str | None) -> None:
    """Convert record shards into interleaved-document shards."""
    total = kept = 0
    rejections: list[dict] = []
    for shard_file in storage.list_shards(in_dir):
        out_path = storage.shard_path(out_dir, int(shard_file.stem.split("-")[1]))
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(shard_file, encoding="utf-8") as fh, open(out_path, "w", encoding="utf-8") as out:
            for line in fh:
                if not line.strip():
                    continue
                total += 1
                record = _load_record(json.loads(line))
                try:
                    result = extract_document(record)
                except ExtractError as exc:
                    rejections.append({"id": record.id, "reason": "parse_error", "error": str(exc)})
                    continue
                if isinstance(result, Rejection):
                    rejections.append(result.to_json_obj())
                    continue
                out.write(result.to_json() + "\n")
                kept += 1
    if rejections_path and rejections:
        storage.append_jsonl(rejections_path, rejections)
    click.echo(f"extract: {total} in, {kept} out, {total - kept} rejected")


def _gate_over_corpus(in_dir: str, out_dir: str, drop_log: str, per_doc) -> tuple[int, int]:
    total = kept = 0
    drops: list[dict] = []
    for shard_file in storage.list_shards(in_dir):
        out_path = storage.shard_path(out_dir, int(shard_file.stem.split("-")[1]))
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", encoding="utf-8") as out:
            for doc in storage.read_shard(shard_file):
                total += 1
                kept_doc, drop = per_doc(doc)
                if kept_doc is not None:
                    out.write(kept_doc.to_json() + "\n")
                    kept += 1
                else:
                    drops.append(drop)
    if drops:
        storage.append_jsonl(drop_log, drops)
    return total, kept


@main.command("langid")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--drop-log", required=True, type=click.Path())
@click.option("--min-prob", default=0.65, show_default=True, type=float)
def langid_cmd(model_path: str, in_dir: str, out_dir: str, drop_log: str, min_prob: float) -> None:
    """Language gate: keep allowed-language documents above --min-prob."""
    model = classifier.load(model_path)
    cfg = langid.LangGateConfig(min_prob=min_prob).validate()

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

    total, kept = _gate_over_corpus(in_dir, out_dir, drop_log, per_doc)
    click.echo(f"langid: {total} in, {kept} kept")


@main.command("math-gate")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--threshold", required=True, type=float)
@click.option("--stage", type=click.Choice(["recall", "precision"]), required=True)
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--drop-log", required=True, type=click.Path())
def math_gate_cmd(
    model_path: str, threshold: float, stage: str, in_dir: str, out_dir: str, drop_log: str
) -> None:
    """Math-content gate at --threshold; records scores on every doc."""
    model = classifier.load(model_path)
    stage_name = f"math_{stage}"

    def per_doc(doc: InterleavedDoc):
        decision = mathfilter.math_gate(doc, model, threshold, stage_name)
        if decision.keep:
            return doc, None
        return None, {"id": doc.id, "reason": decision.reason, "score": decision.score}

    total, kept = _gate_over_corpus(in_dir, out_dir, drop_log, per_doc)
    click.echo(f"math-gate[{stage}]: {total} in, {kept} kept")


@main.command("llm-labels")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--cutoff", default=6, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def llm_labels_cmd(in_path: str, cutoff: int, out_path: str) -> None:
    """Select positive training texts from an LLM score file."""
    with open(in_path, encoding="utf-8") as fh:
        result = mathfilter.ingest_llm_scores(fh, cutoff=cutoff)
    with open(out_path, "w", encoding="utf-8") as out:
        for text in result.positives:
            out.write(json.dumps({"text": text}, ensure_ascii=False) + "\n")
    click.echo(
        f"llm-labels: {len(result.positives)} positives, "
        f"{result.rejected_count} below cutoff, {result.error_count} errors"
    )


def _read_text_dir(directory: Path) -> list[str]:
    texts = []
    for path in sorted(directory.glob("*.txt")):
        texts.append(path.read_text(encoding="utf-8"))
    for path in sorted(directory.glob("*.jsonl")):
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    texts.append(obj["text"] if isinstance(obj, dict) else str(obj))
    return texts


@main.command("clf-train")
@click.option("--task", type=click.Choice(["langid", "math"]), required=True)
@click.option("--pos", "pos_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--neg", "neg_dir", default=None, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--epochs", default=5, show_default=True, type=int)
@click.option("--lr", default=0.1, show_default=True, type=float)
@click.option("--dim", default=16, show_default=True, type=int)
@click.option("--buckets", default=1 << 21, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
def clf_train_cmd(task, pos_dir, neg_dir, out_path, epochs, lr, dim, buckets, seed) -> None:
    """Train a classifier.

    For --task math, --pos and --neg are directories of *.txt / *.jsonl
    documents. For --task langid, --pos is a directory with one subdirectory
    per language label (en/ zh/ other/) and --neg must be omitted.
    """
    cfg = classifier.TrainConfig(epochs=epochs, lr0=lr, seed=seed, n_buckets=buckets, dim=dim)
    if task == "math":
        if not neg_dir:
            raise click.UsageError("--neg is required for --task math")
        examples = []
        for text in _read_text_dir(Path(pos_dir)):
            tokens = mathfilter.normalize_for_classifier(text)
            examples.append((mathfilter.featurize_math(tokens), mathfilter.MATH_LABEL))
        for text in _read_text_dir(Path(neg_dir)):
            tokens = mathfilter.normalize_for_classifier(mathfilter.strip_image_urls(text))
            examples.append((mathfilter.featurize_math(tokens), mathfilter.NEGATIVE_LABEL))
        random.Random(seed).shuffle(examples)
        model = classifier.train(
            examples, cfg, mathfilter.FEATURIZER_ID,
            labels=[mathfilter.MATH_LABEL, mathfilter.NEGATIVE_LABEL],
        )
    else:
        if neg_dir:
            raise click.UsageError("--neg does not apply to --task langid")
        label_dirs = sorted(p for p in Path(pos_dir).iterdir() if p.is_dir())
        if len(label_dirs) < 2:
            raise click.UsageError("--pos must contain one subdirectory per language label")
        examples = []
        for label_dir in label_dirs:
            for text in _read_text_dir(label_dir):
                examples.append((langid.featurize_lang(text), label_dir.name))
        random.Random(seed).shuffle(examples)
        model = classifier.train(
            examples, cfg, langid.FEATURIZER_ID, labels=[d.name for d in label_dirs]
        )
    classifier.save(model, out_path)
    click.echo(f"clf-train: saved {task} model to {out_path} (labels: {', '.join(model.labels)})")


@main.command("dedup-content")
@click.option("--scope", type=click.Choice(["snapshot", "neighbors"]), required=True)
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--drop-log", required=True, type=click.Path())
@click.option("--shingle-k", default=5, show_default=True, type=int)
@click.option("--nperm", default=112, show_default=True, type=int)
@click.option("--bands", default=14, show_default=True, type=int)
@click.option("--rows", default=8, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
def dedup_content_cmd(scope, in_dir, out_dir, drop_log, shingle_k, nperm, bands, rows, seed):
    """MinHash content dedup within a snapshot or across a neighbor pair."""
    params = dedup.MinHashParams(
        shingle_k=shingle_k, n_perm=nperm, bands=bands, rows=rows, seed=seed
    ).validate()
    policy = dedup.DedupPolicy(
        scope=dedup.WITHIN_SNAPSHOT if scope == "snapshot" else dedup.NEIGHBOR_PAIRS
    )
    located = list(storage.iter_corpus(in_dir))
    kept, drops = dedup.dedup_pass([doc for _, doc in located], params, policy)
    kept_ids = {d.id for d in kept}
    sharded: dict[int, list[InterleavedDoc]] = {}
    for path in storage.list_shards(in_dir):
        sharded[int(path.stem.split("-")[1])] = []
    for idx, doc in located:
        if doc.id in kept_ids:
            sharded.setdefault(idx, []).append(doc)
    storage.write_corpus(out_dir, sharded)
    if drops:
        storage.append_jsonl(
            drop_log,
            (
                {"id": d.dropped_id, "reason": d.reason, "kept_id": d.kept_id, "evidence": d.evidence}
                for d in drops
            ),
        )
    click.echo(f"dedup-content[{scope}]: {len(located)} in, {len(kept)} kept")


@main.command("dedup-url")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--drop-log", required=True, type=click.Path())
def dedup_url_cmd(in_dir, out_dir, drop_log):
    """Exact URL dedup within same-year snapshots, keeping the newer copy."""
    located = list(storage.iter_corpus(in_dir))
    kept, drops = dedup.url_dedup([doc for _, doc in located])
    kept_ids = {d.id for d in kept}
    sharded: dict[int, list[InterleavedDoc]] = {}
    for path in storage.list_shards(in_dir):
        sharded[int(path.stem.split("-")[1])] = []
    for idx, doc in located:
        if doc.id in kept_ids:
            sharded.setdefault(idx, []).append(doc)
    storage.write_corpus(out_dir, sharded)
    if drops:
        storage.append_jsonl(
            drop_log,
            (
                {"id": d.dropped_id, "reason": d.reason, "kept_id": d.kept_id, "evidence": d.evidence}
                for d in drops
            ),
        )
    click.echo(f"dedup-url: {len(located)} in, {len(kept)} kept")


@main.command("rules")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--nsfw-list", "nsfw_list", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--drop-log", required=True, type=click.Path())
@click.option("--lorem-chars", default=500, show_default=True, type=int)
@click.option("--punct-max", default=0.3, show_default=True, type=float)
def rules_cmd(in_dir, out_dir, nsfw_list, drop_log, lorem_chars, punct_max):
    """Apply the four rule filters (lorem, punctuation, nsfw, unicode)."""
    try:
        cfg = rules.RuleConfig.from_wordlist_path(
            nsfw_list, lorem_short_chars=lorem_chars, punct_ratio_max=punct_max
        )
    except rules.WordlistError as exc:
        raise click.ClickException(str(exc)) from exc

    def per_doc(doc: InterleavedDoc):
        decision = rules.apply_rules(doc, cfg)
        if decision.keep:
            return doc, None
        return None, {"id": doc.id, "reason": decision.rule}

    total, kept = _gate_over_corpus(in_dir, out_dir, drop_log, per_doc)
    click.echo(f"rules: {total} in, {kept} kept")


@main.command("images-filter")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--stats-out", required=True, type=click.Path())
@click.option("--manifest-out", default=None, type=click.Path())
@click.option("--max-url-freq", default=10, show_default=True, type=int)
@click.option("--max-images-per-doc", default=100, show_default=True, type=int)
@click.option("--require-https/--no-require-https", default=True, show_default=True)
@click.option("--freq-unit", type=click.Choice(["slots", "docs"]), default="slots", show_default=True)
def images_filter_cmd(
    in_dir, out_dir, stats_out, manifest_out, max_url_freq, max_images_per_doc, require_https, freq_unit
):
    """Filter image URLs and optionally emit the download manifest."""
    cfg = images.ImageFilterConfig(
        max_url_freq=max_url_freq,
        max_images_per_doc=max_images_per_doc,
        require_https=require_https,
        freq_count_unit=freq_unit,
    ).validate()
    located = list(storage.iter_corpus(in_dir))
    stats = images.url_stats((doc for _, doc in located), unit=cfg.freq_count_unit)
    Path(stats_out).parent.mkdir(parents=True, exist_ok=True)
    with open(stats_out, "w", encoding="utf-8") as fh:
        json.dump(dict(sorted(stats.items())), fh, ensure_ascii=False, indent=2)
    sharded: dict[int, list[InterleavedDoc]] = {}
    for path in storage.list_shards(in_dir):
        sharded[int(path.stem.split("-")[1])] = []
    removed = 0
    filtered_docs: list[InterleavedDoc] = []
    for idx, doc in located:
        filtered, removals = images.filter_image_urls(doc, stats, cfg)
        removed += len(removals)
        if filtered.texts:
            sharded.setdefault(idx, []).append(filtered)
            filtered_docs.append(filtered)
    storage.write_corpus(out_dir, sharded)
    if manifest_out:
        images.save_manifest(manifest_out, images.build_manifest(filtered_docs))
    click.echo(f"images-filter: {len(located)} docs, {removed} slots removed")


@main.command("images-download")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--concurrency", default=4, show_default=True, type=int)
@click.option("--per-host", default=2, show_default=True, type=int)
@click.option("--timeout", default=10.0, show_default=True, type=float)
@click.option("--max-bytes", default=10 * 1024 * 1024, show_default=True, type=int)
@click.option("--retries", default=1, show_default=True, type=int)
def images_download_cmd(manifest_path, out_dir, concurrency, per_host, timeout, max_bytes, retries):
    """Download manifest URLs into content-addressed storage."""
    opts = images.DownloadOptions(
        concurrency=concurrency,
        per_host_limit=per_host,
        timeout=timeout,
        max_bytes=max_bytes,
        retries=retries,
    ).validate()
    entries = images.load_manifest(manifest_path)
    updated = images.download(entries, out_dir, opts)
    images.save_manifest(manifest_path, updated)
    ok = sum(1 for e in updated if e.status == images.STATUS_OK)
    click.echo(f"images-download: {ok}/{len(updated)} ok")


@main.command("images-reintegrate")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def images_reintegrate_cmd(in_dir, manifest_path, out_dir):
    """Attach download results to image slots."""
    located = list(storage.iter_corpus(in_dir))
    manifest = images.load_manifest(manifest_path)
    try:
        merged = images.reintegrate([doc for _, doc in located], manifest)
    except images.ManifestError as exc:
        raise click.ClickException(str(exc)) from exc
    sharded: dict[int, list[InterleavedDoc]] = {}
    for path in storage.list_shards(in_dir):
        sharded[int(path.stem.split("-")[1])] = []
    for (idx, _), doc in zip(located, merged):
        sharded.setdefault(idx, []).append(doc)
    storage.write_corpus(out_dir, sharded)
    click.echo(f"images-reintegrate: {len(merged)} docs")


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--stages", default=None, help="Comma-separated optional stages to enable (others off).")
@click.option("--dry-run", is_flag=True, help="Validate the config and print the plan.")
def run_cmd(config_path: str, stages: str | None, dry_run: bool) -> None:
    """Run the full pipeline from a TOML config."""
    try:
        config = pipeline.load_config(config_path)
    except pipeline.ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if stages is not None:
        wanted = {s.strip() for s in stages.split(",") if s.strip()}
        unknown = wanted - set(pipeline.STAGE_ORDER)
        if unknown:
            click.echo(f"config error: unknown stages {sorted(unknown)}", err=True)
            sys.exit(EXIT_CONFIG)
        for name in pipeline.STAGE_ORDER:
            if name in ("ingest", "extract"):
                continue
            config.stages.setdefault(name, {})["enabled"] = name in wanted
    violations = pipeline.validate(config)
    if violations:
        for v in violations:
            click.echo(f"config violation: {v}", err=True)
        sys.exit(EXIT_CONFIG)
    if dry_run:
        enabled = [s for s in pipeline.STAGE_ORDER if config.stage_enabled(s)]
        click.echo("config ok; stages: " + " -> ".join(enabled))
        return
    try:
        report = pipeline.run(config)
    except pipeline.ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except pipeline.StageFailure as exc:
        click.echo(f"stage failure: {exc}", err=True)
        click.echo(f"partial outputs retained under {config.output_root}/partial/", err=True)
        sys.exit(EXIT_STAGE)
    click.echo(pipeline.format_report(report), nl=False)


@main.command("stats")
@click.option("--run-dir", required=True, type=click.Path(exists=True, file_okay=False))
def stats_cmd(run_dir: str) -> None:
    """Print the funnel table of a finished run."""
    report_path = Path(run_dir) / "report.json"
    if not report_path.is_file():
        raise click.ClickException(f"no report.json under {run_dir}")
    with open(report_path, encoding="utf-8") as fh:
        report = json.load(fh)
    click.echo(pipeline.format_report(report), nl=False)


if __name__ == "__main__":
    main()
