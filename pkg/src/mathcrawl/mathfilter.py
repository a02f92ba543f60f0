"""Token preprocessing and the two math-content gates (recall + precision).

``normalize_for_classifier`` standardizes text before featurization:
lowercase, crude suffix lemmatization, ``<NUM>`` for numerics, dash/underscore
run collapsing, overlong-token drop. The recall gate runs permissively
(default threshold 0.4); the precision gate runs stricter on a classifier
trained from LLM-scored positives (score >= 6), which this module only
ingests from a JSONL score file.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable

from .classifier import LinearTextClassifier
from .records import InterleavedDoc, plain_text

FEATURIZER_ID = "math-word12-v1"
MATH_LABEL = "math"
NEGATIVE_LABEL = "other"

DEFAULT_NUMERIC_PATTERN = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"

_BIGRAM_SEP = "␟"
_DASH_RUN_RE = re.compile(r"-{2,}")
_UNDERSCORE_RUN_RE = re.compile(r"_{2,}")
_IMAGE_URL_RE = re.compile(
    r"https?://\S+\.(?:png|jpe?g|gif|svg|webp)(?:\?\S*)?(?=\s|$)", re.IGNORECASE
)


@dataclass
class MathGateConfig:
    recall_threshold: float = 0.4
    precision_threshold: float = 0.5
    max_token_chars: int = 100
    numeric_pattern: str = DEFAULT_NUMERIC_PATTERN

    def validate(self) -> "MathGateConfig":
        for name in ("recall_threshold", "precision_threshold"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must be in (0, 1)")
        if self.max_token_chars < 1:
            raise ValueError("max_token_chars must be >= 1")
        return self


@dataclass
class ScoredSample:
    text: str
    score: int

    def validate(self) -> "ScoredSample":
        if not 0 <= self.score <= 10:
            raise ValueError(f"score {self.score} outside 0..10")
        return self


def _strip_suffixes(token: str) -> str:
    # crude lemma approximation; ASCII-alphabetic tokens only
    if len(token) > 3 and not token.endswith("ss"):
        if token.endswith("es"):
            token = token[:-2]
        elif token.endswith("s"):
            token = token[:-1]
    if len(token) > 5:
        if token.endswith("ing"):
            token = token[:-3]
        elif token.endswith("ed"):
            token = token[:-2]
    return token


def normalize_for_classifier(text: str, cfg: MathGateConfig | None = None) -> list[str]:
    """Standardize text into classifier tokens.

    Pipeline: drop line breaks, whitespace-split, lowercase, suffix-strip
    (ASCII-alphabetic only), numeric -> <NUM>, collapse -/_ runs, drop
    overlong and empty tokens. Idempotent on its own space-joined output.
    """
    cfg = cfg or MathGateConfig()
    numeric_re = re.compile(f"(?:{cfg.numeric_pattern})$")
    tokens: list[str] = []
    for raw in text.replace("\r", " ").replace("\n", " ").split():
        token = raw.lower()
        if token.isascii() and token.isalpha():
            token = _strip_suffixes(token)
        if numeric_re.fullmatch(token):
            token = "<NUM>"
        else:
            token = _DASH_RUN_RE.sub("-", token)
            token = _UNDERSCORE_RUN_RE.sub("_", token)
            # collapsing can expose a numeric token ("--5" -> "-5"); the
            # <NUM> replacement must stay total over the output
            if numeric_re.fullmatch(token):
                token = "<NUM>"
        if len(token) > cfg.max_token_chars:
            continue
        if token:
            tokens.append(token)
    return tokens


def featurize_math(tokens: list[str]) -> list[str]:
    """Unigrams (``w:``) plus adjacent-pair bigrams (``b:``, U+241F-joined)."""
    features = ["w:" + t for t in tokens]
    features.extend(
        "b:" + tokens[i] + _BIGRAM_SEP + tokens[i + 1] for i in range(len(tokens) - 1)
    )
    return features


def strip_image_urls(text: str) -> str:
    """Delete absolute image URLs, collapsing the surrounding whitespace."""
    if not _IMAGE_URL_RE.search(text):
        return text
    stripped = re.sub(
        r"\s*" + _IMAGE_URL_RE.pattern + r"\s*", " ", text, flags=re.IGNORECASE
    )
    return stripped.strip()


@dataclass
class LlmScoreResult:
    positives: list[str]
    rejected_count: int  # valid lines below the cutoff
    error_count: int
    errors: list[dict] = field(default_factory=list)


def ingest_llm_scores(lines: Iterable[str], cutoff: int = 6) -> LlmScoreResult:
    """Read ``{"text", "score"}`` JSONL; texts scoring >= cutoff are positives.

    Scores outside 0..10 (and malformed lines) are line errors: counted,
    logged, skipped.
    """
    result = LlmScoreResult(positives=[], rejected_count=0, error_count=0)
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            sample = ScoredSample(text=str(obj["text"]), score=int(obj["score"])).validate()
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            result.error_count += 1
            result.errors.append({"line": lineno, "error": str(exc)})
            continue
        if sample.score >= cutoff:
            result.positives.append(sample.text)
        else:
            result.rejected_count += 1
    return result


@dataclass
class MathGateDecision:
    keep: bool
    score: float
    stage: str

    @property
    def reason(self) -> str | None:
        return None if self.keep else "below_threshold"


def score_text(model: LinearTextClassifier, text: str, cfg: MathGateConfig | None = None) -> float:
    model.require_featurizer(FEATURIZER_ID)
    features = featurize_math(normalize_for_classifier(text, cfg))
    return model.prob_of(MATH_LABEL, features)


def math_gate(
    doc: InterleavedDoc,
    model: LinearTextClassifier,
    threshold: float,
    stage_name: str,
    cfg: MathGateConfig | None = None,
) -> MathGateDecision:
    """Score the document's plain text; keep iff score >= threshold.

    The score is recorded under ``doc.scores[stage_name]`` either way so
    drop logs keep it.
    """
    score = score_text(model, plain_text(doc), cfg)
    doc.scores[stage_name] = score
    return MathGateDecision(keep=score >= threshold, score=score, stage=stage_name)
