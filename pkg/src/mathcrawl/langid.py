"""Language identification and the Chinese/English gate.

A three-class (en/zh/other) hashed character-n-gram classifier; the gate
keeps a document iff the predicted language is allowed and the probability
clears ``min_prob``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .classifier import FLAG_EMPTY_INPUT, LinearTextClassifier
from .records import InterleavedDoc, plain_text

FEATURIZER_ID = "langid-char234-v1"
FALLBACK_LABEL = "other"

_PREFIX_CHARS = 2000
_WS_RE = re.compile(r"\s+")


@dataclass
class LangGateConfig:
    allowed: frozenset[str] = field(default_factory=lambda: frozenset({"en", "zh"}))
    min_prob: float = 0.65

    def validate(self) -> "LangGateConfig":
        if not 0 < self.min_prob < 1:
            raise ValueError("min_prob must be in (0, 1)")
        if not self.allowed:
            raise ValueError("allowed language set must be non-empty")
        return self


def featurize_lang(text: str) -> list[str]:
    """Character 2/3/4-grams over the first 2000 chars of normalized text."""
    normalized = _WS_RE.sub(" ", text).strip()[:_PREFIX_CHARS]
    features: list[str] = []
    for n in (2, 3, 4):
        features.extend("c:" + normalized[i : i + n] for i in range(len(normalized) - n + 1))
    return features


def predict_lang(model: LinearTextClassifier, text: str) -> tuple[str, float, str | None]:
    """(language tag, probability, flag); empty text falls back to 'other'."""
    model.require_featurizer(FEATURIZER_ID)
    features = featurize_lang(text)
    if not features:
        return FALLBACK_LABEL, 1.0 / model.n_classes, FLAG_EMPTY_INPUT
    label, prob, flag = model.predict_label(features)
    return label, prob, flag


@dataclass
class GateDecision:
    keep: bool
    reason: str | None  # set on drop
    predicted: str
    prob: float


def language_gate(
    doc: InterleavedDoc, model: LinearTextClassifier, cfg: LangGateConfig
) -> GateDecision:
    """Keep iff predicted language is allowed at sufficient confidence.

    Sets ``doc.language`` on keep; the decision is a pure function of
    (plain text, model, cfg).
    """
    predicted, prob, _ = predict_lang(model, plain_text(doc))
    if predicted not in cfg.allowed:
        return GateDecision(False, "language", predicted, prob)
    if prob < cfg.min_prob:
        return GateDecision(False, "low_confidence", predicted, prob)
    doc.language = predicted
    return GateDecision(True, None, predicted, prob)
