"""Hashed-feature linear text classifier (fastText-style supervised model).

Architecture: features hash into ``n_buckets`` embedding rows; the hidden
vector is the mean of the example's rows; a linear layer plus softmax gives
class probabilities. Training is single-threaded SGD over softmax
cross-entropy with a linearly decaying learning rate — deterministic given
(example order, config), which the dedup/rerun guarantees rely on.

Model file layout (magic ``MCLF1``): one header line, one JSON metadata
line, then the raw little-endian float32 ``E`` and ``W`` arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .hashing import feature_bucket

MAGIC = b"MCLF1"

FLAG_EMPTY_INPUT = "empty_input"


class TrainingError(ValueError):
    """The corpus cannot train a classifier (e.g. single label)."""


class ModelFormatError(ValueError):
    """A model file failed magic/size validation on load."""


class FeaturizerMismatchError(ValueError):
    """Model was trained with a different featurizer than the caller's."""


@dataclass
class TrainConfig:
    epochs: int = 5
    lr0: float = 0.1  # decays linearly to 0 over all steps
    seed: int = 0
    n_buckets: int = 1 << 21
    dim: int = 16

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be > 0")
        if self.n_buckets < 1 or self.dim < 1:
            raise ValueError("n_buckets and dim must be >= 1")
        return self


class Prediction(NamedTuple):
    probs: np.ndarray  # float64, sums to 1
    flag: str | None


@dataclass
class LinearTextClassifier:
    n_buckets: int
    dim: int
    labels: list[str]
    featurizer_id: str
    seed: int
    embeddings: np.ndarray  # (n_buckets, dim) float32
    output_weights: np.ndarray  # (dim, n_classes) float32
    epoch_losses: list[float] = field(default_factory=list)  # not persisted

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def bucket_ids(self, features: Sequence[str]) -> np.ndarray:
        return np.array([feature_bucket(f, self.n_buckets) for f in features], dtype=np.int64)

    def predict(self, features: Sequence[str]) -> Prediction:
        """Softmax probabilities over labels; uniform + flag for no features."""
        if len(features) == 0:
            uniform = np.full(self.n_classes, 1.0 / self.n_classes)
            return Prediction(uniform, FLAG_EMPTY_INPUT)
        ids = self.bucket_ids(features)
        hidden = self.embeddings[ids].mean(axis=0, dtype=np.float64)
        logits = hidden @ self.output_weights.astype(np.float64)
        return Prediction(_softmax(logits), None)

    def predict_label(self, features: Sequence[str]) -> tuple[str, float, str | None]:
        probs, flag = self.predict(features)
        best = int(np.argmax(probs))
        return self.labels[best], float(probs[best]), flag

    def prob_of(self, label: str, features: Sequence[str]) -> float:
        return float(self.predict(features).probs[self.labels.index(label)])

    def require_featurizer(self, featurizer_id: str) -> None:
        if self.featurizer_id != featurizer_id:
            raise FeaturizerMismatchError(
                f"model was trained with featurizer {self.featurizer_id!r}, "
                f"caller expects {featurizer_id!r}"
            )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def train(
    examples: Sequence[tuple[Sequence[str], str]],
    cfg: TrainConfig,
    featurizer_id: str,
    labels: Sequence[str] | None = None,
) -> LinearTextClassifier:
    """Train on (feature multiset, label) pairs.

    ``labels`` fixes the class order explicitly; by default it is the sorted
    set of labels present. Deterministic: the seed drives both the embedding
    init and the per-epoch shuffles.
    """
    cfg.validate()
    if not examples:
        raise TrainingError("degenerate corpus: no examples")
    present = sorted({label for _, label in examples})
    if len(present) < 2:
        raise TrainingError("degenerate corpus: fewer than 2 distinct labels")
    label_list = list(labels) if labels is not None else present
    if sorted(set(label_list)) != sorted(label_list) or not set(present) <= set(label_list):
        raise ValueError("labels must be distinct and cover the corpus labels")

    label_index = {label: i for i, label in enumerate(label_list)}
    bucketed: list[np.ndarray] = []
    targets: list[int] = []
    for i, (features, label) in enumerate(examples):
        if len(features) == 0:
            raise ValueError(f"example {i} has no features")
        bucketed.append(
            np.array([feature_bucket(f, cfg.n_buckets) for f in features], dtype=np.int64)
        )
        targets.append(label_index[label])

    rng = np.random.default_rng(cfg.seed)
    bound = 1.0 / cfg.dim
    E = rng.uniform(-bound, bound, size=(cfg.n_buckets, cfg.dim)).astype(np.float32)
    W = np.zeros((cfg.dim, len(label_list)), dtype=np.float32)

    n = len(bucketed)
    total_steps = cfg.epochs * n
    step = 0
    epoch_losses: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for idx in order:
            ids = bucketed[idx]
            target = targets[idx]
            lr = np.float32(cfg.lr0 * (1.0 - step / total_steps))
            step += 1

            hidden = E[ids].mean(axis=0)  # float32
            logits = hidden @ W
            shifted = logits - logits.max()
            exp = np.exp(shifted)
            probs = exp / exp.sum()
            loss_sum += -float(np.log(max(probs[target], 1e-30)))

            grad_logits = probs
            grad_logits[target] -= np.float32(1.0)
            grad_hidden = W @ grad_logits  # uses pre-update W
            W -= lr * np.outer(hidden, grad_logits)
            np.add.at(E, ids, -(lr / np.float32(len(ids))) * grad_hidden)
        epoch_losses.append(loss_sum / n)

    return LinearTextClassifier(
        n_buckets=cfg.n_buckets,
        dim=cfg.dim,
        labels=label_list,
        featurizer_id=featurizer_id,
        seed=cfg.seed,
        embeddings=E,
        output_weights=W,
        epoch_losses=epoch_losses,
    )


def save(model: LinearTextClassifier, path: str | Path) -> None:
    meta = {
        "n_buckets": model.n_buckets,
        "dim": model.dim,
        "n_classes": model.n_classes,
        "labels": model.labels,
        "featurizer_id": model.featurizer_id,
        "seed": model.seed,
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(json.dumps(meta).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(model.embeddings, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(model.output_weights, dtype="<f4").tobytes())


def load(path: str | Path) -> LinearTextClassifier:
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != MAGIC:
            raise ModelFormatError(
                f"bad magic {magic[:8]!r}, expected {MAGIC.decode()!r}: {path}"
            )
        try:
            meta = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ModelFormatError(f"unreadable metadata line: {path}") from exc
        n_buckets, dim = int(meta["n_buckets"]), int(meta["dim"])
        n_classes = int(meta["n_classes"])
        E = _read_array(fh, (n_buckets, dim), "embeddings", path)
        W = _read_array(fh, (dim, n_classes), "output weights", path)
    return LinearTextClassifier(
        n_buckets=n_buckets,
        dim=dim,
        labels=list(meta["labels"]),
        featurizer_id=str(meta["featurizer_id"]),
        seed=int(meta["seed"]),
        embeddings=E,
        output_weights=W,
    )


def read_meta(path: str | Path) -> dict:
    """Read only the header metadata (cheap featurizer/shape checks)."""
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != MAGIC:
            raise ModelFormatError(
                f"bad magic {magic[:8]!r}, expected {MAGIC.decode()!r}: {path}"
            )
        try:
            return json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ModelFormatError(f"unreadable metadata line: {path}") from exc


def _read_array(fh, shape: tuple[int, int], name: str, path) -> np.ndarray:
    expected = shape[0] * shape[1] * 4
    data = fh.read(expected)
    if len(data) != expected:
        raise ModelFormatError(
            f"truncated {name} section in {path}: expected {expected} bytes, got {len(data)}"
        )
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy()
