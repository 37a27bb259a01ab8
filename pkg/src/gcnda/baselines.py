"""Bag-of-words and TF-IDF features with a logistic-regression classifier."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .tensor import DTYPE, ShapeError, bce_loss, sigmoid

BOW = "bow"
TFIDF = "tfidf"


@dataclass
class SparseFeatureVector:
    indices: list[int]
    values: list[float]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError("indices must be strictly increasing")

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.indices, self.values))


def bow_vocab(train_docs: Sequence[Sequence[str]], min_freq: int = 5) -> dict[str, int]:
    """Terms whose total count over ``train_docs`` is at least ``min_freq``.

    Indices start at 0 and follow alphabetical order.
    """
    counts = Counter()
    for doc in train_docs:
        counts.update(doc)
    kept = sorted(t for t, c in counts.items() if c >= min_freq)
    return {t: i for i, t in enumerate(kept)}


def bow_features(doc: Sequence[str], vocab: dict[str, int]) -> SparseFeatureVector:
    counts = Counter(vocab[t] for t in doc if t in vocab)
    idx = sorted(counts)
    return SparseFeatureVector(idx, [float(counts[i]) for i in idx])


def document_frequencies(train_docs: Sequence[Sequence[str]], vocab: dict[str, int]) -> np.ndarray:
    df = np.zeros(len(vocab), dtype=DTYPE)
    for doc in train_docs:
        for t in set(doc):
            if t in vocab:
                df[vocab[t]] += 1
    return df


def idf_weights(doc_freqs: np.ndarray, n_docs: int) -> np.ndarray:
    """Smoothed idf: ln((1 + n) / (1 + df)) + 1."""
    return np.log((1.0 + n_docs) / (1.0 + np.asarray(doc_freqs, dtype=DTYPE))) + 1.0


def tfidf_features(doc: Sequence[str], vocab: dict[str, int], doc_freqs: np.ndarray, n_docs: int) -> SparseFeatureVector:
    """Raw term counts times smoothed idf, scaled to unit L2 norm."""
    return _tfidf_from_idf(doc, vocab, idf_weights(doc_freqs, n_docs))


def to_matrix(vectors: Sequence[SparseFeatureVector], dim: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for r, v in enumerate(vectors):
        rows.extend([r] * len(v.indices))
        cols.extend(v.indices)
        vals.extend(v.values)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(vectors), dim), dtype=DTYPE)


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------


@dataclass
class LogRegModel:
    weights: np.ndarray
    bias: float
    feature_kind: str = BOW
    vocab: dict[str, int] = field(default_factory=dict)
    idf: np.ndarray | None = None
    losses: list[float] = field(default_factory=list, repr=False)

    def featurize(self, docs: Sequence[Sequence[str]]) -> sp.csr_matrix:
        if self.feature_kind == BOW:
            vecs = [bow_features(d, self.vocab) for d in docs]
        else:
            vecs = [_tfidf_from_idf(d, self.vocab, self.idf) for d in docs]
        return to_matrix(vecs, len(self.vocab))

    def to_json(self) -> str:
        return json.dumps(
            {
                "feature_kind": self.feature_kind,
                "vocab": self.vocab,
                "weights": self.weights.tolist(),
                "bias": self.bias,
                "idf": None if self.idf is None else self.idf.tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "LogRegModel":
        obj = json.loads(text)
        idf = obj.get("idf")
        return cls(
            np.asarray(obj["weights"], dtype=DTYPE),
            float(obj["bias"]),
            obj["feature_kind"],
            {str(k): int(v) for k, v in obj["vocab"].items()},
            None if idf is None else np.asarray(idf, dtype=DTYPE),
        )


def _tfidf_from_idf(doc, vocab, idf) -> SparseFeatureVector:
    bow = bow_features(doc, vocab)
    if not bow.indices:
        return bow
    vals = np.asarray(bow.values) * idf[bow.indices]
    vals /= math.sqrt(float(vals @ vals))
    return SparseFeatureVector(bow.indices, vals.tolist())


def logreg_fit(
    features,
    labels,
    l2: float = 1e-4,
    epochs: int = 500,
    step: float = 0.1,
) -> LogRegModel:
    """Full-batch gradient descent on mean BCE + l2 * ||w||^2 / 2 (bias unpenalised).

    ``features`` is a dense array or scipy sparse matrix ``[n, V]``. The
    loss before each update is recorded in ``model.losses``.
    """
    y = np.asarray(labels, dtype=DTYPE)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    n, dim = features.shape
    if y.shape != (n,):
        raise ShapeError(f"{n} feature rows but labels have shape {y.shape}")
    w = np.zeros(dim, dtype=DTYPE)
    b = 0.0
    losses = []
    for _ in range(epochs):
        z = np.asarray(features @ w).reshape(-1) + b
        p = sigmoid(z)
        losses.append(bce_loss(p, y) + 0.5 * l2 * float(w @ w))
        err = (p - y) / n
        grad_w = np.asarray(features.T @ err).reshape(-1) + l2 * w
        w -= step * grad_w
        b -= step * float(err.sum())
    return LogRegModel(w, b, losses=losses)


def logreg_logits(model: LogRegModel, features) -> np.ndarray:
    if features.shape[1] != model.weights.shape[0]:
        raise ShapeError(f"features have {features.shape[1]} columns, model expects {model.weights.shape[0]}")
    return np.asarray(features @ model.weights).reshape(-1) + model.bias


def logreg_predict(model: LogRegModel, features) -> np.ndarray:
    """1 iff the logit is >= 0."""
    return (logreg_logits(model, features) >= 0).astype(np.int64)


def fit_baseline(
    kind: str,
    train_docs: Sequence[Sequence[str]],
    labels,
    min_freq: int = 5,
    l2: float = 1e-4,
    epochs: int = 500,
    step: float = 0.1,
) -> LogRegModel:
    """Build the feature space on ``train_docs`` and fit logistic regression."""
    if kind not in (BOW, TFIDF):
        raise ValueError(f"unknown baseline feature kind {kind!r}")
    vocab = bow_vocab(train_docs, min_freq)
    idf = None
    if kind == TFIDF:
        idf = idf_weights(document_frequencies(train_docs, vocab), len(train_docs))
    probe = LogRegModel(np.zeros(len(vocab)), 0.0, kind, vocab, idf)
    fitted = logreg_fit(probe.featurize(train_docs), labels, l2, epochs, step)
    fitted.feature_kind, fitted.vocab, fitted.idf = kind, vocab, idf
    return fitted


def baseline_accuracy(model: LogRegModel, docs: Sequence[Sequence[str]], labels) -> float:
    preds = logreg_predict(model, model.featurize(docs))
    return float(np.mean(preds == np.asarray(labels)))
