"""Raw reviews to padded index sequences and an embedding matrix."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tensor import DTYPE, glorot_uniform

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
SPLIT_RATIOS = (0.64, 0.16, 0.20)

_EDGE = re.compile(r"^[\W_]+|[\W_]+$")


class DataFormatError(ValueError):
    """A corpus or embedding file could not be parsed."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and strip non-alphanumeric edges.

    Interior punctuation is kept, so ``"It's"`` stays ``"it's"``.
    """
    tokens = []
    for raw in text.lower().split():
        tok = _EDGE.sub("", raw)
        if tok:
            tokens.append(tok)
    return tokens


class Vocabulary:
    """Word to index map. Index 0 is reserved for padding and unknown words."""

    def __init__(self, word_to_index: dict[str, int]):
        indices = sorted(word_to_index.values())
        if indices != list(range(1, len(indices) + 1)):
            raise ValueError("vocabulary indices must be exactly 1..len(vocab)")
        self.word_to_index = dict(word_to_index)

    def __len__(self) -> int:
        return len(self.word_to_index)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.word_to_index == other.word_to_index

    @property
    def size(self) -> int:
        """Number of embedding rows, including the reserved row 0."""
        return len(self.word_to_index) + 1

    def index(self, word: str) -> int:
        return self.word_to_index.get(word, 0)

    def words(self) -> list[str]:
        """Words in index order."""
        return sorted(self.word_to_index, key=self.word_to_index.__getitem__)

    def to_json(self) -> str:
        return json.dumps(self.word_to_index, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        return cls({str(k): int(v) for k, v in json.loads(text).items()})

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def build_vocab(corpora: Iterable[Sequence[str]], max_size: int = 20000) -> Vocabulary:
    """Keep the ``max_size`` most frequent words, ties broken alphabetically."""
    counts = Counter()
    for tokens in corpora:
        counts.update(tokens)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_size]
    return Vocabulary({w: i for i, (w, _) in enumerate(ranked, start=1)})


def encode_pad(tokens: Sequence[str], vocab: Vocabulary, max_len: int = 100) -> np.ndarray:
    """Map tokens to indices, keep the first ``max_len`` and zero-pad the rest."""
    out = np.zeros(max_len, dtype=np.int64)
    ids = [vocab.index(t) for t in tokens[:max_len]]
    out[: len(ids)] = ids
    return out


def encode_batch(docs: Sequence[Sequence[str]], vocab: Vocabulary, max_len: int = 100) -> np.ndarray:
    if not docs:
        return np.zeros((0, max_len), dtype=np.int64)
    return np.stack([encode_pad(d, vocab, max_len) for d in docs])


def load_embeddings(path, vocab: Vocabulary, dim: int = 300) -> np.ndarray:
    """Read a GloVe-style text file into a ``[vocab.size, dim]`` matrix.

    Only words in ``vocab`` are kept. Row 0 and rows of words missing from
    the file stay zero. A line whose vector length is not ``dim`` raises
    ``DataFormatError``.
    """
    matrix = np.zeros((vocab.size, dim), dtype=DTYPE)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise DataFormatError(path, line_no, f"expected a word and {dim} floats, got {len(parts) - 1} values")
            word = parts[0]
            idx = vocab.index(word)
            if idx == 0:
                continue
            try:
                matrix[idx] = np.array(parts[-dim:], dtype=DTYPE)
            except ValueError as exc:
                raise DataFormatError(path, line_no, f"bad float: {exc}") from None
    return matrix


def random_embeddings(vocab: Vocabulary, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform rows standing in for pretrained vectors; row 0 stays zero."""
    matrix = glorot_uniform(rng, vocab.size, dim, (vocab.size, dim))
    matrix[0] = 0.0
    return matrix


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass
class Example:
    id: str
    tokens: list[str]
    label: int


@dataclass
class DomainDataset:
    """Labelled reviews of one domain with train/val/test splits.

    Split access goes through ``split()`` so callers can audit which splits
    were read; see ``reads``.
    """

    domain: str
    examples: list[Example]
    splits: dict[str, list[int]] = field(default_factory=dict)
    reads: Counter = field(default_factory=Counter, repr=False, compare=False)

    def __post_init__(self):
        for ex in self.examples:
            if ex.label not in (0, 1):
                raise ValueError(f"example {ex.id}: label must be 0 or 1, got {ex.label!r}")

    def split(self, name: str) -> list[Example]:
        if name not in self.splits:
            raise KeyError(f"dataset {self.domain!r} has no split {name!r}")
        self.reads[name] += 1
        return [self.examples[i] for i in self.splits[name]]

    def ids(self) -> set[str]:
        return {ex.id for ex in self.examples}

    def labels(self) -> np.ndarray:
        return np.array([ex.label for ex in self.examples], dtype=np.int64)


def _read_jsonl(path, domain: str | None) -> list[Example]:
    examples = []
    prefix = Path(path).stem
    warned = False
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(path, line_no, f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict) or "text" not in obj or "label" not in obj:
                raise DataFormatError(path, line_no, "expected an object with 'text' and 'label'")
            label = obj["label"]
            if isinstance(label, bool) or label not in (0, 1):
                raise DataFormatError(path, line_no, f"label must be 0 or 1, got {label!r}")
            if domain is not None and obj.get("domain", domain) != domain and not warned:
                log.warning("%s:%d: domain %r differs from expected %r", path, line_no, obj.get("domain"), domain)
                warned = True
            ex_id = str(obj.get("id", f"{prefix}:{line_no}"))
            examples.append(Example(ex_id, tokenize(str(obj["text"])), int(label)))
    return examples


def split_dataset(
    examples: Sequence[Example], rng: np.random.Generator, ratios: Sequence[float] = SPLIT_RATIOS
) -> dict[str, list[int]]:
    """Shuffled, stratified train/val/test split.

    Split sizes are ``round(r * n)`` for train and val with the remainder in
    test. Each class is shuffled and spread evenly through one ordering, so
    every prefix of that ordering keeps the class balance.
    """
    n = len(examples)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    if n_train + n_val > n:
        n_val = n - n_train

    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    keys = np.empty(n, dtype=DTYPE)
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(members.size)]
        keys[members] = (np.arange(members.size) + 0.5) / max(members.size, 1)
    # stable sort on key, then class, keeps the ordering deterministic
    order = np.lexsort((labels, keys))
    parts = np.split(order, [n_train, n_train + n_val])
    return {name: sorted(part.tolist()) for name, part in zip(SPLITS, parts)}


def load_dataset(path, domain: str, rng: np.random.Generator | None = None, seed: int = 0) -> DomainDataset:
    """Load a JSON-lines corpus and split it 64/16/20 with stratification."""
    examples = _read_jsonl(path, domain)
    rng = rng if rng is not None else np.random.Generator(np.random.PCG64(seed))
    return DomainDataset(domain, examples, split_dataset(examples, rng))


def load_presplit(train_path, val_path, test_path, domain: str) -> DomainDataset:
    examples: list[Example] = []
    splits = {}
    for name, path in zip(SPLITS, (train_path, val_path, test_path)):
        part = _read_jsonl(path, domain)
        splits[name] = list(range(len(examples), len(examples) + len(part)))
        examples.extend(part)
    return DomainDataset(domain, examples, splits)


def write_jsonl(dataset: DomainDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            obj = {"id": ex.id, "text": " ".join(ex.tokens), "label": ex.label, "domain": dataset.domain}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
